//! Kron-reduced network model and the nonlinear power-flow injections.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Node classification on the reduced network. SG nodes come first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Sg,
    Gfm,
}

/// Conductance/susceptance matrices of the Kron-reduced network, with the
/// per-node kind tags (SG nodes ordered before GFM nodes).
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedNetwork<T: Scalar> {
    pub conductance: DMatrix<T>,
    pub susceptance: DMatrix<T>,
    pub kinds: Vec<NodeKind>,
}

impl<T: Scalar> ReducedNetwork<T> {
    pub fn new(conductance: DMatrix<T>, susceptance: DMatrix<T>, kinds: Vec<NodeKind>) -> Result<Self> {
        let n = kinds.len();
        if conductance.nrows() != n || conductance.ncols() != n || susceptance.nrows() != n || susceptance.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "network matrices must be {n}x{n} to match the node list"
            )));
        }
        let sym = |m: &DMatrix<T>| (m - m.transpose()).norm() <= crate::scalar::c::<T>(1e-9) * (T::one() + m.norm());
        if !sym(&conductance) || !sym(&susceptance) {
            return Err(Error::DimensionMismatch("G and B must be symmetric".into()));
        }
        // SG nodes first, GFM nodes after.
        let first_gfm = kinds.iter().position(|k| *k == NodeKind::Gfm).unwrap_or(n);
        if kinds[first_gfm..].iter().any(|k| *k == NodeKind::Sg) {
            return Err(Error::DimensionMismatch("node ordering must place all SG nodes before GFM nodes".into()));
        }
        Ok(Self { conductance, susceptance, kinds })
    }

    pub fn node_count(&self) -> usize {
        self.kinds.len()
    }

    pub fn n_sg(&self) -> usize {
        self.kinds.iter().filter(|k| **k == NodeKind::Sg).count()
    }

    pub fn n_gfm(&self) -> usize {
        self.kinds.iter().filter(|k| **k == NodeKind::Gfm).count()
    }
}

/// Schur-complement elimination of zero-injection buses from a full complex
/// admittance matrix. `retained` lists the bus indices kept, in the order they
/// will appear in the reduced network.
pub fn kron_reduce<T: Scalar>(
    full: &DMatrix<Complex<T>>,
    retained: &[usize],
    kinds: Vec<NodeKind>,
) -> Result<ReducedNetwork<T>> {
    let n_full = full.nrows();
    if full.ncols() != n_full {
        return Err(Error::DimensionMismatch("admittance matrix must be square".into()));
    }
    if retained.iter().any(|&i| i >= n_full) {
        return Err(Error::DimensionMismatch("retained bus index out of range".into()));
    }
    if kinds.len() != retained.len() {
        return Err(Error::DimensionMismatch("one node kind per retained bus required".into()));
    }
    let eliminated: Vec<usize> = (0..n_full).filter(|i| !retained.contains(i)).collect();

    let pick = |rows: &[usize], cols: &[usize]| {
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| full[(rows[i], cols[j])])
    };
    let y_rr = pick(retained, retained);
    let y_red = if eliminated.is_empty() {
        y_rr
    } else {
        let y_re = pick(retained, &eliminated);
        let y_er = pick(&eliminated, retained);
        let y_ee = pick(&eliminated, &eliminated);
        let lu = y_ee.lu();
        let solved = lu
            .solve(&y_er)
            .ok_or_else(|| Error::SingularEliminatedBlock { buses: eliminated.clone() })?;
        &y_rr - y_re * solved
    };

    let g = y_red.map(|z| z.re);
    let b = y_red.map(|z| z.im);
    ReducedNetwork::new(g, b, kinds)
}

/// Network active/reactive power injections on the reduced network:
/// `P_ℓ = Σ_k V_ℓ V_k (G_ℓk cos δ_ℓk + B_ℓk sin δ_ℓk)`,
/// `Q_ℓ = Σ_k V_ℓ V_k (G_ℓk sin δ_ℓk − B_ℓk cos δ_ℓk)`.
pub fn pf_injections<T: Scalar>(
    delta: &DVector<T>,
    v: &DVector<T>,
    net: &ReducedNetwork<T>,
) -> Result<(DVector<T>, DVector<T>)> {
    let n = net.node_count();
    if delta.len() != n || v.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "expected {n} angles and voltages, got {} and {}",
            delta.len(),
            v.len()
        )));
    }
    let mut p = DVector::zeros(n);
    let mut q = DVector::zeros(n);
    for l in 0..n {
        let mut pl = T::zero();
        let mut ql = T::zero();
        for k in 0..n {
            let th = delta[l] - delta[k];
            let (s, co) = (th.sin(), th.cos());
            let g = net.conductance[(l, k)];
            let b = net.susceptance[(l, k)];
            let vv = v[l] * v[k];
            pl += vv * (g * co + b * s);
            ql += vv * (g * s - b * co);
        }
        p[l] = pl;
        q[l] = ql;
    }
    Ok((p, q))
}

/// Analytic partial derivatives of the injections, arranged as the nine
/// blocks ∂(P^g, P^f, Q^f)/∂(δ^g, δ^f, V^f). SG reactive rows and SG voltage
/// columns are omitted (SG internal voltages are fixed).
#[derive(Debug, Clone)]
pub struct PfJacobian<T: Scalar> {
    /// Stacked matrix of shape (N_g + 2N_f) × (N_g + 2N_f): rows are
    /// [P^g; P^f; Q^f], columns are [δ^g, δ^f, V^f].
    pub m: DMatrix<T>,
    pub n_sg: usize,
    pub n_gfm: usize,
}

impl<T: Scalar> PfJacobian<T> {
    fn block(&self, r0: usize, rn: usize, c0: usize, cn: usize) -> DMatrix<T> {
        self.m.view((r0, c0), (rn, cn)).into_owned()
    }

    pub fn dp_g_ddelta_g(&self) -> DMatrix<T> {
        self.block(0, self.n_sg, 0, self.n_sg)
    }
    pub fn dp_g_ddelta_f(&self) -> DMatrix<T> {
        self.block(0, self.n_sg, self.n_sg, self.n_gfm)
    }
    pub fn dp_g_dv_f(&self) -> DMatrix<T> {
        self.block(0, self.n_sg, self.n_sg + self.n_gfm, self.n_gfm)
    }
    pub fn dp_f_ddelta_g(&self) -> DMatrix<T> {
        self.block(self.n_sg, self.n_gfm, 0, self.n_sg)
    }
    pub fn dp_f_ddelta_f(&self) -> DMatrix<T> {
        self.block(self.n_sg, self.n_gfm, self.n_sg, self.n_gfm)
    }
    pub fn dp_f_dv_f(&self) -> DMatrix<T> {
        self.block(self.n_sg, self.n_gfm, self.n_sg + self.n_gfm, self.n_gfm)
    }
    pub fn dq_f_ddelta_g(&self) -> DMatrix<T> {
        self.block(self.n_sg + self.n_gfm, self.n_gfm, 0, self.n_sg)
    }
    pub fn dq_f_ddelta_f(&self) -> DMatrix<T> {
        self.block(self.n_sg + self.n_gfm, self.n_gfm, self.n_sg, self.n_gfm)
    }
    pub fn dq_f_dv_f(&self) -> DMatrix<T> {
        self.block(self.n_sg + self.n_gfm, self.n_gfm, self.n_sg + self.n_gfm, self.n_gfm)
    }
}

/// Evaluate the injection Jacobian at an operating point (δ⁰, V⁰).
pub fn pf_jacobian<T: Scalar>(
    delta: &DVector<T>,
    v: &DVector<T>,
    net: &ReducedNetwork<T>,
) -> Result<PfJacobian<T>> {
    let n = net.node_count();
    if delta.len() != n || v.len() != n {
        return Err(Error::DimensionMismatch("operating point size does not match network".into()));
    }
    let n_sg = net.n_sg();
    let n_gfm = net.n_gfm();

    // Full dP/dδ, dP/dV, dQ/dδ, dQ/dV on all nodes; sliced below.
    let mut dp_dd = DMatrix::<T>::zeros(n, n);
    let mut dp_dv = DMatrix::<T>::zeros(n, n);
    let mut dq_dd = DMatrix::<T>::zeros(n, n);
    let mut dq_dv = DMatrix::<T>::zeros(n, n);
    for l in 0..n {
        for k in 0..n {
            let th = delta[l] - delta[k];
            let (s, co) = (th.sin(), th.cos());
            let g = net.conductance[(l, k)];
            let b = net.susceptance[(l, k)];
            if k != l {
                let vv = v[l] * v[k];
                dp_dd[(l, k)] = vv * (g * s - b * co);
                dq_dd[(l, k)] = vv * (-g * co - b * s);
                dp_dd[(l, l)] += vv * (-g * s + b * co);
                dq_dd[(l, l)] += vv * (g * co + b * s);
                dp_dv[(l, k)] = v[l] * (g * co + b * s);
                dq_dv[(l, k)] = v[l] * (g * s - b * co);
                dp_dv[(l, l)] += v[k] * (g * co + b * s);
                dq_dv[(l, l)] += v[k] * (g * s - b * co);
            } else {
                let two = crate::scalar::c::<T>(2.0);
                dp_dv[(l, l)] += two * v[l] * g;
                dq_dv[(l, l)] += -two * v[l] * b;
            }
        }
    }

    // Rows [P^g; P^f; Q^f], columns [δ^g, δ^f, V^f]; GFM nodes are the
    // trailing n_gfm network indices.
    let mut m = DMatrix::<T>::zeros(n_sg + 2 * n_gfm, n_sg + 2 * n_gfm);
    for r in 0..n {
        for cc in 0..n {
            m[(r, cc)] = dp_dd[(r, cc)];
        }
        for j in 0..n_gfm {
            m[(r, n_sg + n_gfm + j)] = dp_dv[(r, n_sg + j)];
        }
    }
    for j in 0..n_gfm {
        let r = n + j;
        let node = n_sg + j;
        for cc in 0..n {
            m[(r, cc)] = dq_dd[(node, cc)];
        }
        for jj in 0..n_gfm {
            m[(r, n_sg + n_gfm + jj)] = dq_dv[(node, n_sg + jj)];
        }
    }
    Ok(PfJacobian { m, n_sg, n_gfm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::c;
    use nalgebra::Complex;

    fn two_node_net() -> ReducedNetwork<f64> {
        let g = DMatrix::zeros(2, 2);
        let b = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]);
        ReducedNetwork::new(g, b, vec![NodeKind::Sg, NodeKind::Gfm]).unwrap()
    }

    #[test]
    fn kron_identity_when_all_retained() {
        let y = DMatrix::from_fn(3, 3, |i, j| Complex::new((i + j) as f64, -((i * j) as f64)));
        let y = (&y + y.transpose()) * Complex::new(0.5, 0.0);
        let red = kron_reduce(&y, &[0, 1, 2], vec![NodeKind::Sg, NodeKind::Sg, NodeKind::Gfm]).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((red.conductance[(i, j)] - y[(i, j)].re).abs() < 1e-14);
                assert!((red.susceptance[(i, j)] - y[(i, j)].im).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn kron_star_elimination() {
        // Star: buses 0 and 1 each tied to center bus 2 by y = -j1 pu.
        // Eliminating the center yields the series equivalent -j0.5 pu.
        let y1 = Complex::new(0.0, -1.0);
        let mut y = DMatrix::<Complex<f64>>::zeros(3, 3);
        y[(0, 0)] = y1;
        y[(1, 1)] = y1;
        y[(2, 2)] = y1 + y1;
        y[(0, 2)] = -y1;
        y[(2, 0)] = -y1;
        y[(1, 2)] = -y1;
        y[(2, 1)] = -y1;
        let red = kron_reduce(&y, &[0, 1], vec![NodeKind::Sg, NodeKind::Sg]).unwrap();
        // Off-diagonal of Ybus is minus the branch admittance.
        assert!((red.susceptance[(0, 1)] - 0.5).abs() < 1e-12);
        assert!((red.susceptance[(0, 0)] + 0.5).abs() < 1e-12);
        assert!(red.conductance.norm() < 1e-12);
    }

    #[test]
    fn kron_disconnected_elimination_leaves_block() {
        let mut y = DMatrix::<Complex<f64>>::zeros(3, 3);
        y[(0, 0)] = Complex::new(1.0, -2.0);
        y[(0, 1)] = Complex::new(-0.5, 1.0);
        y[(1, 0)] = y[(0, 1)];
        y[(1, 1)] = Complex::new(1.0, -2.0);
        y[(2, 2)] = Complex::new(3.0, -1.0); // isolated from 0,1
        let red = kron_reduce(&y, &[0, 1], vec![NodeKind::Sg, NodeKind::Gfm]).unwrap();
        assert!((red.conductance[(0, 1)] + 0.5).abs() < 1e-14);
        assert!((red.susceptance[(0, 0)] + 2.0).abs() < 1e-14);
    }

    #[test]
    fn kron_singular_block_errors() {
        let mut y = DMatrix::<Complex<f64>>::zeros(2, 2);
        y[(0, 0)] = Complex::new(1.0, 0.0);
        // eliminated block (bus 1) is exactly zero
        let err = kron_reduce(&y, &[0], vec![NodeKind::Sg]).unwrap_err();
        match err {
            crate::error::Error::SingularEliminatedBlock { buses } => assert_eq!(buses, vec![1]),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn injections_zero_on_flat_lossless_start() {
        let net = two_node_net();
        let delta = DVector::from_element(2, 0.3);
        let v = DVector::from_vec(vec![1.0, 1.05]);
        let (p, _q) = pf_injections(&delta, &v, &net).unwrap();
        assert!(p.norm() < 1e-14);
    }

    #[test]
    fn injections_two_node_hand_value() {
        let net = two_node_net();
        let delta = DVector::from_vec(vec![0.1, 0.0]);
        let v = DVector::from_vec(vec![1.0, 1.0]);
        let (p, _) = pf_injections(&delta, &v, &net).unwrap();
        assert!((p[0] - 0.1f64.sin()).abs() < 1e-14);
        assert!((p[1] - (-0.1f64).sin()).abs() < 1e-14);
    }

    #[test]
    fn injections_symmetric_under_node_swap() {
        let net = two_node_net();
        let delta = DVector::from_vec(vec![0.2, 0.2]);
        let v = DVector::from_vec(vec![1.0, 1.0]);
        let (p, q) = pf_injections(&delta, &v, &net).unwrap();
        assert!((p[0] - p[1]).abs() < 1e-14);
        assert!((q[0] - q[1]).abs() < 1e-14);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        // Random-ish 4-node lossy network, 2 SG + 2 GFM.
        let gm = DMatrix::from_row_slice(
            4,
            4,
            &[1.1, -0.4, -0.3, -0.2, -0.4, 1.2, -0.5, -0.1, -0.3, -0.5, 1.3, -0.4, -0.2, -0.1, -0.4, 0.9],
        );
        let bm = DMatrix::from_row_slice(
            4,
            4,
            &[-5.0, 2.0, 1.5, 1.0, 2.0, -6.0, 2.5, 0.5, 1.5, 2.5, -7.0, 2.0, 1.0, 0.5, 2.0, -4.0],
        );
        let net = ReducedNetwork::new(gm, bm, vec![NodeKind::Sg, NodeKind::Sg, NodeKind::Gfm, NodeKind::Gfm]).unwrap();
        let delta = DVector::from_vec(vec![0.05, -0.02, 0.1, 0.0]);
        let v = DVector::from_vec(vec![1.02, 0.98, 1.0, 1.05]);
        let jac = pf_jacobian(&delta, &v, &net).unwrap();
        let h: f64 = 1e-6;
        // Columns: δ of each node, then V of GFM nodes.
        for col in 0..6 {
            let mut dp = delta.clone();
            let mut dm = delta.clone();
            let mut vp = v.clone();
            let mut vm = v.clone();
            if col < 4 {
                dp[col] += h;
                dm[col] -= h;
            } else {
                vp[col - 2] += h;
                vm[col - 2] -= h;
            }
            let (pp, qp) = pf_injections(&dp, &vp, &net).unwrap();
            let (pm, qm) = pf_injections(&dm, &vm, &net).unwrap();
            for r in 0..6 {
                let fd = if r < 4 {
                    (pp[r] - pm[r]) / (2.0 * h)
                } else {
                    (qp[r - 2] - qm[r - 2]) / (2.0 * h)
                };
                let an = jac.m[(r, col)];
                assert!(
                    (an - fd).abs() <= 1e-6 * (1.0 + fd.abs()),
                    "block entry ({r},{col}): analytic {an}, fd {fd}"
                );
            }
        }
        let _ = c::<f64>(0.0);
    }

    #[test]
    fn jacobian_zero_network() {
        let net = ReducedNetwork::new(DMatrix::zeros(2, 2), DMatrix::zeros(2, 2), vec![NodeKind::Sg, NodeKind::Gfm]).unwrap();
        let delta = DVector::from_vec(vec![0.3, -0.1]);
        let v = DVector::from_vec(vec![1.0, 1.0]);
        let jac = pf_jacobian(&delta, &v, &net).unwrap();
        assert!(jac.m.norm() < 1e-15);
    }
}
