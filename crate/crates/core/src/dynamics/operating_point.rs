//! Steady-state (equilibrium) solution of the coupled SG/GFM system.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::network::{pf_injections, NodeKind, ReducedNetwork};
use crate::dynamics::params::{GfmParams, SgParams};
use crate::error::{Error, Result};
use crate::scalar::{c, Scalar};

/// Steady-state operating point on the reduced network.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint<T: Scalar> {
    /// Bus angles δ⁰ (rad), reference bus pinned to zero.
    pub delta: DVector<T>,
    /// Bus voltage magnitudes V⁰ (pu); SG entries equal their fixed values.
    pub v: DVector<T>,
    /// Network active injections P^{n,0} (pu).
    pub p: DVector<T>,
    /// Network reactive injections Q^{n,0} (pu).
    pub q: DVector<T>,
}

const NEWTON_TOL: f64 = 1e-12;
const NEWTON_MAX_ITERS: usize = 50;

/// Equilibrium residual. Unknowns: angles of all non-reference buses plus GFM
/// voltages. Equations: active-power balance at every non-reference bus
/// (P^n = P for SGs, P^n = P^s for GFMs) and the GFM voltage relation
/// V = V^s + m^q (Q^s − Q^n) that makes every GFM time-derivative vanish.
fn residual<T: Scalar>(
    z: &DVector<T>,
    net: &ReducedNetwork<T>,
    sg: &[SgParams<T>],
    gfm: &[GfmParams<T>],
    reference: usize,
) -> Result<DVector<T>> {
    let n = net.node_count();
    let n_sg = sg.len();
    let (delta, v) = unpack(z, net, sg, gfm, reference);
    let (p, q) = pf_injections(&delta, &v, net)?;
    let mut f = DVector::zeros(n - 1 + gfm.len());
    let mut row = 0;
    for l in 0..n {
        if l == reference {
            continue;
        }
        let target = match net.kinds[l] {
            NodeKind::Sg => sg[l].mech_power,
            NodeKind::Gfm => gfm[l - n_sg].p_set,
        };
        f[row] = p[l] - target;
        row += 1;
    }
    for (j, g) in gfm.iter().enumerate() {
        let l = n_sg + j;
        f[row] = v[l] - g.v_set - g.q_droop * (g.q_set - q[l]);
        row += 1;
    }
    Ok(f)
}

fn unpack<T: Scalar>(
    z: &DVector<T>,
    net: &ReducedNetwork<T>,
    sg: &[SgParams<T>],
    gfm: &[GfmParams<T>],
    reference: usize,
) -> (DVector<T>, DVector<T>) {
    let n = net.node_count();
    let n_sg = sg.len();
    let mut delta = DVector::zeros(n);
    let mut idx = 0;
    for l in 0..n {
        if l == reference {
            continue;
        }
        delta[l] = z[idx];
        idx += 1;
    }
    let mut v = DVector::zeros(n);
    for (i, s) in sg.iter().enumerate() {
        v[i] = s.voltage;
    }
    for j in 0..gfm.len() {
        v[n_sg + j] = z[idx];
        idx += 1;
    }
    (delta, v)
}

/// Damped Newton iteration on the stacked equilibrium residual; flat start
/// (δ = 0, V at set-points). The first SG bus (or bus 0 when no SG exists)
/// acts as the angle reference and absorbs the active-power slack, so its
/// mechanical power is reported from the solved injections rather than taken
/// from the input.
pub fn solve_operating_point<T: Scalar>(
    net: &ReducedNetwork<T>,
    sg: &[SgParams<T>],
    gfm: &[GfmParams<T>],
) -> Result<OperatingPoint<T>> {
    let n = net.node_count();
    if sg.len() != net.n_sg() || gfm.len() != net.n_gfm() {
        return Err(Error::DimensionMismatch(
            "SG/GFM parameter lists do not match the network node kinds".into(),
        ));
    }
    for s in sg {
        s.validate()?;
    }
    for g in gfm {
        g.validate()?;
    }
    let reference = 0usize; // SG-first ordering makes bus 0 the natural slack

    let dim = n - 1 + gfm.len();
    let mut z = DVector::<T>::zeros(dim);
    for (j, g) in gfm.iter().enumerate() {
        z[n - 1 + j] = g.v_set;
    }

    let mut f = residual(&z, net, sg, gfm, reference)?;
    let tol = c::<T>(NEWTON_TOL);
    let mut iter = 0;
    while f.norm() > tol {
        if iter >= NEWTON_MAX_ITERS {
            return Err(Error::PowerFlowDiverged {
                iterations: iter,
                residual: f.norm().to_f64().unwrap_or(f64::NAN),
            });
        }
        // Forward-difference Jacobian of the residual; cheap at these sizes.
        let h = c::<T>(1e-7);
        let mut jac = DMatrix::<T>::zeros(dim, dim);
        for col in 0..dim {
            let mut zp = z.clone();
            zp[col] += h;
            let fp = residual(&zp, net, sg, gfm, reference)?;
            for row in 0..dim {
                jac[(row, col)] = (fp[row] - f[row]) / h;
            }
        }
        let step = jac.lu().solve(&f).ok_or(Error::PowerFlowDiverged {
            iterations: iter,
            residual: f.norm().to_f64().unwrap_or(f64::NAN),
        })?;
        // Backtracking line search on the residual norm.
        let mut alpha = T::one();
        let mut accepted = false;
        for _ in 0..30 {
            let zt = &z - &step * alpha;
            let ft = residual(&zt, net, sg, gfm, reference)?;
            if ft.norm() < f.norm() {
                z = zt;
                f = ft;
                accepted = true;
                break;
            }
            alpha *= c::<T>(0.5);
        }
        if !accepted {
            return Err(Error::PowerFlowDiverged {
                iterations: iter,
                residual: f.norm().to_f64().unwrap_or(f64::NAN),
            });
        }
        iter += 1;
    }

    let (delta, v) = unpack(&z, net, sg, gfm, reference);
    let (p, q) = pf_injections(&delta, &v, net)?;
    Ok(OperatingPoint { delta, v, p, q })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn sg(p: f64) -> SgParams<f64> {
        SgParams {
            inertia: 0.2,
            damping: 0.05,
            nominal_speed: 120.0 * std::f64::consts::PI,
            mech_power: p,
            voltage: 1.0,
        }
    }

    fn gfm(vs: f64, ps: f64, qs: f64) -> GfmParams<f64> {
        GfmParams {
            tau: 0.01,
            p_droop: 0.01,
            q_droop: 0.05,
            pi_proportional: 0.01,
            pi_integral: 5.86,
            nominal_speed: 120.0 * std::f64::consts::PI,
            v_set: vs,
            p_set: ps,
            q_set: qs,
        }
    }

    #[test]
    fn isolated_gfm_equilibrium() {
        let net = ReducedNetwork::new(DMatrix::zeros(1, 1), DMatrix::zeros(1, 1), vec![NodeKind::Gfm]).unwrap();
        let op = solve_operating_point(&net, &[], &[gfm(1.0, 0.0, 0.0)]).unwrap();
        assert!((op.v[0] - 1.0).abs() < 1e-12);
        assert!(op.p[0].abs() < 1e-12);
        assert!(op.q[0].abs() < 1e-12);
    }

    #[test]
    fn isolated_sg_equilibrium() {
        // Reference SG alone: P absorbed as slack, injection zero.
        let net = ReducedNetwork::new(DMatrix::zeros(1, 1), DMatrix::zeros(1, 1), vec![NodeKind::Sg]).unwrap();
        let op = solve_operating_point(&net, &[sg(0.0)], &[]).unwrap();
        assert!(op.p[0].abs() < 1e-12);
        assert!((op.v[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_node_sg_gfm_matches_brute_force() {
        let g = DMatrix::from_row_slice(2, 2, &[0.2, -0.2, -0.2, 0.2]);
        let b = DMatrix::from_row_slice(2, 2, &[-4.0, 4.0, 4.0, -4.0]);
        let net = ReducedNetwork::new(g, b, vec![NodeKind::Sg, NodeKind::Gfm]).unwrap();
        let gfm_p = gfm(1.0, -0.4, 0.0);
        let op = solve_operating_point(&net, &[sg(0.5)], &[gfm_p]).unwrap();
        // Independent dense grid search + refinement over (δ₂, V₂).
        let mut best = (f64::INFINITY, 0.0, 0.0);
        let mut d2 = -0.5;
        while d2 < 0.5 {
            let mut v2 = 0.7;
            while v2 < 1.3 {
                let delta = DVector::from_vec(vec![0.0, d2]);
                let v = DVector::from_vec(vec![1.0, v2]);
                let (p, q) = pf_injections(&delta, &v, &net).unwrap();
                let r1: f64 = p[1] - gfm_p.p_set;
                let r2: f64 = v2 - gfm_p.v_set - gfm_p.q_droop * (gfm_p.q_set - q[1]);
                let r = r1.hypot(r2);
                if r < best.0 {
                    best = (r, d2, v2);
                }
                v2 += 1e-4;
            }
            d2 += 1e-4;
        }
        assert!((op.delta[1] - best.1).abs() < 2e-4);
        assert!((op.v[1] - best.2).abs() < 2e-4);
        // Residual of the returned point is tiny.
        let (p, _q) = pf_injections(&op.delta, &op.v, &net).unwrap();
        assert!((p[1] - gfm_p.p_set).abs() < 1e-10);
    }

    #[test]
    fn infeasible_case_errors() {
        // Absurd power target across a weak tie cannot be met.
        let g = DMatrix::zeros(2, 2);
        let b = DMatrix::from_row_slice(2, 2, &[-0.1, 0.1, 0.1, -0.1]);
        let net = ReducedNetwork::new(g, b, vec![NodeKind::Sg, NodeKind::Gfm]).unwrap();
        let err = solve_operating_point(&net, &[sg(0.0)], &[gfm(1.0, 50.0, 0.0)]);
        assert!(err.is_err());
    }
}
