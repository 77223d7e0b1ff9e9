//! Small-signal model assembly: state layout, continuous-time matrices, and
//! forward-Euler discretization.

use nalgebra::DMatrix;

use crate::dynamics::network::PfJacobian;
use crate::dynamics::params::{GfmParams, SgParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Index bookkeeping for the deviation state
/// `x = [Δδ_g, Δω_g, Δδ_f, Δω_f, ΔV^e_f, ΔV_f]` and input
/// `u = [ΔV^s_f, ΔP^s_f, ΔQ^s_f]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateLayout {
    pub n_sg: usize,
    pub n_gfm: usize,
}

impl StateLayout {
    pub fn state_dim(&self) -> usize {
        2 * self.n_sg + 4 * self.n_gfm
    }
    pub fn input_dim(&self) -> usize {
        3 * self.n_gfm
    }
    pub fn delta_sg(&self, i: usize) -> usize {
        i
    }
    pub fn omega_sg(&self, i: usize) -> usize {
        self.n_sg + i
    }
    pub fn delta_gfm(&self, j: usize) -> usize {
        2 * self.n_sg + j
    }
    pub fn omega_gfm(&self, j: usize) -> usize {
        2 * self.n_sg + self.n_gfm + j
    }
    pub fn verr_gfm(&self, j: usize) -> usize {
        2 * self.n_sg + 2 * self.n_gfm + j
    }
    pub fn v_gfm(&self, j: usize) -> usize {
        2 * self.n_sg + 3 * self.n_gfm + j
    }
    pub fn u_vset(&self, j: usize) -> usize {
        j
    }
    pub fn u_pset(&self, j: usize) -> usize {
        self.n_gfm + j
    }
    pub fn u_qset(&self, j: usize) -> usize {
        2 * self.n_gfm + j
    }
}

/// Continuous-time linearized dynamics `ẋ = A_c x + B_c u + ξ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousDynamics<T: Scalar> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub layout: StateLayout,
}

/// Discrete-time dynamics `x⁺ = A x + B u + ξ` with `A = I + Δt·A_c`,
/// `B = Δt·B_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDynamics<T: Scalar> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub dt: T,
    pub source: ContinuousDynamics<T>,
}

impl<T: Scalar> DiscreteDynamics<T> {
    pub fn layout(&self) -> StateLayout {
        self.source.layout
    }
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// Discrete dynamics straight from matrices, for tests and toy problems.
    /// The recorded continuous pair is back-solved from the defining relation.
    pub fn from_matrices(a: DMatrix<T>, b: DMatrix<T>, dt: T) -> Self {
        let n = a.nrows();
        let layout = StateLayout { n_sg: 0, n_gfm: 0 };
        let a_c = (&a - DMatrix::<T>::identity(n, n)) / dt;
        let b_c = &b / dt;
        DiscreteDynamics { a, b, dt, source: ContinuousDynamics { a: a_c, b: b_c, layout } }
    }
}

/// Build `A_c`, `B_c` by substituting the injection linearization into the SG
/// swing equations and the GFM droop/PI equations.
pub fn assemble_continuous<T: Scalar>(
    sg: &[SgParams<T>],
    gfm: &[GfmParams<T>],
    jac: &PfJacobian<T>,
) -> Result<ContinuousDynamics<T>> {
    let n_sg = sg.len();
    let n_gfm = gfm.len();
    if jac.n_sg != n_sg || jac.n_gfm != n_gfm {
        return Err(Error::DimensionMismatch("Jacobian does not match SG/GFM counts".into()));
    }
    let layout = StateLayout { n_sg, n_gfm };
    let nx = layout.state_dim();
    let nu = layout.input_dim();
    let mut a = DMatrix::<T>::zeros(nx, nx);
    let mut b = DMatrix::<T>::zeros(nx, nu);

    // Injection-deviation rows as functions of the state. Jacobian columns
    // are [δ^g, δ^f, V^f]; spread them onto the state indices.
    let spread = |row: usize, scale: T, target: &mut DMatrix<T>, target_row: usize, layout: &StateLayout| {
        for i in 0..n_sg {
            target[(target_row, layout.delta_sg(i))] += scale * jac.m[(row, i)];
        }
        for j in 0..n_gfm {
            target[(target_row, layout.delta_gfm(j))] += scale * jac.m[(row, n_sg + j)];
            target[(target_row, layout.v_gfm(j))] += scale * jac.m[(row, n_sg + n_gfm + j)];
        }
    };

    // SG rows: Δδ̇ = Δω; Δω̇ = (1/M)(−D Δω − ΔP^n).
    for (i, s) in sg.iter().enumerate() {
        a[(layout.delta_sg(i), layout.omega_sg(i))] = T::one();
        let inv_m = T::one() / s.inertia;
        a[(layout.omega_sg(i), layout.omega_sg(i))] = -s.damping * inv_m;
        spread(i, -inv_m, &mut a, layout.omega_sg(i), &layout);
    }

    // GFM rows.
    for (j, g) in gfm.iter().enumerate() {
        let inv_tau = T::one() / g.tau;
        a[(layout.delta_gfm(j), layout.omega_gfm(j))] = T::one();

        // Δω̇ = (1/τ)(−Δω + m^p (ΔP^s − ΔP^n))
        let r_omega = layout.omega_gfm(j);
        a[(r_omega, layout.omega_gfm(j))] = -inv_tau;
        spread(n_sg + j, -g.p_droop * inv_tau, &mut a, r_omega, &layout);
        b[(r_omega, layout.u_pset(j))] = g.p_droop * inv_tau;

        // ΔV̇^e = (1/τ)(ΔV^s − ΔV^e − ΔV + m^q (ΔQ^s − ΔQ^n))
        let r_verr = layout.verr_gfm(j);
        a[(r_verr, layout.verr_gfm(j))] = -inv_tau;
        a[(r_verr, layout.v_gfm(j))] = -inv_tau;
        spread(n_sg + n_gfm + j, -g.q_droop * inv_tau, &mut a, r_verr, &layout);
        b[(r_verr, layout.u_vset(j))] = inv_tau;
        b[(r_verr, layout.u_qset(j))] = g.q_droop * inv_tau;

        // ΔV̇ = k^pv ΔV̇^e + k^iv ΔV^e: compose the ΔV̇^e row just built.
        let r_v = layout.v_gfm(j);
        for col in 0..nx {
            a[(r_v, col)] = g.pi_proportional * a[(r_verr, col)];
        }
        a[(r_v, layout.verr_gfm(j))] += g.pi_integral;
        for col in 0..nu {
            b[(r_v, col)] = g.pi_proportional * b[(r_verr, col)];
        }
    }

    Ok(ContinuousDynamics { a, b, layout })
}

/// Forward-Euler discretization `A = I + Δt·A_c`, `B = Δt·B_c`.
pub fn discretize<T: Scalar>(cont: &ContinuousDynamics<T>, dt: T) -> Result<DiscreteDynamics<T>> {
    if dt <= T::zero() {
        return Err(Error::DimensionMismatch("time step must be positive".into()));
    }
    let n = cont.a.nrows();
    let a = DMatrix::<T>::identity(n, n) + &cont.a * dt;
    let b = &cont.b * dt;
    Ok(DiscreteDynamics { a, b, dt, source: cont.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::network::{pf_jacobian, NodeKind, ReducedNetwork};
    use nalgebra::{DMatrix, DVector};

    fn zero_jac(n_sg: usize, n_gfm: usize) -> PfJacobian<f64> {
        let n = n_sg + n_gfm;
        let net = ReducedNetwork::new(
            DMatrix::zeros(n, n),
            DMatrix::zeros(n, n),
            (0..n).map(|i| if i < n_sg { NodeKind::Sg } else { NodeKind::Gfm }).collect(),
        )
        .unwrap();
        pf_jacobian(&DVector::zeros(n), &DVector::from_element(n, 1.0), &net).unwrap()
    }

    #[test]
    fn isolated_sg_block() {
        let sg = SgParams { inertia: 0.5, damping: 0.1, nominal_speed: 377.0, mech_power: 0.0, voltage: 1.0 };
        let cont = assemble_continuous(&[sg], &[], &zero_jac(1, 0)).unwrap();
        assert_eq!(cont.a.shape(), (2, 2));
        assert_eq!(cont.a[(0, 0)], 0.0);
        assert_eq!(cont.a[(0, 1)], 1.0);
        assert_eq!(cont.a[(1, 0)], 0.0);
        assert!((cont.a[(1, 1)] + 0.1 / 0.5).abs() < 1e-15);
    }

    #[test]
    fn isolated_gfm_rows() {
        let g = GfmParams {
            tau: 0.01,
            p_droop: 0.01,
            q_droop: 0.05,
            pi_proportional: 0.01,
            pi_integral: 5.86,
            nominal_speed: 377.0,
            v_set: 1.0,
            p_set: 0.0,
            q_set: 0.0,
        };
        let cont = assemble_continuous(&[], &[g], &zero_jac(0, 1)).unwrap();
        let layout = cont.layout;
        // Δω̇ row: −1/τ on Δω, m^p/τ on ΔP^s.
        assert!((cont.a[(layout.omega_gfm(0), layout.omega_gfm(0))] + 100.0).abs() < 1e-12);
        assert!((cont.b[(layout.omega_gfm(0), layout.u_pset(0))] - 1.0).abs() < 1e-12);
        // ΔV̇ row composes the PI: k^pv·(ΔV̇^e row) + k^iv on ΔV^e.
        let kpv = 0.01;
        assert!((cont.a[(layout.v_gfm(0), layout.verr_gfm(0))] - (5.86 + kpv * (-100.0))).abs() < 1e-12);
        assert!((cont.b[(layout.v_gfm(0), layout.u_vset(0))] - kpv * 100.0).abs() < 1e-12);
    }

    #[test]
    fn zero_state_zero_input_is_equilibrium() {
        let sg = SgParams { inertia: 0.5, damping: 0.1, nominal_speed: 377.0, mech_power: 0.0, voltage: 1.0 };
        let cont = assemble_continuous(&[sg], &[], &zero_jac(1, 0)).unwrap();
        let x = DVector::zeros(2);
        let xdot = &cont.a * &x;
        assert!(xdot.norm() == 0.0);
    }

    #[test]
    fn discretize_exact_forward_euler() {
        let sg = SgParams { inertia: 0.5, damping: 0.1, nominal_speed: 377.0, mech_power: 0.0, voltage: 1.0 };
        let cont = assemble_continuous(&[sg], &[], &zero_jac(1, 0)).unwrap();
        let d = discretize(&cont, 0.01).unwrap();
        let n = cont.a.nrows();
        let resid_a = &d.a - (DMatrix::identity(n, n) + &cont.a * 0.01);
        let resid_b = &d.b - &cont.b * 0.01;
        assert_eq!(resid_a.norm(), 0.0);
        assert_eq!(resid_b.norm(), 0.0);
    }

    #[test]
    fn discretize_scalar_value() {
        let cont: ContinuousDynamics<f64> = ContinuousDynamics {
            a: DMatrix::from_element(1, 1, -10.0),
            b: DMatrix::zeros(1, 0),
            layout: StateLayout { n_sg: 0, n_gfm: 0 },
        };
        let d = discretize(&cont, 0.01).unwrap();
        assert!((d.a[(0, 0)] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn discretize_rejects_nonpositive_dt() {
        let cont = ContinuousDynamics {
            a: DMatrix::zeros(1, 1),
            b: DMatrix::zeros(1, 0),
            layout: StateLayout { n_sg: 0, n_gfm: 0 },
        };
        assert!(discretize(&cont, 0.0).is_err());
    }
}
