//! LQR cost evaluation: Monte Carlo estimator and its stationary analytic
//! oracle, plus the stability predicate.

use nalgebra::{DMatrix, DVector};

use crate::control::mask::Policy;
use crate::dynamics::linearize::DiscreteDynamics;
use crate::dynamics::simulate::simulate_linear;
use crate::error::{Error, Result};
use crate::linalg::{solve_discrete_lyapunov, spectral_radius};
use crate::risk::NoiseModel;
use crate::scalar::{c, Scalar};

/// Cost clamp for divergent rollouts and non-stabilizing evaluations.
pub const DEFAULT_PENALTY: f64 = 1e6;

/// Stability margin: ρ(A − BK) must stay below 1 − margin.
pub const STABILITY_MARGIN: f64 = 1e-9;

/// State and control weight matrices of the quadratic cost.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights<T: Scalar> {
    pub q: DMatrix<T>,
    pub r: DMatrix<T>,
}

impl<T: Scalar> CostWeights<T> {
    pub fn new(q: DMatrix<T>, r: DMatrix<T>) -> Result<Self> {
        let check_sym = |m: &DMatrix<T>, name: &str| {
            if m.nrows() != m.ncols() || (m - m.transpose()).norm() > c::<T>(1e-9) * (T::one() + m.norm()) {
                return Err(Error::DimensionMismatch(format!("{name} must be square symmetric")));
            }
            Ok(())
        };
        check_sym(&q, "Q")?;
        check_sym(&r, "R")?;
        let qmin = q.clone().symmetric_eigen().eigenvalues.min();
        if qmin < c::<T>(-1e-10) {
            return Err(Error::DimensionMismatch("Q must be positive semidefinite".into()));
        }
        let rmin = r.clone().symmetric_eigen().eigenvalues.min();
        if rmin <= T::zero() {
            return Err(Error::DimensionMismatch("R must be positive definite".into()));
        }
        Ok(CostWeights { q, r })
    }
}

/// Stability verdict with the measured spectral radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stability<T: Scalar> {
    pub stable: bool,
    pub spectral_radius: T,
}

/// `true` iff `ρ(A − BK) < 1 − margin`.
pub fn is_stabilizing<T: Scalar>(policy: &Policy<T>, dynamics: &DiscreteDynamics<T>) -> Stability<T> {
    let a_cl = &dynamics.a - &dynamics.b * policy.gain();
    let rho = spectral_radius(&a_cl);
    Stability { stable: rho < T::one() - c::<T>(STABILITY_MARGIN), spectral_radius: rho }
}

/// Mean/standard-error pair from a Monte Carlo run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate<T: Scalar> {
    pub mean: T,
    pub std_error: T,
    pub divergent_rollouts: usize,
}

impl<T: Scalar> McEstimate<T> {
    /// Fixed-order accumulation so the estimate is reproducible regardless of
    /// how rollouts were scheduled.
    pub fn from_values(values: &[T], divergent: usize) -> Self {
        let n = values.len();
        let nf = c::<T>(n as f64);
        let mut sum = T::zero();
        for v in values {
            sum += *v;
        }
        let mean = sum / nf;
        let mut ss = T::zero();
        for v in values {
            let d = *v - mean;
            ss += d * d;
        }
        let std_error = if n > 1 { (ss / (nf - T::one())).sqrt() / nf.sqrt() } else { T::zero() };
        McEstimate { mean, std_error, divergent_rollouts: divergent }
    }
}

/// Monte Carlo estimate of the time-averaged quadratic cost
/// `(1/T) Σ (xᵀQx + uᵀRu)` from equilibrium start, averaged over rollouts.
pub fn lqr_cost_mc<T: Scalar>(
    policy: &Policy<T>,
    dynamics: &DiscreteDynamics<T>,
    weights: &CostWeights<T>,
    noise: &NoiseModel<T>,
    steps: usize,
    rollouts: usize,
    seed: u64,
) -> Result<McEstimate<T>> {
    let n = dynamics.state_dim();
    let x0 = DVector::zeros(n);
    let mut values = Vec::with_capacity(rollouts);
    let mut divergent = 0usize;
    for r in 0..rollouts {
        let traj = simulate_linear(dynamics, policy, Some(noise), &x0, steps, seed + r as u64)?;
        if traj.diverged {
            divergent += 1;
            values.push(c::<T>(DEFAULT_PENALTY));
            continue;
        }
        let mut acc = T::zero();
        for t in 0..steps {
            let x = &traj.states[t];
            let u = &traj.inputs[t];
            acc += (&weights.q * x).dot(x) + (&weights.r * u).dot(u);
        }
        values.push(acc / c::<T>(steps as f64));
    }
    Ok(McEstimate::from_values(&values, divergent))
}

/// Exact stationary cost `tr((Q + KᵀRK)(Σ + μμᵀ))` with Σ from the
/// closed-loop Lyapunov equation and μ the stationary mean.
pub fn lqr_cost_analytic<T: Scalar>(
    policy: &Policy<T>,
    dynamics: &DiscreteDynamics<T>,
    weights: &CostWeights<T>,
    noise: &NoiseModel<T>,
) -> Result<T> {
    let a_cl = &dynamics.a - &dynamics.b * policy.gain();
    let rho = spectral_radius(&a_cl);
    if rho >= T::one() - c::<T>(STABILITY_MARGIN) {
        return Err(Error::NotStabilizing { rho: rho.to_f64().unwrap_or(f64::NAN) });
    }
    let n = a_cl.nrows();
    let sigma = solve_discrete_lyapunov(&a_cl, noise.cov())
        .ok_or(Error::NotStabilizing { rho: rho.to_f64().unwrap_or(f64::NAN) })?;
    let mu = (DMatrix::<T>::identity(n, n) - &a_cl)
        .lu()
        .solve(noise.mean())
        .ok_or(Error::NotStabilizing { rho: rho.to_f64().unwrap_or(f64::NAN) })?;
    let k = policy.gain();
    let eff = &weights.q + k.transpose() * &weights.r * k;
    let second = sigma + &mu * mu.transpose();
    Ok((eff * second).trace())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::mask::GainMask;

    fn scalar_setup(a: f64, b: f64, k: f64) -> (DiscreteDynamics<f64>, Policy<f64>, CostWeights<f64>) {
        let dynamics = DiscreteDynamics::from_matrices(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            0.01,
        );
        let policy = Policy::new(DMatrix::from_element(1, 1, k), GainMask::full(1, 1)).unwrap();
        let weights = CostWeights::new(DMatrix::identity(1, 1), DMatrix::identity(1, 1) * 0.1).unwrap();
        (dynamics, policy, weights)
    }

    #[test]
    fn analytic_scalar_closed_form() {
        // a_cl = 0.5, W = 0.03: Σ = 0.03/(1 − 0.25) = 0.04; K = 0 so the
        // cost is Q·Σ = 0.04.
        let (dynamics, policy, weights) = scalar_setup(0.5, 0.0, 0.0);
        let noise = NoiseModel::gaussian(DVector::zeros(1), DMatrix::from_element(1, 1, 0.03)).unwrap();
        let cost = lqr_cost_analytic(&policy, &dynamics, &weights, &noise).unwrap();
        assert!((cost - 0.04).abs() < 1e-14, "cost {cost}");
    }

    #[test]
    fn analytic_nonzero_mean_scalar() {
        // μ = ξ̄/(1 − a_cl) = 0.2/0.5 = 0.4; cost = Q(Σ + μ²).
        let (dynamics, policy, weights) = scalar_setup(0.5, 0.0, 0.0);
        let noise = NoiseModel::gaussian(
            DVector::from_element(1, 0.2),
            DMatrix::from_element(1, 1, 0.03),
        )
        .unwrap();
        let cost = lqr_cost_analytic(&policy, &dynamics, &weights, &noise).unwrap();
        assert!((cost - (0.04 + 0.16)).abs() < 1e-14, "cost {cost}");
    }

    #[test]
    fn mc_matches_analytic_within_error() {
        let (dynamics, policy, weights) = scalar_setup(0.8, 0.5, 0.4);
        let noise = NoiseModel::gaussian(DVector::zeros(1), DMatrix::from_element(1, 1, 0.05)).unwrap();
        let exact = lqr_cost_analytic(&policy, &dynamics, &weights, &noise).unwrap();
        let est = lqr_cost_mc(&policy, &dynamics, &weights, &noise, 4000, 40, 17).unwrap();
        assert_eq!(est.divergent_rollouts, 0);
        // Finite-horizon bias is O(1/steps); allow it on top of 4 SE.
        let tol = 4.0 * est.std_error + exact / 500.0;
        assert!((est.mean - exact).abs() < tol, "mc {} vs exact {exact} (tol {tol})", est.mean);
    }

    #[test]
    fn unstable_policy_rejected() {
        let (dynamics, policy, weights) = scalar_setup(1.2, 0.0, 0.0);
        let noise = NoiseModel::gaussian(DVector::zeros(1), DMatrix::from_element(1, 1, 0.05)).unwrap();
        assert!(matches!(
            lqr_cost_analytic(&policy, &dynamics, &weights, &noise),
            Err(Error::NotStabilizing { .. })
        ));
        assert!(!is_stabilizing(&policy, &dynamics).stable);
    }

    #[test]
    fn mc_estimate_statistics() {
        let est = McEstimate::from_values(&[1.0, 2.0, 3.0, 4.0], 1);
        assert_eq!(est.mean, 2.5);
        assert_eq!(est.divergent_rollouts, 1);
        // sample sd = sqrt(5/3), SE = sd/2.
        assert!((est.std_error - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn weights_reject_indefinite_r() {
        assert!(CostWeights::new(DMatrix::identity(2, 2), DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.1]))).is_err());
        assert!(CostWeights::new(DMatrix::from_element(2, 2, 1.0), DMatrix::identity(2, 2)).is_ok());
    }
}
