//! Unstructured discrete-time LQR baseline via fixed-point iteration on the
//! discrete algebraic Riccati equation.

use nalgebra::DMatrix;

use crate::control::cost::CostWeights;
use crate::dynamics::linearize::DiscreteDynamics;
use crate::error::{Error, Result};
use crate::scalar::{c, Scalar};

const DARE_TOL: f64 = 1e-12;
const DARE_MAX_ITERS: usize = 100_000;

/// Solve `P = Q + AᵀPA − AᵀPB (R + BᵀPB)⁻¹ BᵀPA` and return the optimal
/// unstructured gain `K* = (R + BᵀPB)⁻¹ BᵀPA`.
pub fn dare_baseline<T: Scalar>(
    dynamics: &DiscreteDynamics<T>,
    weights: &CostWeights<T>,
) -> Result<DMatrix<T>> {
    let a = &dynamics.a;
    let b = &dynamics.b;
    let q = &weights.q;
    let r = &weights.r;
    let n = a.nrows();
    if q.nrows() != n || b.nrows() != n || r.nrows() != b.ncols() {
        return Err(Error::DimensionMismatch("DARE operands have inconsistent shapes".into()));
    }
    let mut p = q.clone();
    let tol = c::<T>(DARE_TOL);
    let blowup = c::<T>(1e12);
    for _ in 0..DARE_MAX_ITERS {
        let btp = b.transpose() * &p;
        let gram = r + &btp * b;
        let gain = gram
            .clone()
            .lu()
            .solve(&(&btp * a))
            .ok_or(Error::NotStabilizing { rho: f64::NAN })?;
        let next = q + a.transpose() * &p * a - a.transpose() * &p * b * &gain;
        let diff = (&next - &p).norm();
        p = next;
        if p.norm() > blowup {
            return Err(Error::NotStabilizing { rho: f64::INFINITY });
        }
        if diff <= tol * (T::one() + p.norm()) {
            let btp = b.transpose() * &p;
            let gram = r + &btp * b;
            return gram.lu().solve(&(&btp * a)).ok_or(Error::NotStabilizing { rho: f64::NAN });
        }
    }
    Err(Error::NotStabilizing { rho: f64::INFINITY })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::cost::is_stabilizing;
    use crate::control::mask::{GainMask, Policy};

    fn toy(a: DMatrix<f64>, b: DMatrix<f64>) -> DiscreteDynamics<f64> {
        DiscreteDynamics::from_matrices(a, b, 0.01)
    }

    #[test]
    fn no_actuation_stable_gives_zero_gain() {
        let dynamics = toy(DMatrix::from_element(1, 1, 0.7), DMatrix::zeros(1, 1));
        let w = CostWeights::new(DMatrix::identity(1, 1), DMatrix::identity(1, 1)).unwrap();
        let k = dare_baseline(&dynamics, &w).unwrap();
        assert!(k.norm() < 1e-10);
    }

    #[test]
    fn scalar_golden_ratio_fixed_point() {
        // a = b = q = r = 1: p = (1+√5)/2, k = p/(1+p).
        let dynamics = toy(DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0));
        let w = CostWeights::new(DMatrix::identity(1, 1), DMatrix::identity(1, 1)).unwrap();
        let k = dare_baseline(&dynamics, &w).unwrap();
        let p = (1.0 + 5.0f64.sqrt()) / 2.0;
        assert!((k[(0, 0)] - p / (1.0 + p)).abs() < 1e-9);
    }

    #[test]
    fn dare_gain_beats_random_perturbations() {
        use crate::risk::NoiseModel;
        use nalgebra::DVector;
        use rand::{Rng, SeedableRng};
        let a = DMatrix::from_row_slice(2, 2, &[0.95, 0.1, -0.05, 0.9]);
        let b = DMatrix::from_row_slice(2, 1, &[0.1, 0.05]);
        let dynamics = toy(a, b);
        let w = CostWeights::new(DMatrix::identity(2, 2), DMatrix::identity(1, 1) * 0.1).unwrap();
        let noise = NoiseModel::gaussian(DVector::zeros(2), DMatrix::identity(2, 2) * 0.01).unwrap();
        let kstar = dare_baseline(&dynamics, &w).unwrap();
        let mask = GainMask::full(1, 2);
        let pstar = Policy::new(kstar.clone(), mask.clone()).unwrap();
        let base = crate::control::cost::lqr_cost_analytic(&pstar, &dynamics, &w, &noise).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut checked = 0;
        while checked < 100 {
            let pert = DMatrix::from_fn(1, 2, |_, _| rng.gen_range(-0.3..0.3));
            let cand = Policy::new(&kstar + pert, mask.clone()).unwrap();
            if !is_stabilizing(&cand, &dynamics).stable {
                continue;
            }
            let cost = crate::control::cost::lqr_cost_analytic(&cand, &dynamics, &w, &noise).unwrap();
            assert!(cost >= base - 1e-9, "perturbed gain beat the DARE optimum: {cost} < {base}");
            checked += 1;
        }
    }
}
