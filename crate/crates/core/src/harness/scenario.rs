//! Random step-load scenario suites for validation runs.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::simulate::LoadDisturbance;
use crate::optimizer::derive_seed;

/// Seed domain tag for test-scenario generation, disjoint from the training
/// perturbation stream.
pub const SCENARIO_DOMAIN: u64 = 0x7E;

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub index: usize,
    pub disturbance: LoadDisturbance<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSuite {
    pub scenarios: Vec<Scenario>,
    /// Half-width of the uniform active-power step, pu.
    pub level: f64,
    pub reactive_fraction: f64,
    pub seed: u64,
}

/// Draw `count` scenarios; each applies, at t = 0, an independent active-power
/// step ΔP_L ~ U[−level, level] at every GFM bus with ΔQ_L = ρ·ΔP_L.
pub fn gen_scenarios(
    n_gfm: usize,
    count: usize,
    level: f64,
    reactive_fraction: f64,
    seed: u64,
) -> ScenarioSuite {
    let scenarios = (0..count)
        .map(|index| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, SCENARIO_DOMAIN, index as u64));
            let dp = DVector::from_fn(n_gfm, |_, _| (rng.gen::<f64>() * 2.0 - 1.0) * level);
            let dq = &dp * reactive_fraction;
            Scenario { index, disturbance: LoadDisturbance { dp, dq, onset: 0.0 } }
        })
        .collect();
    ScenarioSuite { scenarios, level, reactive_fraction, seed }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproducible_and_bounded() {
        let a = gen_scenarios(3, 50, 0.5, 0.2, 42);
        let b = gen_scenarios(3, 50, 0.5, 0.2, 42);
        assert_eq!(a, b);
        for s in &a.scenarios {
            for j in 0..3 {
                assert!(s.disturbance.dp[j].abs() <= 0.5);
                assert!((s.disturbance.dq[j] - 0.2 * s.disturbance.dp[j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn different_seeds_differ() {
        let a = gen_scenarios(2, 10, 1.0, 0.2, 1);
        let b = gen_scenarios(2, 10, 1.0, 0.2, 2);
        assert_ne!(a.scenarios[0].disturbance.dp, b.scenarios[0].disturbance.dp);
    }

    #[test]
    fn spread_covers_the_range() {
        let suite = gen_scenarios(1, 400, 1.0, 0.2, 7);
        let vals: Vec<f64> = suite.scenarios.iter().map(|s| s.disturbance.dp[0]).collect();
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(lo < -0.9 && hi > 0.9, "uniform draws did not cover the range: [{lo}, {hi}]");
    }
}
