//! Zero-order policy gradient estimation and the SGDmax training loop over
//! the structured gain set.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::control::cost::{is_stabilizing, CostWeights};
use crate::control::dare::dare_baseline;
use crate::control::mask::{project_to_mask, GainMask, Policy};
use crate::dynamics::linearize::DiscreteDynamics;
use crate::error::{Error, Result};
use crate::risk::{lagrangian, risk_value_analytic, EvalMode, NoiseModel, RiskParams};
use crate::scalar::{c, Scalar};

/// SplitMix64 step; used to derive independent, collision-free seed streams
/// from a base seed plus a domain tag and an index.
pub fn derive_seed(base: u64, domain: u64, index: u64) -> u64 {
    let mut z = base ^ domain.wrapping_mul(0x9E3779B97F4A7C15) ^ index.wrapping_mul(0xBF58476D1CE4E5B9);
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// SGDmax hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingConfig<T: Scalar> {
    /// Smoothing radius r of the sphere perturbation.
    pub smoothing_radius: T,
    /// Gradient step size η.
    pub step_size: T,
    /// Outer iterations M.
    pub outer_iterations: usize,
    /// ZOPG samples N averaged per outer iteration.
    pub zopg_samples: usize,
    /// Value substituted for ℒ when an evaluation point is not stabilizing.
    pub penalty: T,
    /// Base seed for the per-sample perturbation streams.
    pub base_seed: u64,
    /// Two-point (antithetic) evaluation; off by default, matching the
    /// one-point estimator as written.
    pub antithetic: bool,
}

impl<T: Scalar> TrainingConfig<T> {
    pub fn paper_defaults() -> Self {
        TrainingConfig {
            smoothing_radius: c(0.1),
            step_size: c(1e-4),
            outer_iterations: 50,
            zopg_samples: 20,
            penalty: c(1e6),
            base_seed: 0,
            antithetic: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.smoothing_radius <= T::zero()
            || self.step_size < T::zero()
            || self.outer_iterations == 0
            || self.zopg_samples == 0
            || self.penalty <= T::zero()
        {
            return Err(Error::DimensionMismatch("training hyperparameters must be positive".into()));
        }
        Ok(())
    }
}

/// Everything a Lagrangian evaluation needs.
#[derive(Clone, Copy)]
pub struct Problem<'a, T: Scalar> {
    pub dynamics: &'a DiscreteDynamics<T>,
    pub weights: &'a CostWeights<T>,
    pub noise: &'a NoiseModel<T>,
    pub risk: RiskParams<T>,
}

impl<'a, T: Scalar> Problem<'a, T> {
    /// ℒ(K, λ) in analytic mode, clamped to the penalty when K is not
    /// stabilizing. Returns (value, flagged).
    pub fn eval(&self, policy: &Policy<T>, lambda: T, penalty: T) -> (T, bool) {
        match lagrangian(policy, lambda, self.dynamics, self.weights, self.noise, &self.risk, EvalMode::Analytic) {
            Ok(v) => (v, false),
            Err(_) => (penalty, true),
        }
    }
}

/// One record per outer iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord<T: Scalar> {
    pub iteration: usize,
    /// ℒ(K_m, λ′(K_m)) — the minimax objective at the iterate.
    pub objective: T,
    /// Fraction of the N per-sample max-oracle calls that returned Λ.
    pub lambda_high_fraction: T,
    /// Constraint slack R_c(K_m) − c̄ (penalty-valued when unstable).
    pub slack: T,
    pub gradient_norm: T,
    pub spectral_radius: T,
    pub flagged_samples: usize,
    pub step_rejected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTrace<T: Scalar> {
    pub records: Vec<TraceRecord<T>>,
    pub warnings: Vec<String>,
}

impl<T: Scalar> Default for TrainingTrace<T> {
    fn default() -> Self {
        TrainingTrace { records: Vec::new(), warnings: Vec::new() }
    }
}

/// Draw U uniformly from the unit Frobenius sphere restricted to the mask
/// support: Gaussian fill on the free entries, then normalization.
pub fn sample_perturbation<T: Scalar>(mask: &GainMask, seed: u64) -> Result<DMatrix<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_perturbation_with(mask, &mut rng)
}

pub fn sample_perturbation_with<T: Scalar>(mask: &GainMask, rng: &mut ChaCha8Rng) -> Result<DMatrix<T>> {
    if mask.n_free() == 0 {
        return Err(Error::EmptyMask);
    }
    let mut u = DMatrix::<T>::zeros(mask.m.nrows(), mask.m.ncols());
    for r in 0..mask.m.nrows() {
        for col in 0..mask.m.ncols() {
            if mask.m[(r, col)] {
                let g: f64 = StandardNormal.sample(rng);
                u[(r, col)] = c::<T>(g);
            }
        }
    }
    let norm = u.norm();
    if norm == T::zero() {
        // astronomically unlikely; resample
        return sample_perturbation_with(mask, rng);
    }
    Ok(u / norm)
}

/// Endpoint max-oracle: λ′ = Λ when the reformulated risk exceeds c̄ at the
/// evaluation point, else 0; ties go to 0; non-stabilizing points are treated
/// conservatively as violating.
pub fn max_oracle<T: Scalar>(policy: &Policy<T>, problem: &Problem<'_, T>) -> Result<T> {
    let c_bar = problem.risk.c_bar(&problem.weights.q, problem.noise)?;
    match risk_value_analytic(policy, problem.dynamics, &problem.weights.q, problem.noise) {
        Ok(rc) => {
            let tie = c::<T>(1e-12) * (T::one() + c_bar.abs());
            if rc > c_bar + tie {
                Ok(problem.risk.multiplier_bound)
            } else {
                Ok(T::zero())
            }
        }
        Err(Error::NotStabilizing { .. }) => Ok(problem.risk.multiplier_bound),
        Err(e) => Err(e),
    }
}

/// One-point sphere-sampling gradient estimate
/// `Ĝ = (n_𝒦 / r) · ℒ(K + rU, λ′) · U`. Returns the estimate and whether the
/// evaluation had to be penalty-clamped.
pub fn zopg<T: Scalar>(
    policy: &Policy<T>,
    u: &DMatrix<T>,
    radius: T,
    lambda: T,
    problem: &Problem<'_, T>,
    penalty: T,
) -> Result<(DMatrix<T>, bool)> {
    let mask = policy.mask();
    let n_free = c::<T>(mask.n_free() as f64);
    let perturbed = project_to_mask(&(policy.gain() + u * radius), mask)?;
    let (value, flagged) = problem.eval(&perturbed, lambda, penalty);
    Ok((u * (n_free / radius * value), flagged))
}

/// SGDmax: M outer gradient steps, each averaging N ZOPG estimates whose
/// multiplier is chosen per perturbation by the max-oracle. Destabilizing
/// updates get one retry at half the step before being skipped.
pub fn sgdmax<T: Scalar>(
    k0: &Policy<T>,
    cfg: &TrainingConfig<T>,
    problem: &Problem<'_, T>,
) -> Result<(Policy<T>, TrainingTrace<T>)> {
    cfg.validate()?;
    let stab = is_stabilizing(k0, problem.dynamics);
    if !stab.stable {
        return Err(Error::NotStabilizing {
            rho: stab.spectral_radius.to_f64().unwrap_or(f64::NAN),
        });
    }
    let mask = k0.mask().clone();
    let n_samples = cfg.zopg_samples;
    let mut policy = k0.clone();
    let mut trace = TrainingTrace::default();
    let mut total_flagged = 0usize;

    for m in 0..cfg.outer_iterations {
        let mut grad = DMatrix::<T>::zeros(mask.m.nrows(), mask.m.ncols());
        let mut lambda_high = 0usize;
        let mut flagged_here = 0usize;
        for s in 0..n_samples {
            let seed = derive_seed(cfg.base_seed, 0x5A, (m * n_samples + s) as u64);
            let u = sample_perturbation::<T>(&mask, seed)?;
            let perturbed = project_to_mask(&(policy.gain() + &u * cfg.smoothing_radius), &mask)?;
            let lambda = max_oracle(&perturbed, problem)?;
            if lambda > T::zero() {
                lambda_high += 1;
            }
            let (g, flagged) = if cfg.antithetic {
                let (vp, f1) = problem.eval(&perturbed, lambda, cfg.penalty);
                let mirrored = project_to_mask(&(policy.gain() - &u * cfg.smoothing_radius), &mask)?;
                let (vm, f2) = problem.eval(&mirrored, lambda, cfg.penalty);
                let n_free = c::<T>(mask.n_free() as f64);
                (&u * (n_free / (c::<T>(2.0) * cfg.smoothing_radius) * (vp - vm)), f1 || f2)
            } else {
                zopg(&policy, &u, cfg.smoothing_radius, lambda, problem, cfg.penalty)?
            };
            if flagged {
                flagged_here += 1;
            }
            grad += g;
        }
        grad /= c::<T>(n_samples as f64);
        total_flagged += flagged_here;

        // Iterate diagnostics at K_m.
        let lambda_at_k = max_oracle(&policy, problem)?;
        let (objective, _) = problem.eval(&policy, lambda_at_k, cfg.penalty);
        let c_bar = problem.risk.c_bar(&problem.weights.q, problem.noise)?;
        let slack = match risk_value_analytic(&policy, problem.dynamics, &problem.weights.q, problem.noise) {
            Ok(rc) => rc - c_bar,
            Err(_) => cfg.penalty,
        };
        let rho = is_stabilizing(&policy, problem.dynamics).spectral_radius;

        // Gradient step with one halved retry if it leaves the stabilizing set.
        let mut step_rejected = false;
        let candidate = project_to_mask(&(policy.gain() - &grad * cfg.step_size), &mask)?;
        let accepted = if is_stabilizing(&candidate, problem.dynamics).stable {
            Some(candidate)
        } else {
            let half = project_to_mask(
                &(policy.gain() - &grad * (cfg.step_size * c::<T>(0.5))),
                &mask,
            )?;
            if is_stabilizing(&half, problem.dynamics).stable {
                step_rejected = true; // halved, logged
                Some(half)
            } else {
                step_rejected = true;
                None
            }
        };

        trace.records.push(TraceRecord {
            iteration: m,
            objective,
            lambda_high_fraction: c::<T>(lambda_high as f64) / c::<T>(n_samples as f64),
            slack,
            gradient_norm: grad.norm(),
            spectral_radius: rho,
            flagged_samples: flagged_here,
            step_rejected,
        });

        if let Some(next) = accepted {
            policy = next;
        }
    }

    let total = cfg.outer_iterations * n_samples;
    if total_flagged * 10 > total {
        trace.warnings.push(format!(
            "{total_flagged}/{total} ZOPG evaluations hit the instability penalty; consider a smaller smoothing radius"
        ));
    }
    Ok((policy, trace))
}

/// Initial stabilizing structured policy: zero when the open loop is already
/// Schur stable, otherwise the mask projection of the DARE gain, scaled back
/// toward zero if needed.
pub fn find_initial_policy<T: Scalar>(
    dynamics: &DiscreteDynamics<T>,
    mask: &GainMask,
    weights: &CostWeights<T>,
) -> Result<Policy<T>> {
    let zero = Policy::zero(mask.clone());
    if is_stabilizing(&zero, dynamics).stable {
        return Ok(zero);
    }
    let kstar = dare_baseline(dynamics, weights)?;
    let projected = project_to_mask(&kstar, mask)?;
    if is_stabilizing(&projected, dynamics).stable {
        return Ok(projected);
    }
    // Scan for a stabilizing scaling, then bisect toward the largest one.
    let mut stable_gamma: Option<f64> = None;
    let mut unstable_above = 1.0f64;
    let mut g = 0.95f64;
    while g > 0.0 {
        let cand = project_to_mask(&(&kstar * c::<T>(g)), mask)?;
        if is_stabilizing(&cand, dynamics).stable {
            stable_gamma = Some(g);
            break;
        }
        unstable_above = g;
        g -= 0.05;
    }
    let mut lo = match stable_gamma {
        Some(g) => g,
        None => return Err(Error::InitializationFailure),
    };
    let mut hi = unstable_above;
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let cand = project_to_mask(&(&kstar * c::<T>(mid)), mask)?;
        if is_stabilizing(&cand, dynamics).stable {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    project_to_mask(&(&kstar * c::<T>(lo)), mask)
}
