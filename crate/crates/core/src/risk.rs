//! Disturbance model with its weighted moments, the mean-variance risk
//! measure in both its definitional and quadratic-reformulated forms, and the
//! Lagrangian combining cost and risk.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::control::cost::{lqr_cost_analytic, McEstimate, DEFAULT_PENALTY};
use crate::control::mask::Policy;
use crate::dynamics::linearize::DiscreteDynamics;
use crate::dynamics::simulate::simulate_linear;
use crate::error::{Error, Result};
use crate::linalg::solve_discrete_lyapunov;
use crate::scalar::{c, Scalar};

/// Distribution family behind a [`NoiseModel`].
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSpec<T: Scalar> {
    /// Multivariate Gaussian with given mean and covariance.
    Gaussian { mean: DVector<T>, cov: DMatrix<T> },
    /// Plug-in moments over a bank of recorded sample vectors.
    Empirical { samples: Vec<DVector<T>> },
    /// Gaussian component plus an independent per-coordinate uniform
    /// component on [−h, h]; used to fold step-load fluctuations into the
    /// per-step disturbance.
    GaussianUniformMix { mean: DVector<T>, gauss_cov: DMatrix<T>, uniform_halfwidth: DVector<T> },
}

/// Weighted third/fourth moments of the centered disturbance, for a given
/// state-cost matrix Q: `M₃ = E[z zᵀQz]`, `m₄ = Var(zᵀQz)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedMoments<T: Scalar> {
    pub m3: DVector<T>,
    pub m4: T,
}

/// Disturbance distribution with cached first/second moments and a seedable
/// sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel<T: Scalar> {
    spec: NoiseSpec<T>,
    mean: DVector<T>,
    cov: DMatrix<T>,
    /// Square-root factor of the Gaussian component covariance.
    factor: DMatrix<T>,
    uniform_halfwidth: Option<DVector<T>>,
    cov_projected: bool,
}

const MIN_EMPIRICAL_SAMPLES: usize = 10_000;

fn psd_factor<T: Scalar>(cov: &DMatrix<T>) -> Result<(DMatrix<T>, bool)> {
    let n = cov.nrows();
    if cov.ncols() != n {
        return Err(Error::Noise("covariance must be square".into()));
    }
    if (cov - cov.transpose()).norm() > c::<T>(1e-9) * (T::one() + cov.norm()) {
        return Err(Error::Noise("covariance must be symmetric".into()));
    }
    let sym = (cov + cov.transpose()) * c::<T>(0.5);
    let eig = sym.symmetric_eigen();
    let mut projected = false;
    let tol = c::<T>(-1e-10) * (T::one() + cov.norm());
    let mut d = DVector::<T>::zeros(n);
    for i in 0..n {
        let ev = eig.eigenvalues[i];
        if ev < tol {
            return Err(Error::Noise(format!(
                "covariance is not positive semidefinite (eigenvalue {})",
                ev.to_f64().unwrap_or(f64::NAN)
            )));
        }
        if ev < T::zero() {
            projected = true;
            d[i] = T::zero();
        } else {
            d[i] = ev.sqrt();
        }
    }
    let factor = &eig.eigenvectors * DMatrix::from_diagonal(&d);
    Ok((factor, projected))
}

impl<T: Scalar> NoiseModel<T> {
    pub fn gaussian(mean: DVector<T>, cov: DMatrix<T>) -> Result<Self> {
        if cov.nrows() != mean.len() {
            return Err(Error::Noise("mean/covariance dimensions differ".into()));
        }
        let (factor, cov_projected) = psd_factor(&cov)?;
        let model = NoiseModel {
            spec: NoiseSpec::Gaussian { mean: mean.clone(), cov: cov.clone() },
            mean,
            cov,
            factor,
            uniform_halfwidth: None,
            cov_projected,
        };
        model.self_check()?;
        Ok(model)
    }

    pub fn gaussian_diag(mean: DVector<T>, variances: DVector<T>) -> Result<Self> {
        let cov = DMatrix::from_diagonal(&variances);
        Self::gaussian(mean, cov)
    }

    /// Point mass at zero: `W = 0`, `M₃ = 0`, `m₄ = 0`.
    pub fn deterministic(dim: usize) -> Self {
        NoiseModel {
            spec: NoiseSpec::Gaussian { mean: DVector::zeros(dim), cov: DMatrix::zeros(dim, dim) },
            mean: DVector::zeros(dim),
            cov: DMatrix::zeros(dim, dim),
            factor: DMatrix::zeros(dim, dim),
            uniform_halfwidth: None,
            cov_projected: false,
        }
    }

    pub fn mixture(mean: DVector<T>, gauss_cov: DMatrix<T>, uniform_halfwidth: DVector<T>) -> Result<Self> {
        let dim = mean.len();
        if gauss_cov.nrows() != dim || uniform_halfwidth.len() != dim {
            return Err(Error::Noise("mixture component dimensions differ".into()));
        }
        if uniform_halfwidth.iter().any(|h| *h < T::zero()) {
            return Err(Error::Noise("uniform half-widths must be nonnegative".into()));
        }
        let (factor, cov_projected) = psd_factor(&gauss_cov)?;
        let third = c::<T>(1.0 / 3.0);
        let mut cov = gauss_cov.clone();
        for i in 0..dim {
            cov[(i, i)] += uniform_halfwidth[i] * uniform_halfwidth[i] * third;
        }
        let model = NoiseModel {
            spec: NoiseSpec::GaussianUniformMix { mean: mean.clone(), gauss_cov, uniform_halfwidth: uniform_halfwidth.clone() },
            mean,
            cov,
            factor,
            uniform_halfwidth: Some(uniform_halfwidth),
            cov_projected,
        };
        model.self_check()?;
        Ok(model)
    }

    pub fn empirical(samples: Vec<DVector<T>>) -> Result<Self> {
        if samples.len() < MIN_EMPIRICAL_SAMPLES {
            return Err(Error::Noise(format!(
                "empirical bank needs at least {MIN_EMPIRICAL_SAMPLES} samples, got {}",
                samples.len()
            )));
        }
        let dim = samples[0].len();
        if samples.iter().any(|s| s.len() != dim) {
            return Err(Error::Noise("ragged sample bank".into()));
        }
        let nf = c::<T>(samples.len() as f64);
        let mut mean = DVector::<T>::zeros(dim);
        for s in &samples {
            mean += s;
        }
        mean /= nf;
        let mut cov = DMatrix::<T>::zeros(dim, dim);
        for s in &samples {
            let z = s - &mean;
            cov += &z * z.transpose();
        }
        cov /= nf;
        let (factor, cov_projected) = psd_factor(&cov)?;
        Ok(NoiseModel { spec: NoiseSpec::Empirical { samples }, mean, cov, factor, uniform_halfwidth: None, cov_projected })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// First moment ξ̄.
    pub fn mean(&self) -> &DVector<T> {
        &self.mean
    }

    /// Covariance W.
    pub fn cov(&self) -> &DMatrix<T> {
        &self.cov
    }

    pub fn cov_was_projected(&self) -> bool {
        self.cov_projected
    }

    pub fn is_deterministic(&self) -> bool {
        self.cov.norm() == T::zero()
    }

    /// One draw of ξ′. All randomness is pulled as `f64` and converted, so a
    /// given seed yields the same stream for every scalar type.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> DVector<T> {
        match &self.spec {
            NoiseSpec::Empirical { samples } => {
                let idx = rng.gen_range(0..samples.len());
                samples[idx].clone()
            }
            _ => {
                let dim = self.dim();
                let z = DVector::from_fn(dim, |_, _| {
                    let g: f64 = StandardNormal.sample(rng);
                    c::<T>(g)
                });
                let mut out = &self.mean + &self.factor * z;
                if let Some(h) = &self.uniform_halfwidth {
                    for i in 0..dim {
                        let u: f64 = rng.gen_range(-1.0..=1.0);
                        out[i] += h[i] * c::<T>(u);
                    }
                }
                out
            }
        }
    }

    /// Weighted third/fourth moments for a given Q. Gaussian and symmetric
    /// mixture components have closed forms; empirical banks use plug-in
    /// estimators.
    pub fn weighted_moments(&self, q: &DMatrix<T>) -> Result<WeightedMoments<T>> {
        let dim = self.dim();
        if q.nrows() != dim || q.ncols() != dim {
            return Err(Error::DimensionMismatch("Q does not match noise dimension".into()));
        }
        match &self.spec {
            NoiseSpec::Gaussian { cov, .. } => {
                let wq = cov * q;
                let m4 = c::<T>(2.0) * (&wq * &wq).trace();
                Ok(WeightedMoments { m3: DVector::zeros(dim), m4 })
            }
            NoiseSpec::GaussianUniformMix { gauss_cov, uniform_halfwidth, .. } => {
                // z = g + s, independent, both symmetric about zero:
                // Var(zᵀQz) = Var(gᵀQg) + Var(sᵀQs) + 4 tr(Q W_g Q W_s).
                let wq = gauss_cov * q;
                let mut m4 = c::<T>(2.0) * (&wq * &wq).trace();
                let third = c::<T>(1.0 / 3.0);
                let ws = DMatrix::from_fn(dim, dim, |i, j| {
                    if i == j {
                        uniform_halfwidth[i] * uniform_halfwidth[i] * third
                    } else {
                        T::zero()
                    }
                });
                m4 += c::<T>(4.0) * (q * gauss_cov * q * &ws).trace();
                // Uniform component: Var(sᵀQs) with independent coordinates.
                let mut diag_part = T::zero();
                let mut cross_part = T::zero();
                for i in 0..dim {
                    let hi2 = uniform_halfwidth[i] * uniform_halfwidth[i];
                    diag_part += q[(i, i)] * q[(i, i)] * hi2 * hi2;
                    for j in 0..dim {
                        if i != j {
                            let hj2 = uniform_halfwidth[j] * uniform_halfwidth[j];
                            cross_part += q[(i, j)] * q[(i, j)] * hi2 * hj2;
                        }
                    }
                }
                m4 += c::<T>(4.0 / 45.0) * diag_part + c::<T>(2.0 / 9.0) * cross_part;
                Ok(WeightedMoments { m3: DVector::zeros(dim), m4 })
            }
            NoiseSpec::Empirical { samples } => {
                let nf = c::<T>(samples.len() as f64);
                let trwq = (&self.cov * q).trace();
                let mut m3 = DVector::<T>::zeros(dim);
                let mut m4 = T::zero();
                for s in samples {
                    let z = s - &self.mean;
                    let zqz = (q * &z).dot(&z);
                    m3 += &z * zqz;
                    let d = zqz - trwq;
                    m4 += d * d;
                }
                Ok(WeightedMoments { m3: m3 / nf, m4: m4 / nf })
            }
        }
    }

    /// Monte Carlo validation of the analytic mean and covariance diagonal,
    /// run once at construction. 3-standard-error acceptance band.
    fn self_check(&self) -> Result<()> {
        if self.is_deterministic() {
            return Ok(());
        }
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
        let draws = 20_000usize;
        let dim = self.dim();
        let mut sum = DVector::<T>::zeros(dim);
        let mut sumsq = DVector::<T>::zeros(dim);
        for _ in 0..draws {
            let s = self.sample(&mut rng);
            for i in 0..dim {
                let z = s[i] - self.mean[i];
                sum[i] += s[i];
                sumsq[i] += z * z;
            }
        }
        let nf = c::<T>(draws as f64);
        for i in 0..dim {
            let var = self.cov[(i, i)];
            let sd = var.sqrt();
            let mean_se = sd / nf.sqrt();
            let err = (sum[i] / nf - self.mean[i]).abs();
            if err > c::<T>(3.0) * mean_se + c::<T>(1e-12) {
                return Err(Error::Noise(format!("sampler mean check failed on channel {i}")));
            }
            // Var of sample variance ≈ (κ−1)·σ⁴/n; use the Gaussian/uniform
            // bound κ ≤ 3.
            let var_se = (c::<T>(2.0) / nf).sqrt() * var;
            let verr = (sumsq[i] / nf - var).abs();
            if verr > c::<T>(4.0) * var_se + c::<T>(1e-12) {
                return Err(Error::Noise(format!("sampler variance check failed on channel {i}")));
            }
        }
        Ok(())
    }
}

/// Convenience matching the analysis display: returns `(ξ̄, W, M₃, m₄)`.
pub fn noise_moments<T: Scalar>(
    model: &NoiseModel<T>,
    q: &DMatrix<T>,
) -> Result<(DVector<T>, DMatrix<T>, DVector<T>, T)> {
    let wm = model.weighted_moments(q)?;
    Ok((model.mean().clone(), model.cov().clone(), wm.m3, wm.m4))
}

/// Risk tolerance and multiplier bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskParams<T: Scalar> {
    /// Tolerance c on the definitional mean-variance risk.
    pub tolerance: T,
    /// Upper bound Λ of the multiplier interval.
    pub multiplier_bound: T,
}

impl<T: Scalar> RiskParams<T> {
    /// Reformulated tolerance `c̄ = c − m₄ + 4 tr((WQ)²)`.
    pub fn c_bar(&self, q: &DMatrix<T>, noise: &NoiseModel<T>) -> Result<T> {
        let wm = noise.weighted_moments(q)?;
        let wq = noise.cov() * q;
        Ok(self.tolerance - wm.m4 + c::<T>(4.0) * (&wq * &wq).trace())
    }
}

fn closed_loop_stationary<T: Scalar>(
    policy: &Policy<T>,
    dynamics: &DiscreteDynamics<T>,
    noise: &NoiseModel<T>,
) -> Result<(DMatrix<T>, DVector<T>)> {
    let a_cl = &dynamics.a - &dynamics.b * policy.gain();
    let n = a_cl.nrows();
    let sigma = solve_discrete_lyapunov(&a_cl, noise.cov()).ok_or_else(|| Error::NotStabilizing {
        rho: crate::linalg::spectral_radius(&a_cl).to_f64().unwrap_or(f64::NAN),
    })?;
    let rho = crate::linalg::spectral_radius(&a_cl);
    if rho >= T::one() {
        return Err(Error::NotStabilizing { rho: rho.to_f64().unwrap_or(f64::NAN) });
    }
    let mu = (DMatrix::<T>::identity(n, n) - &a_cl)
        .lu()
        .solve(noise.mean())
        .ok_or_else(|| Error::NotStabilizing { rho: rho.to_f64().unwrap_or(f64::NAN) })?;
    Ok((sigma, mu))
}

/// Exact stationary value of the reformulated risk:
/// `R_c = 4 tr(QWQ (Σ + μμᵀ)) + 4 μᵀQ M₃`.
pub fn risk_value_analytic<T: Scalar>(
    policy: &Policy<T>,
    dynamics: &DiscreteDynamics<T>,
    q: &DMatrix<T>,
    noise: &NoiseModel<T>,
) -> Result<T> {
    let (sigma, mu) = closed_loop_stationary(policy, dynamics, noise)?;
    let wm = noise.weighted_moments(q)?;
    let qwq = q * noise.cov() * q;
    let second = &sigma + &mu * mu.transpose();
    Ok(c::<T>(4.0) * (qwq * second).trace() + c::<T>(4.0) * (q * &wm.m3).dot(&mu))
}

/// Monte Carlo estimate of the reformulated risk along simulated linear
/// trajectories.
pub fn risk_value_mc<T: Scalar>(
    policy: &Policy<T>,
    dynamics: &DiscreteDynamics<T>,
    q: &DMatrix<T>,
    noise: &NoiseModel<T>,
    steps: usize,
    rollouts: usize,
    seed: u64,
) -> Result<McEstimate<T>> {
    let wm = noise.weighted_moments(q)?;
    let qwq = q * noise.cov() * q;
    let qm3 = q * &wm.m3;
    per_rollout_average(policy, dynamics, steps, rollouts, seed, |traj| {
        let mut acc = T::zero();
        for x in &traj.states[..steps] {
            acc += c::<T>(4.0) * ((&qwq * x).dot(x) + qm3.dot(x));
        }
        acc / c::<T>(steps as f64)
    }, noise)
}

/// Monte Carlo estimate of the definitional mean-variance risk: the squared
/// one-step surprise of the realized state cost against its conditional
/// expectation given the trajectory so far.
pub fn risk_definition_mc<T: Scalar>(
    policy: &Policy<T>,
    dynamics: &DiscreteDynamics<T>,
    q: &DMatrix<T>,
    noise: &NoiseModel<T>,
    steps: usize,
    rollouts: usize,
    seed: u64,
) -> Result<McEstimate<T>> {
    let wm = noise.weighted_moments(q)?;
    let trwq = (noise.cov() * q).trace();
    let xi_bar = noise.mean().clone();
    let e_noise_quad = trwq + (q * &xi_bar).dot(&xi_bar);
    let _ = wm;
    per_rollout_average(policy, dynamics, steps, rollouts, seed, |traj| {
        let mut acc = T::zero();
        let mut count = 0usize;
        for t in 1..traj.states.len() {
            let prev = &traj.states[t - 1];
            let u = &traj.inputs[t - 1];
            // predicted mean of x_t given H_t is d + ξ̄ with d = A x_{t−1} + B u_{t−1}
            let d = &dynamics.a * prev + &dynamics.b * u;
            let x = &traj.states[t];
            let pred = (q * &d).dot(&d) + c::<T>(2.0) * (q * &d).dot(&xi_bar) + e_noise_quad;
            let realized = (q * x).dot(x);
            let s = realized - pred;
            acc += s * s;
            count += 1;
        }
        acc / c::<T>(count as f64)
    }, noise)
}

fn per_rollout_average<T: Scalar, F>(
    policy: &Policy<T>,
    dynamics: &DiscreteDynamics<T>,
    steps: usize,
    rollouts: usize,
    seed: u64,
    stat: F,
    noise: &NoiseModel<T>,
) -> Result<McEstimate<T>>
where
    F: Fn(&crate::dynamics::simulate::LinearTrajectory<T>) -> T,
{
    let n = dynamics.state_dim();
    let x0 = DVector::zeros(n);
    let mut values = Vec::with_capacity(rollouts);
    let mut divergent = 0usize;
    for r in 0..rollouts {
        let traj = simulate_linear(dynamics, policy, Some(noise), &x0, steps, seed + r as u64)?;
        if traj.diverged {
            divergent += 1;
            values.push(c::<T>(DEFAULT_PENALTY));
        } else {
            values.push(stat(&traj));
        }
    }
    Ok(McEstimate::from_values(&values, divergent))
}

/// Which evaluation route the Lagrangian takes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EvalMode {
    /// Stationary Lyapunov evaluation as `R₀ + λ(R_c − c̄)`.
    Analytic,
    /// Stationary evaluation through the shifted weight `Q_λ = Q + 4λQWQ`
    /// plus the linear `4λ xᵀQM₃` term; algebraically identical to
    /// [`EvalMode::Analytic`].
    AnalyticQLambda,
    /// Monte Carlo on simulated linear trajectories.
    MonteCarlo { steps: usize, rollouts: usize, seed: u64 },
}

/// Lagrangian `ℒ(K, λ) = R₀(K) + λ(R_c(K) − c̄)`.
pub fn lagrangian<T: Scalar>(
    policy: &Policy<T>,
    lambda: T,
    dynamics: &DiscreteDynamics<T>,
    weights: &crate::control::cost::CostWeights<T>,
    noise: &NoiseModel<T>,
    risk: &RiskParams<T>,
    mode: EvalMode,
) -> Result<T> {
    if lambda < T::zero() || lambda > risk.multiplier_bound {
        return Err(Error::MultiplierOutOfRange {
            lambda: lambda.to_f64().unwrap_or(f64::NAN),
            bound: risk.multiplier_bound.to_f64().unwrap_or(f64::NAN),
        });
    }
    let c_bar = risk.c_bar(&weights.q, noise)?;
    match mode {
        EvalMode::Analytic => {
            let r0 = lqr_cost_analytic(policy, dynamics, weights, noise)?;
            let rc = risk_value_analytic(policy, dynamics, &weights.q, noise)?;
            Ok(r0 + lambda * (rc - c_bar))
        }
        EvalMode::AnalyticQLambda => {
            let (sigma, mu) = closed_loop_stationary(policy, dynamics, noise)?;
            let wm = noise.weighted_moments(&weights.q)?;
            let q = &weights.q;
            let qlam = q + (q * noise.cov() * q) * (c::<T>(4.0) * lambda);
            let k = policy.gain();
            let eff = &qlam + k.transpose() * &weights.r * k;
            let second = &sigma + &mu * mu.transpose();
            let lin = c::<T>(4.0) * lambda * (q * &wm.m3).dot(&mu);
            Ok((eff * second).trace() + lin - lambda * c_bar)
        }
        EvalMode::MonteCarlo { steps, rollouts, seed } => {
            let r0 = crate::control::cost::lqr_cost_mc(policy, dynamics, weights, noise, steps, rollouts, seed)?;
            let rc = risk_value_mc(policy, dynamics, &weights.q, noise, steps, rollouts, seed)?;
            Ok(r0.mean + lambda * (rc.mean - c_bar))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::cost::CostWeights;
    use crate::control::mask::GainMask;
    use rand::SeedableRng;

    fn scalar_system(a: f64) -> (DiscreteDynamics<f64>, Policy<f64>) {
        let dynamics = DiscreteDynamics::from_matrices(
            DMatrix::from_element(1, 1, a),
            DMatrix::zeros(1, 1),
            0.01,
        );
        (dynamics, Policy::zero(GainMask::full(1, 1)))
    }

    #[test]
    fn gaussian_m4_closed_form_scalar() {
        // Var(q ξ²) for ξ ~ N(0, w): 2 (w q)².
        let noise = NoiseModel::gaussian(DVector::zeros(1), DMatrix::from_element(1, 1, 0.04)).unwrap();
        let q = DMatrix::from_element(1, 1, 3.0);
        let wm = noise.weighted_moments(&q).unwrap();
        assert!((wm.m4 - 2.0 * (0.04f64 * 3.0).powi(2)).abs() < 1e-15);
        assert_eq!(wm.m3.norm(), 0.0);
    }

    #[test]
    fn mixture_m4_hand_derivation_and_mc() {
        // z = g + s with g ~ N(0, w), s ~ U[−h, h]:
        // Var(z²) = 2w² + (4/3)w h² + (4/45) h⁴.
        let (w, h, q): (f64, f64, f64) = (0.09, 0.7, 2.0);
        let noise = NoiseModel::mixture(
            DVector::zeros(1),
            DMatrix::from_element(1, 1, w),
            DVector::from_element(1, h),
        )
        .unwrap();
        let qm = DMatrix::from_element(1, 1, q);
        let wm = noise.weighted_moments(&qm).unwrap();
        let hand = q * q * (2.0 * w * w + 4.0 / 3.0 * w * h * h + 4.0 / 45.0 * h.powi(4));
        assert!((wm.m4 - hand).abs() < 1e-12 * (1.0 + hand), "closed {} vs hand {hand}", wm.m4);
        // Covariance: w + h²/3.
        assert!((noise.cov()[(0, 0)] - (w + h * h / 3.0)).abs() < 1e-15);

        // Independent MC check of the same quantity.
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let draws = 400_000;
        let mut sum = 0.0f64;
        let mut sumsq = 0.0f64;
        let vals: Vec<f64> = (0..draws).map(|_| {
            let z = noise.sample(&mut rng)[0];
            q * z * z
        }).collect();
        for v in &vals {
            sum += v;
        }
        let mean = sum / draws as f64;
        for v in &vals {
            sumsq += (v - mean) * (v - mean);
        }
        let mc_var = sumsq / (draws - 1) as f64;
        // Var of the sample variance scales with the 8th moment; 2% is a
        // comfortable band at 4e5 draws.
        assert!((mc_var - hand).abs() < 0.02 * hand, "mc {mc_var} vs {hand}");
    }

    #[test]
    fn mixture_cross_term_two_dim() {
        // Off-diagonal Q exercises the 2/9 cross term.
        let noise = NoiseModel::mixture(
            DVector::zeros(2),
            DMatrix::zeros(2, 2),
            DVector::from_vec(vec![0.5, 0.8]),
        )
        .unwrap();
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 2.0]);
        let wm = noise.weighted_moments(&q).unwrap();
        let (h1, h2) = (0.5f64, 0.8f64);
        let (w1, w2) = (h1 * h1 / 3.0, h2 * h2 / 3.0);
        // Var(q11 s1² + 2 q12 s1 s2 + q22 s2²)
        // = q11² Var(s1²) + q22² Var(s2²) + 4 q12² w1 w2.
        let var_s = |h: f64| 4.0 / 45.0 * h.powi(4);
        let hand = var_s(h1) + 4.0 * var_s(h2) + 4.0 * 0.4 * 0.4 * w1 * w2;
        assert!((wm.m4 - hand).abs() < 1e-12 * (1.0 + hand), "{} vs {hand}", wm.m4);
    }

    #[test]
    fn empirical_moments_match_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = 0.25f64;
        let gauss = NoiseModel::gaussian(DVector::zeros(1), DMatrix::from_element(1, 1, w)).unwrap();
        let bank: Vec<DVector<f64>> = (0..40_000).map(|_| gauss.sample(&mut rng)).collect();
        let emp = NoiseModel::empirical(bank).unwrap();
        let q = DMatrix::identity(1, 1);
        let wm_emp = emp.weighted_moments(&q).unwrap();
        let wm_gauss = gauss.weighted_moments(&q).unwrap();
        assert!((emp.cov()[(0, 0)] - w).abs() < 0.01);
        assert!((wm_emp.m4 - wm_gauss.m4).abs() < 0.1 * wm_gauss.m4);
        assert!(wm_emp.m3.norm() < 0.05);
    }

    #[test]
    fn empirical_needs_enough_samples() {
        let bank: Vec<DVector<f64>> = (0..100).map(|_| DVector::zeros(1)).collect();
        assert!(NoiseModel::empirical(bank).is_err());
    }

    #[test]
    fn risk_analytic_matches_mc() {
        let (dynamics, policy) = scalar_system(0.7);
        let noise = NoiseModel::gaussian(DVector::zeros(1), DMatrix::from_element(1, 1, 0.05)).unwrap();
        let q = DMatrix::identity(1, 1);
        let exact = risk_value_analytic(&policy, &dynamics, &q, &noise).unwrap();
        let est = risk_value_mc(&policy, &dynamics, &q, &noise, 3000, 40, 11).unwrap();
        let tol = 4.0 * est.std_error + exact / 300.0;
        assert!((est.mean - exact).abs() < tol, "mc {} vs {exact} (tol {tol})", est.mean);
    }

    #[test]
    fn definitional_and_reformulated_offset_identity() {
        // R_def = R_reform + m₄ − 4 tr((WQ)²) for zero-mean noise.
        let (dynamics, policy) = scalar_system(0.6);
        let noise = NoiseModel::mixture(
            DVector::zeros(1),
            DMatrix::from_element(1, 1, 0.02),
            DVector::from_element(1, 0.3),
        )
        .unwrap();
        let q = DMatrix::from_element(1, 1, 1.5);
        let reform = risk_value_analytic(&policy, &dynamics, &q, &noise).unwrap();
        let wm = noise.weighted_moments(&q).unwrap();
        let wq = noise.cov() * &q;
        let offset = wm.m4 - 4.0 * (&wq * &wq).trace();
        let expected_def = reform + offset;
        let est = risk_definition_mc(&policy, &dynamics, &q, &noise, 3000, 60, 23).unwrap();
        let tol = 4.0 * est.std_error + expected_def.abs() / 100.0;
        assert!(
            (est.mean - expected_def).abs() < tol,
            "definitional mc {} vs reform+offset {expected_def} (tol {tol})",
            est.mean
        );
    }

    #[test]
    fn c_bar_formula() {
        let noise = NoiseModel::gaussian(DVector::zeros(1), DMatrix::from_element(1, 1, 0.1)).unwrap();
        let q = DMatrix::from_element(1, 1, 2.0);
        let risk = RiskParams { tolerance: 0.5, multiplier_bound: 10.0 };
        // Gaussian: m₄ = 2 tr((WQ)²) so c̄ = c + 2 tr((WQ)²) = 0.5 + 2·0.04.
        let cb: f64 = risk.c_bar(&q, &noise).unwrap();
        assert!((cb - 0.58).abs() < 1e-14, "c_bar {cb}");
    }

    #[test]
    fn lagrangian_routes_agree() {
        // Two-state system, nonzero mean, both analytic routes must agree to
        // numerical precision; the MC route within its error bars.
        let a = DMatrix::from_row_slice(2, 2, &[0.7, 0.2, -0.1, 0.5]);
        let b = DMatrix::from_row_slice(2, 1, &[0.1, 0.3]);
        let dynamics = DiscreteDynamics::from_matrices(a, b, 0.01);
        let k = DMatrix::from_row_slice(1, 2, &[0.2, -0.1]);
        let policy = Policy::new(k, GainMask::full(1, 2)).unwrap();
        let weights = CostWeights::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.1, 2.0]),
            DMatrix::identity(1, 1) * 0.5,
        )
        .unwrap();
        let noise = NoiseModel::gaussian(
            DVector::from_vec(vec![0.01, -0.02]),
            DMatrix::from_row_slice(2, 2, &[0.04, 0.01, 0.01, 0.03]),
        )
        .unwrap();
        let risk = RiskParams { tolerance: 0.1, multiplier_bound: 50.0 };
        let lambda = 7.0;
        let va: f64 = lagrangian(&policy, lambda, &dynamics, &weights, &noise, &risk, EvalMode::Analytic).unwrap();
        let vq = lagrangian(&policy, lambda, &dynamics, &weights, &noise, &risk, EvalMode::AnalyticQLambda).unwrap();
        assert!((va - vq).abs() < 1e-10 * (1.0 + va.abs()), "analytic {va} vs q-lambda {vq}");
        let vmc = lagrangian(
            &policy,
            lambda,
            &dynamics,
            &weights,
            &noise,
            &risk,
            EvalMode::MonteCarlo { steps: 2000, rollouts: 30, seed: 3 },
        )
        .unwrap();
        assert!((vmc - va).abs() < 0.05 * (1.0 + va.abs()), "mc {vmc} vs analytic {va}");
    }

    #[test]
    fn multiplier_bounds_enforced() {
        let (dynamics, policy) = scalar_system(0.5);
        let noise = NoiseModel::gaussian(DVector::zeros(1), DMatrix::from_element(1, 1, 0.01)).unwrap();
        let weights = CostWeights::new(DMatrix::identity(1, 1), DMatrix::identity(1, 1)).unwrap();
        let risk = RiskParams { tolerance: 0.1, multiplier_bound: 5.0 };
        for bad in [-1.0, 5.1] {
            assert!(matches!(
                lagrangian(&policy, bad, &dynamics, &weights, &noise, &risk, EvalMode::Analytic),
                Err(Error::MultiplierOutOfRange { .. })
            ));
        }
    }

    #[test]
    fn sampler_streams_reproducible() {
        let noise = NoiseModel::mixture(
            DVector::zeros(2),
            DMatrix::identity(2, 2) * 0.01,
            DVector::from_element(2, 0.1),
        )
        .unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(7);
        let mut r2 = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            assert_eq!(noise.sample(&mut r1), noise.sample(&mut r2));
        }
    }
}
