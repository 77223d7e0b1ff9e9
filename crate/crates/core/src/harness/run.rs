//! Experiment protocol: train the structured policies, test every policy on
//! a shared nonlinear scenario suite, and summarize the realized costs.

use nalgebra::DVector;

use crate::control::cost::is_stabilizing;
use crate::control::dare::dare_baseline;
use crate::control::mask::{project_to_mask, Policy};
use crate::error::{Error, Result};
use crate::harness::case::CaseModel;
use crate::harness::scenario::ScenarioSuite;
use crate::dynamics::simulate::{simulate_nonlinear, NonlinearTrajectory};
use crate::optimizer::{find_initial_policy, sgdmax, Problem, TrainingConfig, TrainingTrace};
use crate::risk::RiskParams;

/// Which policy variant to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Risk-neutral: the multiplier bound is forced to zero, so the
    /// constraint never engages and SGDmax reduces to plain policy descent.
    Gfm,
    /// Full mean-variance risk constraint with the configured Λ.
    GfmRisk,
}

impl TrainMode {
    pub fn label(&self) -> &'static str {
        match self {
            TrainMode::Gfm => "gfm",
            TrainMode::GfmRisk => "gfm-risk",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub mode: TrainMode,
    pub initial: Policy<f64>,
    pub policy: Policy<f64>,
    pub trace: TrainingTrace<f64>,
}

/// Train one policy variant on the case's linearized model.
pub fn run_training(model: &CaseModel, mode: TrainMode, cfg: &TrainingConfig<f64>) -> Result<TrainingOutcome> {
    let risk = match mode {
        TrainMode::Gfm => RiskParams { tolerance: model.risk.tolerance, multiplier_bound: 0.0 },
        TrainMode::GfmRisk => model.risk,
    };
    let problem = Problem {
        dynamics: &model.dynamics,
        weights: &model.weights,
        noise: &model.noise,
        risk,
    };
    let initial = find_initial_policy(&model.dynamics, &model.mask, &model.weights)?;
    let (policy, trace) = sgdmax(&initial, cfg, &problem)?;
    Ok(TrainingOutcome { mode, initial, policy, trace })
}

/// The unstructured certainty-equivalent LQR gain, used as the comparison
/// baseline. Errors if it does not stabilize the model (it should).
pub fn baseline_policy(model: &CaseModel) -> Result<Policy<f64>> {
    let k = dare_baseline(&model.dynamics, &model.weights)?;
    let full = crate::control::mask::GainMask::full(k.nrows(), k.ncols());
    let policy = project_to_mask(&k, &full)?;
    let stab = is_stabilizing(&policy, &model.dynamics);
    if !stab.stable {
        return Err(Error::NotStabilizing { rho: stab.spectral_radius });
    }
    Ok(policy)
}

/// Realized per-scenario outcome on the nonlinear simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutcome {
    pub scenario: usize,
    /// Time-averaged x'Qx + u'Ru over the run, in deviation coordinates;
    /// `None` when the closed loop diverged.
    pub objective: Option<f64>,
    pub peak_frequency_deviation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyReport {
    pub name: String,
    pub outcomes: Vec<ScenarioOutcome>,
    pub summary: SummaryStats,
}

/// Order statistics over the finite per-scenario objectives. Quartiles use
/// linear interpolation between order statistics; variance is the two-pass
/// sample variance.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SummaryStats {
    pub count: usize,
    pub divergent: usize,
    pub mean: f64,
    pub variance: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

impl SummaryStats {
    pub fn from_outcomes(outcomes: &[ScenarioOutcome]) -> Self {
        let mut vals: Vec<f64> = outcomes.iter().filter_map(|o| o.objective).collect();
        let divergent = outcomes.len() - vals.len();
        if vals.is_empty() {
            return SummaryStats { count: 0, divergent, ..Default::default() };
        }
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = vals.len();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let variance = if n > 1 {
            vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        SummaryStats {
            count: n,
            divergent,
            mean,
            variance,
            min: vals[0],
            q1: quantile(&vals, 0.25),
            median: quantile(&vals, 0.5),
            q3: quantile(&vals, 0.75),
            max: vals[n - 1],
        }
    }
}

/// Realized objective of one nonlinear run: the time average of
/// x_k'Q x_k + u_k'R u_k over the control steps.
pub fn realized_objective(model: &CaseModel, traj: &NonlinearTrajectory<f64>) -> f64 {
    let q = &model.weights.q;
    let r = &model.weights.r;
    let steps = traj.inputs.len();
    let mut acc = 0.0;
    for k in 0..steps {
        let x = &traj.states[k];
        let u = &traj.inputs[k];
        acc += (x.transpose() * q * x)[(0, 0)] + (u.transpose() * r * u)[(0, 0)];
    }
    acc / steps as f64
}

fn peak_frequency(traj: &NonlinearTrajectory<f64>) -> f64 {
    let layout = traj.layout;
    let mut peak = 0.0f64;
    for x in &traj.states {
        for i in 0..layout.n_sg {
            peak = peak.max(x[layout.omega_sg(i)].abs());
        }
        for j in 0..layout.n_gfm {
            peak = peak.max(x[layout.omega_gfm(j)].abs());
        }
    }
    peak
}

/// Evaluate one policy on every scenario of the suite.
pub fn run_testing(model: &CaseModel, name: &str, policy: &Policy<f64>, suite: &ScenarioSuite) -> Result<PolicyReport> {
    let case = model.nonlinear_case();
    let dt = model.case.system.dt;
    let horizon = model.case.testing.horizon;
    let substeps = model.case.testing.substeps;
    let mut outcomes = Vec::with_capacity(suite.scenarios.len());
    for sc in &suite.scenarios {
        match simulate_nonlinear(&case, policy, &sc.disturbance, horizon, dt, substeps) {
            Ok(traj) => outcomes.push(ScenarioOutcome {
                scenario: sc.index,
                objective: Some(realized_objective(model, &traj)),
                peak_frequency_deviation: peak_frequency(&traj),
            }),
            Err(Error::SimulationDiverged { .. }) => outcomes.push(ScenarioOutcome {
                scenario: sc.index,
                objective: None,
                peak_frequency_deviation: f64::INFINITY,
            }),
            Err(e) => return Err(e),
        }
    }
    let summary = SummaryStats::from_outcomes(&outcomes);
    Ok(PolicyReport { name: name.to_string(), outcomes, summary })
}

/// The scenario whose realized objective is worst (divergent runs first).
pub fn worst_scenario(report: &PolicyReport) -> Option<usize> {
    report
        .outcomes
        .iter()
        .max_by(|a, b| {
            let av = a.objective.unwrap_or(f64::INFINITY);
            let bv = b.objective.unwrap_or(f64::INFINITY);
            av.partial_cmp(&bv).unwrap()
        })
        .map(|o| o.scenario)
}

/// One nonlinear run for export: the given scenario under the given policy.
pub fn replay_scenario(
    model: &CaseModel,
    policy: &Policy<f64>,
    suite: &ScenarioSuite,
    scenario: usize,
) -> Result<NonlinearTrajectory<f64>> {
    let sc = suite
        .scenarios
        .iter()
        .find(|s| s.index == scenario)
        .ok_or_else(|| Error::DimensionMismatch(format!("scenario {scenario} not in suite")))?;
    simulate_nonlinear(
        &model.nonlinear_case(),
        policy,
        &sc.disturbance,
        model.case.testing.horizon,
        model.case.system.dt,
        model.case.testing.substeps,
    )
}

/// Render a side-by-side comparison table of several reports.
pub fn comparison_table(reports: &[PolicyReport]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<10} {:>6} {:>4} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12}\n",
        "policy", "n", "div", "median", "q1", "q3", "min", "max", "variance"
    ));
    for r in reports {
        let s = &r.summary;
        out.push_str(&format!(
            "{:<10} {:>6} {:>4} {:>12.5e} {:>12.5e} {:>12.5e} {:>12.5e} {:>12.5e} {:>12.5e}\n",
            r.name, s.count, s.divergent, s.median, s.q1, s.q3, s.min, s.max, s.variance
        ));
    }
    out
}

/// Convenience: zero disturbance vector sized for the case.
pub fn zero_disturbance(model: &CaseModel) -> DVector<f64> {
    DVector::zeros(model.layout.n_gfm)
}
