//! Case-file schema (TOML) and assembly of the full model stack from it.

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::control::cost::CostWeights;
use crate::control::mask::{build_mask, GainMask};
use crate::dynamics::linearize::{assemble_continuous, discretize, ContinuousDynamics, DiscreteDynamics, StateLayout};
use crate::dynamics::network::{kron_reduce, pf_jacobian, NodeKind, ReducedNetwork};
use crate::dynamics::operating_point::{solve_operating_point, OperatingPoint};
use crate::dynamics::params::{GfmParams, SgParams};
use crate::dynamics::simulate::NonlinearCase;
use crate::error::{Error, Result};
use crate::risk::{NoiseModel, RiskParams};

pub const SCHEMA_VERSION: u32 = 1;

/// Paper-reported GFM defaults.
pub mod gfm_defaults {
    pub const TAU: f64 = 0.01;
    pub const P_DROOP: f64 = 0.01;
    pub const Q_DROOP: f64 = 0.05;
    pub const PI_PROPORTIONAL: f64 = 0.01;
    pub const PI_INTEGRAL: f64 = 5.86;
}

fn default_tau() -> f64 {
    gfm_defaults::TAU
}
fn default_p_droop() -> f64 {
    gfm_defaults::P_DROOP
}
fn default_q_droop() -> f64 {
    gfm_defaults::Q_DROOP
}
fn default_pi_p() -> f64 {
    gfm_defaults::PI_PROPORTIONAL
}
fn default_pi_i() -> f64 {
    gfm_defaults::PI_INTEGRAL
}
fn default_v_set() -> f64 {
    1.0
}
fn default_one() -> f64 {
    1.0
}
fn default_nominal_hz() -> f64 {
    60.0
}
fn default_dt() -> f64 {
    0.01
}
fn default_reactive_fraction() -> f64 {
    0.2
}
fn default_multiplier_bound() -> f64 {
    100.0
}
fn default_horizon() -> f64 {
    6.0
}
fn default_scenario_count() -> usize {
    100
}
fn default_substeps() -> usize {
    10
}
fn default_smoothing_radius() -> f64 {
    0.1
}
fn default_step_size() -> f64 {
    1e-4
}
fn default_outer_iterations() -> usize {
    50
}
fn default_zopg_samples() -> usize {
    20
}
fn default_penalty() -> f64 {
    1e6
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CaseFile {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub system: SystemSection,
    pub network: NetworkSection,
    #[serde(default)]
    pub sg: Vec<SgSection>,
    #[serde(default)]
    pub gfm: Vec<GfmSection>,
    pub communication: CommunicationSection,
    #[serde(default)]
    pub cost: CostSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub risk: RiskSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub testing: TestingSection,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    /// Control time step Δt (s).
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_nominal_hz")]
    pub nominal_frequency_hz: f64,
}

/// Either a prebuilt reduced network or a branch list over a fuller bus set
/// with the SG/GFM buses retained and the rest Kron-eliminated.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    /// Prebuilt reduced conductance matrix (row-major), SG nodes first.
    #[serde(default)]
    pub reduced_conductance: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub reduced_susceptance: Option<Vec<Vec<f64>>>,
    /// Full bus count when building from branches.
    #[serde(default)]
    pub bus_count: Option<usize>,
    #[serde(default)]
    pub branch: Vec<BranchSection>,
    /// Bus ids of the SG nodes (reduced ordering follows this list).
    #[serde(default)]
    pub sg_buses: Vec<usize>,
    /// Bus ids of the GFM nodes.
    #[serde(default)]
    pub gfm_buses: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BranchSection {
    pub from: usize,
    pub to: usize,
    #[serde(default)]
    pub resistance: f64,
    pub reactance: f64,
    /// Total line-charging susceptance, split across both ends.
    #[serde(default)]
    pub charging: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SgSection {
    pub inertia: f64,
    pub damping: f64,
    pub mech_power: f64,
    #[serde(default = "default_one")]
    pub voltage: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GfmSection {
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_p_droop")]
    pub p_droop: f64,
    #[serde(default = "default_q_droop")]
    pub q_droop: f64,
    #[serde(default = "default_pi_p")]
    pub pi_proportional: f64,
    #[serde(default = "default_pi_i")]
    pub pi_integral: f64,
    #[serde(default = "default_v_set")]
    pub v_set: f64,
    #[serde(default)]
    pub p_set: f64,
    #[serde(default)]
    pub q_set: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CommunicationSection {
    /// Undirected edges over node ids 0..N_g+N_f, SG nodes first.
    pub edges: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    pub angle_weight: f64,
    pub frequency_weight: f64,
    pub voltage_weight: f64,
    pub control_weight: f64,
}

impl Default for CostSection {
    fn default() -> Self {
        // Non-authoritative defaults; the reported experiments do not list
        // their weights.
        CostSection { angle_weight: 0.1, frequency_weight: 1.0, voltage_weight: 1.0, control_weight: 0.1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    /// Per-step standard deviation injected on every Δω row.
    pub omega_std: f64,
    /// Per-step standard deviation injected on every ΔV^e row.
    pub verr_std: f64,
    /// Half-width L of the uniform step-load component folded into the
    /// training disturbance (pu, per GFM bus); 0 disables the component.
    #[serde(default)]
    pub training_load_level: f64,
    /// Persistent load imbalance (pu, per GFM bus) giving the training
    /// disturbance a nonzero mean ξ̄ through the droop channels. The Riccati
    /// baseline ignores ξ̄ by construction, so this is what separates it from
    /// the trained policies under sustained load steps.
    #[serde(default)]
    pub training_load_bias: f64,
    /// Optional explicit per-state std overriding the channel defaults.
    #[serde(default)]
    pub state_std: Option<Vec<f64>>,
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection {
            omega_std: 1e-3,
            verr_std: 1e-3,
            training_load_level: 0.0,
            training_load_bias: 0.0,
            state_std: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RiskSection {
    pub tolerance: f64,
    #[serde(default = "default_multiplier_bound")]
    pub multiplier_bound: f64,
}

impl Default for RiskSection {
    fn default() -> Self {
        RiskSection { tolerance: 0.2, multiplier_bound: default_multiplier_bound() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    #[serde(default = "default_smoothing_radius")]
    pub smoothing_radius: f64,
    #[serde(default = "default_step_size")]
    pub step_size: f64,
    #[serde(default = "default_outer_iterations")]
    pub outer_iterations: usize,
    #[serde(default = "default_zopg_samples")]
    pub zopg_samples: usize,
    #[serde(default = "default_penalty")]
    pub penalty: f64,
    /// Opt-in two-point (antithetic) ZOPG evaluation; the default one-point
    /// estimator follows the algorithm as written.
    #[serde(default)]
    pub antithetic: bool,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            smoothing_radius: default_smoothing_radius(),
            step_size: default_step_size(),
            outer_iterations: default_outer_iterations(),
            zopg_samples: default_zopg_samples(),
            penalty: default_penalty(),
            antithetic: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TestingSection {
    #[serde(default = "default_scenario_count")]
    pub scenario_count: usize,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    /// ΔQ_L = reactive_fraction · ΔP_L for generated scenarios.
    #[serde(default = "default_reactive_fraction")]
    pub reactive_fraction: f64,
    /// RK4 substeps per control interval in the nonlinear simulator.
    #[serde(default = "default_substeps")]
    pub substeps: usize,
}

impl Default for TestingSection {
    fn default() -> Self {
        TestingSection {
            scenario_count: default_scenario_count(),
            horizon: default_horizon(),
            reactive_fraction: default_reactive_fraction(),
            substeps: default_substeps(),
        }
    }
}

impl CaseFile {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let case: CaseFile = toml::from_str(text).map_err(|e| Error::Case {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        case.validate(origin)?;
        Ok(case)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Case { path: "<save>".into(), message: e.to_string() })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    fn validate(&self, origin: &str) -> Result<()> {
        let fail = |message: String| Error::Case { path: origin.to_string(), message };
        if self.schema_version != SCHEMA_VERSION {
            return Err(fail(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.system.dt <= 0.0 {
            return Err(fail("system.dt must be positive".into()));
        }
        if self.gfm.is_empty() {
            return Err(fail("at least one GFM is required (the control input is empty otherwise)".into()));
        }
        let has_reduced = self.network.reduced_conductance.is_some() || self.network.reduced_susceptance.is_some();
        let has_branches = !self.network.branch.is_empty();
        match (has_reduced, has_branches) {
            (true, true) => {
                return Err(fail("network: give either reduced matrices or a branch list, not both".into()))
            }
            (false, false) => return Err(fail("network: missing both reduced matrices and branch list".into())),
            (true, false) => {
                let g = self
                    .network
                    .reduced_conductance
                    .as_ref()
                    .ok_or_else(|| fail("network.reduced_conductance missing".into()))?;
                let b = self
                    .network
                    .reduced_susceptance
                    .as_ref()
                    .ok_or_else(|| fail("network.reduced_susceptance missing".into()))?;
                let n = self.sg.len() + self.gfm.len();
                for (label, m) in [("reduced_conductance", g), ("reduced_susceptance", b)] {
                    if m.len() != n || m.iter().any(|row| row.len() != n) {
                        return Err(fail(format!("network.{label} must be {n}x{n} (SG rows first)")));
                    }
                }
            }
            (false, true) => {
                let nb = self
                    .network
                    .bus_count
                    .ok_or_else(|| fail("network.bus_count required with a branch list".into()))?;
                if self.network.sg_buses.len() != self.sg.len() {
                    return Err(fail("network.sg_buses must list one bus per [[sg]] entry".into()));
                }
                if self.network.gfm_buses.len() != self.gfm.len() {
                    return Err(fail("network.gfm_buses must list one bus per [[gfm]] entry".into()));
                }
                for &bus in self.network.sg_buses.iter().chain(self.network.gfm_buses.iter()) {
                    if bus >= nb {
                        return Err(fail(format!("bus id {bus} out of range 0..{nb}")));
                    }
                }
                for br in &self.network.branch {
                    if br.from >= nb || br.to >= nb {
                        return Err(fail(format!("branch {}-{} out of range", br.from, br.to)));
                    }
                    if br.reactance == 0.0 && br.resistance == 0.0 {
                        return Err(fail(format!("branch {}-{} has zero impedance", br.from, br.to)));
                    }
                }
            }
        }
        let n_nodes = self.sg.len() + self.gfm.len();
        for &(a, b) in &self.communication.edges {
            if a >= n_nodes || b >= n_nodes {
                return Err(fail(format!("communication edge ({a},{b}) out of range 0..{n_nodes}")));
            }
        }
        if self.risk.tolerance < 0.0 || self.risk.multiplier_bound < 0.0 {
            return Err(fail("risk.tolerance and risk.multiplier_bound must be nonnegative".into()));
        }
        if let Some(s) = &self.noise.state_std {
            let nx = 2 * self.sg.len() + 4 * self.gfm.len();
            if s.len() != nx {
                return Err(fail(format!("noise.state_std must have length {nx}")));
            }
        }
        Ok(())
    }
}

/// Fully assembled model stack built from a [`CaseFile`].
#[derive(Debug, Clone)]
pub struct CaseModel {
    pub case: CaseFile,
    pub net: ReducedNetwork<f64>,
    pub op: OperatingPoint<f64>,
    pub sg: Vec<SgParams<f64>>,
    pub gfm: Vec<GfmParams<f64>>,
    pub layout: StateLayout,
    pub continuous: ContinuousDynamics<f64>,
    pub dynamics: DiscreteDynamics<f64>,
    pub mask: GainMask,
    pub weights: CostWeights<f64>,
    pub noise: NoiseModel<f64>,
    pub risk: RiskParams<f64>,
}

impl CaseModel {
    pub fn build(case: CaseFile) -> Result<Self> {
        let omega0 = 2.0 * std::f64::consts::PI * case.system.nominal_frequency_hz;
        let sg: Vec<SgParams<f64>> = case
            .sg
            .iter()
            .map(|s| SgParams {
                inertia: s.inertia,
                damping: s.damping,
                nominal_speed: omega0,
                mech_power: s.mech_power,
                voltage: s.voltage,
            })
            .collect();
        let gfm: Vec<GfmParams<f64>> = case
            .gfm
            .iter()
            .map(|g| GfmParams {
                tau: g.tau,
                p_droop: g.p_droop,
                q_droop: g.q_droop,
                pi_proportional: g.pi_proportional,
                pi_integral: g.pi_integral,
                nominal_speed: omega0,
                v_set: g.v_set,
                p_set: g.p_set,
                q_set: g.q_set,
            })
            .collect();

        let kinds: Vec<NodeKind> = sg
            .iter()
            .map(|_| NodeKind::Sg)
            .chain(gfm.iter().map(|_| NodeKind::Gfm))
            .collect();

        let net = if let (Some(gm), Some(bm)) =
            (&case.network.reduced_conductance, &case.network.reduced_susceptance)
        {
            let n = kinds.len();
            let g = DMatrix::from_fn(n, n, |i, j| gm[i][j]);
            let b = DMatrix::from_fn(n, n, |i, j| bm[i][j]);
            ReducedNetwork::new(g, b, kinds)?
        } else {
            let nb = case.network.bus_count.unwrap();
            let mut y = DMatrix::<Complex<f64>>::zeros(nb, nb);
            for br in &case.network.branch {
                let z = Complex::new(br.resistance, br.reactance);
                let ys = Complex::new(1.0, 0.0) / z;
                let half_charge = Complex::new(0.0, br.charging / 2.0);
                y[(br.from, br.from)] += ys + half_charge;
                y[(br.to, br.to)] += ys + half_charge;
                y[(br.from, br.to)] -= ys;
                y[(br.to, br.from)] -= ys;
            }
            let retained: Vec<usize> = case
                .network
                .sg_buses
                .iter()
                .chain(case.network.gfm_buses.iter())
                .copied()
                .collect();
            kron_reduce(&y, &retained, kinds)?
        };

        let op = solve_operating_point(&net, &sg, &gfm)?;
        // The reference SG absorbs the power-flow slack; carry its solved
        // injection as the mechanical power so the equilibrium is exact.
        let mut sg = sg;
        for (i, s) in sg.iter_mut().enumerate() {
            s.mech_power = op.p[i];
        }
        let jac = pf_jacobian(&op.delta, &op.v, &net)?;
        let continuous = assemble_continuous(&sg, &gfm, &jac)?;
        let dynamics = discretize(&continuous, case.system.dt)?;
        let layout = continuous.layout;

        let mask = build_mask(&case.communication.edges, sg.len(), gfm.len())?;
        let weights = CostWeights::new(build_q(&case.cost, &layout), build_r(&case.cost, &layout))?;
        let noise = build_noise(&case, &gfm, &layout)?;
        let risk = RiskParams {
            tolerance: case.risk.tolerance,
            multiplier_bound: case.risk.multiplier_bound,
        };
        Ok(CaseModel { case, net, op, sg, gfm, layout, continuous, dynamics, mask, weights, noise, risk })
    }

    pub fn nonlinear_case(&self) -> NonlinearCase<f64> {
        NonlinearCase {
            net: self.net.clone(),
            op: self.op.clone(),
            sg: self.sg.clone(),
            gfm: self.gfm.clone(),
        }
    }
}

fn build_q(cost: &CostSection, layout: &StateLayout) -> DMatrix<f64> {
    let mut d = DVector::zeros(layout.state_dim());
    for i in 0..layout.n_sg {
        d[layout.delta_sg(i)] = cost.angle_weight;
        d[layout.omega_sg(i)] = cost.frequency_weight;
    }
    for j in 0..layout.n_gfm {
        d[layout.delta_gfm(j)] = cost.angle_weight;
        d[layout.omega_gfm(j)] = cost.frequency_weight;
        d[layout.verr_gfm(j)] = cost.voltage_weight;
        d[layout.v_gfm(j)] = cost.voltage_weight;
    }
    DMatrix::from_diagonal(&d)
}

fn build_r(cost: &CostSection, layout: &StateLayout) -> DMatrix<f64> {
    DMatrix::identity(layout.input_dim(), layout.input_dim()) * cost.control_weight
}

/// Default disturbance: Gaussian on the Δω and ΔV^e rows, optionally mixed
/// with a per-step uniform component on the GFM droop channels standing in
/// for step-load fluctuations during training.
fn build_noise(case: &CaseFile, gfm: &[GfmParams<f64>], layout: &StateLayout) -> Result<NoiseModel<f64>> {
    let nx = layout.state_dim();
    let dt = case.system.dt;
    let mut var = DVector::zeros(nx);
    if let Some(explicit) = &case.noise.state_std {
        for (i, s) in explicit.iter().enumerate() {
            var[i] = s * s;
        }
    } else {
        for i in 0..layout.n_sg {
            var[layout.omega_sg(i)] = case.noise.omega_std.powi(2);
        }
        for j in 0..layout.n_gfm {
            var[layout.omega_gfm(j)] = case.noise.omega_std.powi(2);
            var[layout.verr_gfm(j)] = case.noise.verr_std.powi(2);
        }
    }
    let level = case.noise.training_load_level;
    let rho = case.testing.reactive_fraction;
    // Nonzero mean: per-step image of a persistent load imbalance through the
    // droop channels. The Riccati baseline is blind to this component.
    let bias = case.noise.training_load_bias;
    let mut mean = DVector::zeros(nx);
    if bias != 0.0 {
        for (j, g) in gfm.iter().enumerate() {
            let wdot = g.p_droop / g.tau * bias;
            let vedot = g.q_droop / g.tau * (rho * bias);
            mean[layout.omega_gfm(j)] = dt * wdot;
            mean[layout.verr_gfm(j)] = dt * vedot;
            mean[layout.v_gfm(j)] = dt * g.pi_proportional * vedot;
        }
    }
    if level == 0.0 {
        return NoiseModel::gaussian_diag(mean, var);
    }
    // Uniform half-widths: the per-step image of a ±level pu load step (and
    // its reactive fraction) through the droop channels.
    let mut half = DVector::zeros(nx);
    for (j, g) in gfm.iter().enumerate() {
        let wdot = g.p_droop / g.tau * level;
        let vedot = g.q_droop / g.tau * (rho * level);
        half[layout.omega_gfm(j)] = dt * wdot;
        half[layout.verr_gfm(j)] = dt * vedot;
        half[layout.v_gfm(j)] = dt * g.pi_proportional * vedot;
    }
    NoiseModel::mixture(mean, DMatrix::from_diagonal(&var), half)
}
