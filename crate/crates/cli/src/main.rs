//! `rclqr`: case validation, policy training, nonlinear testing, report
//! summaries, and a quick end-to-end demo.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use rclqr_core::control::is_stabilizing;
use rclqr_core::error::Error;
use rclqr_core::harness::{
    baseline_policy, comparison_table, gen_scenarios, load_policy, replay_scenario, run_testing,
    run_training, save_policy, worst_scenario, CaseFile, CaseModel, PolicyReport, ScenarioOutcome,
    SummaryStats, TrainMode,
};
use rclqr_core::harness::io::{write_report_csv, write_trace_csv, write_trajectory_csv};
use rclqr_core::optimizer::TrainingConfig;

#[derive(Parser)]
#[command(name = "rclqr", version, about = "Risk-constrained decentralized LQR for SG+GFM power systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Case file (TOML).
    #[arg(long)]
    case: PathBuf,
    /// Base seed for all derived random streams.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; created if absent.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Optional TOML overriding the case's [training]/[testing]/[risk]
    /// sections (same schema, other sections ignored).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Copy, Clone, ValueEnum)]
enum ModeArg {
    Gfm,
    GfmRisk,
}

#[derive(Copy, Clone, ValueEnum)]
enum LevelArg {
    /// ±0.5 pu load steps.
    Low,
    /// ±1.0 pu load steps.
    High,
}

impl LevelArg {
    fn value(self) -> f64 {
        match self {
            LevelArg::Low => 0.5,
            LevelArg::High => 1.0,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate a case file; print the assembled model summary.
    Validate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train a structured policy (SGDmax with zero-order gradients).
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// gfm: risk-neutral; gfm-risk: with the mean-variance constraint.
        #[arg(long, value_enum, default_value_t = ModeArg::GfmRisk)]
        mode: ModeArg,
        /// Override the case's outer iteration count M.
        #[arg(long)]
        iterations: Option<usize>,
        /// Override the smoothing radius r.
        #[arg(long)]
        radius: Option<f64>,
        /// Override the step size η.
        #[arg(long)]
        step_size: Option<f64>,
        /// Override the ZOPG sample count N.
        #[arg(long)]
        samples: Option<usize>,
        /// Override the risk tolerance c.
        #[arg(long)]
        tolerance: Option<f64>,
        /// Override the multiplier bound Λ.
        #[arg(long)]
        multiplier_bound: Option<f64>,
    },
    /// Evaluate policies on random step-load scenarios in the nonlinear
    /// simulator.
    Test {
        #[command(flatten)]
        common: CommonArgs,
        /// Perturbation level.
        #[arg(long, value_enum, default_value_t = LevelArg::High)]
        level: LevelArg,
        /// Scenario count (defaults to the case's [testing] section).
        #[arg(long)]
        count: Option<usize>,
        /// Named policy files, repeatable: --policy gfm=out/policy-gfm.toml
        #[arg(long = "policy", value_name = "NAME=PATH")]
        policies: Vec<String>,
        /// Also evaluate the unstructured Riccati baseline.
        #[arg(long)]
        baseline: bool,
    },
    /// Recompute and print the comparison table from report CSV files.
    Summarize {
        /// Report CSV files produced by `test`.
        #[arg(long = "report", value_name = "PATH", required = true)]
        reports: Vec<PathBuf>,
    },
    /// Small end-to-end run on a case (validate, short training of both
    /// modes, a reduced test suite, summary).
    Demo {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Case { .. } | Error::DimensionMismatch(_) | Error::Io(_) | Error::MaskViolation
        | Error::EmptyMask | Error::MultiplierOutOfRange { .. } | Error::Noise(_) => 1,
        Error::SimulationDiverged { .. }
        | Error::PowerFlowDiverged { .. }
        | Error::NotStabilizing { .. }
        | Error::SingularEliminatedBlock { .. } => 2,
        Error::InitializationFailure => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn load_model(common: &CommonArgs) -> Result<CaseModel, Error> {
    let mut case = CaseFile::load(&common.case)?;
    if let Some(cfg_path) = &common.config {
        let text = std::fs::read_to_string(cfg_path)?;
        apply_overrides(&mut case, &text, &cfg_path.display().to_string())?;
    }
    CaseModel::build(case)
}

/// Merge the [training]/[testing]/[risk]/[noise] sections of an override file
/// into the case.
fn apply_overrides(case: &mut CaseFile, text: &str, origin: &str) -> Result<(), Error> {
    #[derive(serde::Deserialize)]
    struct Overrides {
        training: Option<rclqr_core::harness::case::TrainingSection>,
        testing: Option<rclqr_core::harness::case::TestingSection>,
        risk: Option<rclqr_core::harness::case::RiskSection>,
        noise: Option<rclqr_core::harness::case::NoiseSection>,
    }
    let ov: Overrides =
        toml::from_str(text).map_err(|e| Error::Case { path: origin.to_string(), message: e.to_string() })?;
    if let Some(t) = ov.training {
        case.training = t;
    }
    if let Some(t) = ov.testing {
        case.testing = t;
    }
    if let Some(r) = ov.risk {
        case.risk = r;
    }
    if let Some(n) = ov.noise {
        case.noise = n;
    }
    Ok(())
}

fn training_config(model: &CaseModel, seed: u64) -> TrainingConfig<f64> {
    let t = &model.case.training;
    TrainingConfig {
        smoothing_radius: t.smoothing_radius,
        step_size: t.step_size,
        outer_iterations: t.outer_iterations,
        zopg_samples: t.zopg_samples,
        penalty: t.penalty,
        base_seed: seed,
        antithetic: t.antithetic,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Validate { common } => {
            let model = load_model(&common)?;
            print_summary(&model);
            Ok(())
        }
        Command::Train { common, mode, iterations, radius, step_size, samples, tolerance, multiplier_bound } => {
            let mut model = load_model(&common)?;
            if let Some(c) = tolerance {
                model.risk.tolerance = c;
            }
            if let Some(l) = multiplier_bound {
                model.risk.multiplier_bound = l;
            }
            let mut cfg = training_config(&model, common.seed);
            if let Some(m) = iterations {
                cfg.outer_iterations = m;
            }
            if let Some(r) = radius {
                cfg.smoothing_radius = r;
            }
            if let Some(e) = step_size {
                cfg.step_size = e;
            }
            if let Some(n) = samples {
                cfg.zopg_samples = n;
            }
            let mode = match mode {
                ModeArg::Gfm => TrainMode::Gfm,
                ModeArg::GfmRisk => TrainMode::GfmRisk,
            };
            std::fs::create_dir_all(&common.out_dir)?;
            let out = run_training(&model, mode, &cfg)?;
            let label = mode.label();
            save_policy(&out.policy, &common.out_dir.join(format!("policy-{label}.toml")))?;
            write_trace_csv(&out.trace, &common.out_dir.join(format!("trace-{label}.csv")))?;
            let first = out.trace.records.first();
            let last = out.trace.records.last();
            if let (Some(f), Some(l)) = (first, last) {
                println!("{label}: objective {:.6e} -> {:.6e} over {} iterations", f.objective, l.objective, out.trace.records.len());
                println!("{label}: final slack {:.6e}, spectral radius {:.9}", l.slack, l.spectral_radius);
            }
            for w in &out.trace.warnings {
                eprintln!("warning: {w}");
            }
            Ok(())
        }
        Command::Test { common, level, count, policies, baseline } => {
            let model = load_model(&common)?;
            std::fs::create_dir_all(&common.out_dir)?;
            let count = count.unwrap_or(model.case.testing.scenario_count);
            let suite = gen_scenarios(
                model.layout.n_gfm,
                count,
                level.value(),
                model.case.testing.reactive_fraction,
                common.seed,
            );
            let mut named: Vec<(String, rclqr_core::control::Policy<f64>)> = Vec::new();
            if baseline {
                named.push(("baseline".into(), baseline_policy(&model)?));
            }
            for spec in &policies {
                let (name, path) = spec.split_once('=').ok_or_else(|| Error::Case {
                    path: spec.clone(),
                    message: "expected NAME=PATH".into(),
                })?;
                named.push((name.to_string(), load_policy(Path::new(path))?));
            }
            if named.is_empty() {
                return Err(Error::Case {
                    path: common.case.display().to_string(),
                    message: "no policies to test; pass --policy and/or --baseline".into(),
                });
            }
            let mut reports = Vec::new();
            for (name, policy) in &named {
                let report = run_testing(&model, name, policy, &suite)?;
                write_report_csv(&report, &common.out_dir.join(format!("report-{name}.csv")))?;
                if let Some(idx) = worst_scenario(&report) {
                    if let Ok(traj) = replay_scenario(&model, policy, &suite, idx) {
                        write_trajectory_csv(&traj, &common.out_dir.join(format!("worst-{name}.csv")))?;
                    }
                }
                reports.push(report);
            }
            let table = comparison_table(&reports);
            std::fs::write(common.out_dir.join("summary.txt"), &table)?;
            print!("{table}");
            Ok(())
        }
        Command::Summarize { reports } => {
            let mut parsed = Vec::new();
            for path in &reports {
                parsed.push(read_report_csv(path)?);
            }
            print!("{}", comparison_table(&parsed));
            Ok(())
        }
        Command::Demo { common } => {
            let model = load_model(&common)?;
            print_summary(&model);
            std::fs::create_dir_all(&common.out_dir)?;
            let mut cfg = training_config(&model, common.seed);
            cfg.outer_iterations = cfg.outer_iterations.min(10);
            let mut reports = Vec::new();
            let mut named = vec![("baseline".to_string(), baseline_policy(&model)?)];
            for mode in [TrainMode::Gfm, TrainMode::GfmRisk] {
                let out = run_training(&model, mode, &cfg)?;
                let label = mode.label();
                save_policy(&out.policy, &common.out_dir.join(format!("policy-{label}.toml")))?;
                write_trace_csv(&out.trace, &common.out_dir.join(format!("trace-{label}.csv")))?;
                println!("trained {label} ({} iterations)", out.trace.records.len());
                named.push((label.to_string(), out.policy));
            }
            let suite = gen_scenarios(model.layout.n_gfm, 20, 0.5, model.case.testing.reactive_fraction, common.seed);
            for (name, policy) in &named {
                let report = run_testing(&model, name, policy, &suite)?;
                write_report_csv(&report, &common.out_dir.join(format!("report-{name}.csv")))?;
                reports.push(report);
            }
            let table = comparison_table(&reports);
            std::fs::write(common.out_dir.join("summary.txt"), &table)?;
            print!("{table}");
            Ok(())
        }
    }
}

fn print_summary(model: &CaseModel) {
    let name = if model.case.name.is_empty() { "<unnamed>" } else { &model.case.name };
    println!("case: {name}");
    println!(
        "nodes: {} SG + {} GFM; state dim {}, input dim {}",
        model.layout.n_sg,
        model.layout.n_gfm,
        model.layout.state_dim(),
        model.layout.input_dim()
    );
    println!("free gain entries: {}", model.mask.n_free());
    let zero = rclqr_core::control::Policy::zero(model.mask.clone());
    let open = is_stabilizing(&zero, &model.dynamics);
    println!("open-loop spectral radius: {:.9}", open.spectral_radius);
    println!(
        "operating point: |delta| max {:.4} rad, V range [{:.4}, {:.4}]",
        model.op.delta.iter().fold(0.0f64, |a, d| a.max(d.abs())),
        model.op.v.iter().cloned().fold(f64::INFINITY, f64::min),
        model.op.v.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    println!("dt: {} s, risk tolerance c = {}", model.case.system.dt, model.risk.tolerance);
}

/// Parse a report CSV written by `test` back into a PolicyReport; the name is
/// recovered from the file name (`report-<name>.csv`).
fn read_report_csv(path: &Path) -> Result<PolicyReport, Error> {
    let text = std::fs::read_to_string(path)?;
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .map(|s| s.strip_prefix("report-").unwrap_or(s).to_string())
        .unwrap_or_else(|| "report".into());
    let mut outcomes = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 3 {
            return Err(Error::Case {
                path: path.display().to_string(),
                message: format!("line {}: expected at least 3 columns", lineno + 1),
            });
        }
        let scenario: usize = fields[0].parse().map_err(|_| Error::Case {
            path: path.display().to_string(),
            message: format!("line {}: bad scenario index", lineno + 1),
        })?;
        let diverged = fields[2].trim() == "true";
        let objective = if diverged {
            None
        } else {
            Some(fields[1].parse::<f64>().map_err(|_| Error::Case {
                path: path.display().to_string(),
                message: format!("line {}: bad objective", lineno + 1),
            })?)
        };
        let peak = fields
            .get(3)
            .and_then(|s| s.parse::<f64>().ok())
            .unwrap_or(f64::INFINITY);
        outcomes.push(ScenarioOutcome { scenario, objective, peak_frequency_deviation: peak });
    }
    if outcomes.is_empty() {
        return Err(Error::Case { path: path.display().to_string(), message: "empty report".into() });
    }
    let summary = SummaryStats::from_outcomes(&outcomes);
    Ok(PolicyReport { name, outcomes, summary })
}
