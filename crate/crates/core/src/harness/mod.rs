//! Reproducibility harness: case files, scenario suites, the experiment
//! protocol, and on-disk artifacts. Concrete over `f64`.

pub mod case;
pub mod io;
pub mod run;
pub mod scenario;

pub use case::{CaseFile, CaseModel};
pub use io::{load_policy, save_policy, PolicyFile};
pub use run::{
    baseline_policy, comparison_table, realized_objective, replay_scenario, run_testing, run_training,
    worst_scenario, PolicyReport, ScenarioOutcome, SummaryStats, TrainMode, TrainingOutcome,
};
pub use scenario::{gen_scenarios, Scenario, ScenarioSuite};
