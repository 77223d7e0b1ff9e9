//! On-disk artifacts: policy files, training-trace CSV, per-scenario report
//! CSV, and trajectory CSV exports.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::control::mask::{build_mask, Policy};
use crate::dynamics::linearize::StateLayout;
use crate::dynamics::simulate::NonlinearTrajectory;
use crate::error::{Error, Result};
use crate::harness::run::PolicyReport;
use crate::optimizer::TrainingTrace;

pub const POLICY_SCHEMA_VERSION: u32 = 1;

/// Serialized structured gain: the communication edges pin down the mask, the
/// entries are row-major over the full (dense) gain matrix with exact zeros
/// off the mask.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PolicyFile {
    pub schema_version: u32,
    pub n_sg: usize,
    pub n_gfm: usize,
    pub edges: Vec<(usize, usize)>,
    /// Row-major gain entries, one inner vec per input row.
    pub gain: Vec<Vec<f64>>,
}

impl PolicyFile {
    pub fn from_policy(policy: &Policy<f64>) -> Self {
        let mask = policy.mask();
        let k = policy.gain();
        PolicyFile {
            schema_version: POLICY_SCHEMA_VERSION,
            n_sg: mask.layout.n_sg,
            n_gfm: mask.layout.n_gfm,
            edges: mask.edges.clone(),
            gain: (0..k.nrows()).map(|r| (0..k.ncols()).map(|c| k[(r, c)]).collect()).collect(),
        }
    }

    pub fn into_policy(self) -> Result<Policy<f64>> {
        if self.schema_version != POLICY_SCHEMA_VERSION {
            return Err(Error::Case {
                path: "<policy>".into(),
                message: format!("policy schema_version {} unsupported", self.schema_version),
            });
        }
        let mask = build_mask(&self.edges, self.n_sg, self.n_gfm)?;
        let layout = StateLayout { n_sg: self.n_sg, n_gfm: self.n_gfm };
        let (nr, nc) = (layout.input_dim(), layout.state_dim());
        if self.gain.len() != nr || self.gain.iter().any(|row| row.len() != nc) {
            return Err(Error::DimensionMismatch(format!("policy gain must be {nr}x{nc}")));
        }
        let k = DMatrix::from_fn(nr, nc, |r, c| self.gain[r][c]);
        Policy::new(k, mask)
    }
}

pub fn save_policy(policy: &Policy<f64>, path: &Path) -> Result<()> {
    let file = PolicyFile::from_policy(policy);
    let text = toml::to_string_pretty(&file)
        .map_err(|e| Error::Case { path: path.display().to_string(), message: e.to_string() })?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_policy(path: &Path) -> Result<Policy<f64>> {
    let text = std::fs::read_to_string(path)?;
    let file: PolicyFile = toml::from_str(&text)
        .map_err(|e| Error::Case { path: path.display().to_string(), message: e.to_string() })?;
    file.into_policy()
}

pub fn trace_csv(trace: &TrainingTrace<f64>) -> String {
    let mut out = String::from(
        "iteration,objective,lambda_high_fraction,slack,gradient_norm,spectral_radius,flagged_samples,step_rejected\n",
    );
    for r in &trace.records {
        out.push_str(&format!(
            "{},{:.17e},{:.6},{:.17e},{:.17e},{:.17e},{},{}\n",
            r.iteration,
            r.objective,
            r.lambda_high_fraction,
            r.slack,
            r.gradient_norm,
            r.spectral_radius,
            r.flagged_samples,
            r.step_rejected
        ));
    }
    out
}

pub fn write_trace_csv(trace: &TrainingTrace<f64>, path: &Path) -> Result<()> {
    std::fs::write(path, trace_csv(trace))?;
    Ok(())
}

pub fn report_csv(report: &PolicyReport) -> String {
    let mut out = String::from("scenario,objective,diverged,peak_frequency_deviation\n");
    for o in &report.outcomes {
        match o.objective {
            Some(v) => out.push_str(&format!("{},{:.17e},false,{:.17e}\n", o.scenario, v, o.peak_frequency_deviation)),
            None => out.push_str(&format!("{},,true,\n", o.scenario)),
        }
    }
    out
}

pub fn write_report_csv(report: &PolicyReport, path: &Path) -> Result<()> {
    std::fs::write(path, report_csv(report))?;
    Ok(())
}

/// Trajectory export: time, deviation states (layout order), then inputs.
/// The last sampling instant has no held input; its columns are left empty.
pub fn trajectory_csv(traj: &NonlinearTrajectory<f64>) -> String {
    let layout = traj.layout;
    let mut header = vec!["t".to_string()];
    for i in 0..layout.n_sg {
        header.push(format!("d_delta_sg{i}"));
        header.push(format!("d_omega_sg{i}"));
    }
    for j in 0..layout.n_gfm {
        header.push(format!("d_delta_gfm{j}"));
        header.push(format!("d_omega_gfm{j}"));
        header.push(format!("d_verr_gfm{j}"));
        header.push(format!("d_v_gfm{j}"));
    }
    for j in 0..layout.n_gfm {
        header.push(format!("u_vset_gfm{j}"));
        header.push(format!("u_pset_gfm{j}"));
        header.push(format!("u_qset_gfm{j}"));
    }
    let mut out = header.join(",");
    out.push('\n');
    for (k, t) in traj.times.iter().enumerate() {
        let mut row = vec![format!("{t:.6}")];
        let x = &traj.states[k];
        for v in x.iter() {
            row.push(format!("{v:.17e}"));
        }
        if k < traj.inputs.len() {
            for v in traj.inputs[k].iter() {
                row.push(format!("{v:.17e}"));
            }
        } else {
            row.extend(std::iter::repeat(String::new()).take(layout.input_dim()));
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_trajectory_csv(traj: &NonlinearTrajectory<f64>, path: &Path) -> Result<()> {
    std::fs::write(path, trajectory_csv(traj))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::mask::build_mask;

    fn sample_policy() -> Policy<f64> {
        let mask = build_mask(&[(0, 1)], 1, 1).unwrap();
        let mut k = DMatrix::zeros(3, 6);
        for r in 0..3 {
            for c in 0..6 {
                if mask.m[(r, c)] {
                    k[(r, c)] = (r * 7 + c) as f64 * 0.137 - 0.5;
                }
            }
        }
        Policy::new(k, mask).unwrap()
    }

    #[test]
    fn policy_round_trip_bitwise() {
        let policy = sample_policy();
        let dir = std::env::temp_dir().join("rclqr-io-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("policy.toml");
        save_policy(&policy, &path).unwrap();
        let loaded = load_policy(&path).unwrap();
        assert_eq!(policy.gain(), loaded.gain());
        assert_eq!(policy.mask().edges, loaded.mask().edges);
        // Second save is byte-identical.
        let text1 = std::fs::read_to_string(&path).unwrap();
        save_policy(&loaded, &path).unwrap();
        let text2 = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text1, text2);
    }

    #[test]
    fn tampered_policy_rejected() {
        let policy = sample_policy();
        let mut file = PolicyFile::from_policy(&policy);
        // Set a value off the mask: column of the SG state feedback for an
        // edge that does not exist.
        file.edges.clear(); // only the implicit self-link remains
        let err = file.into_policy();
        assert!(err.is_err());
    }

    #[test]
    fn trace_csv_shape() {
        let trace = TrainingTrace::<f64>::default();
        let text = trace_csv(&trace);
        assert!(text.starts_with("iteration,objective"));
        assert_eq!(text.lines().count(), 1);
    }
}
