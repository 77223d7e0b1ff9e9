//! Structured feedback gains, cost evaluation, and the unstructured
//! Riccati baseline.

pub mod cost;
pub mod dare;
pub mod mask;

pub use cost::{is_stabilizing, lqr_cost_analytic, lqr_cost_mc, CostWeights, McEstimate, Stability};
pub use dare::dare_baseline;
pub use mask::{build_mask, project_to_mask, GainMask, Policy};
