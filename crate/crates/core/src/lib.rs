//! Risk-constrained structured LQR synthesis for mixed synchronous-generator
//! and grid-forming-inverter power systems.
//!
//! The crate builds linearized SG+GFM dynamics on a Kron-reduced network,
//! learns decentralized feedback gains under a mean-variance risk constraint
//! with zero-order policy gradients (SGDmax), and validates the result on a
//! nonlinear closed-loop simulator under random step-load scenarios.
//!
//! All numerical modules are generic over the scalar type through
//! [`scalar::Scalar`]; `f64` aliases for the main types live at the crate
//! root. The [`harness`] module (case files, scenario suites, experiment
//! protocol) is `f64`-concrete.

pub mod control;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod optimizer;
pub mod risk;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

// Concrete f64 aliases for the common working precision.
pub type ReducedNetwork64 = dynamics::ReducedNetwork<f64>;
pub type OperatingPoint64 = dynamics::OperatingPoint<f64>;
pub type ContinuousDynamics64 = dynamics::ContinuousDynamics<f64>;
pub type DiscreteDynamics64 = dynamics::DiscreteDynamics<f64>;
pub type Policy64 = control::Policy<f64>;
pub type CostWeights64 = control::CostWeights<f64>;
pub type NoiseModel64 = risk::NoiseModel<f64>;
pub type RiskParams64 = risk::RiskParams<f64>;
pub type TrainingConfig64 = optimizer::TrainingConfig<f64>;
