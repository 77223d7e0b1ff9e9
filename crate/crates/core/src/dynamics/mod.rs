//! System modeling: network reduction, power flow, steady state,
//! linearization, and closed-loop simulation.

pub mod linearize;
pub mod network;
pub mod operating_point;
pub mod params;
pub mod simulate;

pub use linearize::{assemble_continuous, discretize, ContinuousDynamics, DiscreteDynamics, StateLayout};
pub use network::{kron_reduce, pf_injections, pf_jacobian, NodeKind, PfJacobian, ReducedNetwork};
pub use operating_point::{solve_operating_point, OperatingPoint};
pub use params::{GfmParams, SgParams};
pub use simulate::{
    simulate_linear, simulate_linear_continuous, simulate_nonlinear, LinearTrajectory, LoadDisturbance,
    NonlinearCase, NonlinearTrajectory,
};
