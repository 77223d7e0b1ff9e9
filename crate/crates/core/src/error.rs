use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("Kron reduction failed: eliminated block is singular (buses {buses:?})")]
    SingularEliminatedBlock { buses: Vec<usize> },

    #[error("power flow did not converge after {iterations} iterations (residual {residual:.3e})")]
    PowerFlowDiverged { iterations: usize, residual: f64 },

    #[error("gain matrix violates its sparsity mask")]
    MaskViolation,

    #[error("policy is not stabilizing (spectral radius {rho})")]
    NotStabilizing { rho: f64 },

    #[error("simulation diverged at t = {time:.4} s (state norm {norm:.3e})")]
    SimulationDiverged { time: f64, norm: f64 },

    #[error("no stabilizing structured initial policy found; consider adding communication links")]
    InitializationFailure,

    #[error("empty sparsity mask: no free gain entries")]
    EmptyMask,

    #[error("multiplier {lambda} outside [0, {bound}]")]
    MultiplierOutOfRange { lambda: f64, bound: f64 },

    #[error("noise model: {0}")]
    Noise(String),

    #[error("case file `{path}`: {message}")]
    Case { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
