use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Synchronous-generator swing-equation parameters. The internal voltage is
/// held fixed (no exciter model).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgParams<T: Scalar> {
    /// Inertia constant M (pu·s²).
    pub inertia: T,
    /// Damping coefficient D (pu).
    pub damping: T,
    /// Nominal angular speed ω₀ (rad/s).
    pub nominal_speed: T,
    /// Mechanical power input P (pu).
    pub mech_power: T,
    /// Fixed internal voltage magnitude (pu).
    pub voltage: T,
}

impl<T: Scalar> SgParams<T> {
    pub fn validate(&self) -> Result<()> {
        if self.inertia <= T::zero() {
            return Err(Error::DimensionMismatch("SG inertia must be > 0".into()));
        }
        if self.damping < T::zero() {
            return Err(Error::DimensionMismatch("SG damping must be >= 0".into()));
        }
        if self.nominal_speed <= T::zero() {
            return Err(Error::DimensionMismatch("SG nominal speed must be > 0".into()));
        }
        if self.voltage <= T::zero() {
            return Err(Error::DimensionMismatch("SG voltage must be > 0".into()));
        }
        Ok(())
    }
}

/// Grid-forming inverter droop/PI parameters and set-points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GfmParams<T: Scalar> {
    /// Droop low-pass time constant τ (s).
    pub tau: T,
    /// P–ω droop gain m^p (pu).
    pub p_droop: T,
    /// Q–V droop gain m^q (pu).
    pub q_droop: T,
    /// Voltage PI proportional gain k^pv (pu).
    pub pi_proportional: T,
    /// Voltage PI integral gain k^iv (pu/s).
    pub pi_integral: T,
    /// Nominal angular speed ω₀ (rad/s).
    pub nominal_speed: T,
    /// Voltage set-point V^s (pu).
    pub v_set: T,
    /// Active-power set-point P^s (pu).
    pub p_set: T,
    /// Reactive-power set-point Q^s (pu).
    pub q_set: T,
}

impl<T: Scalar> GfmParams<T> {
    pub fn validate(&self) -> Result<()> {
        if self.tau <= T::zero() {
            return Err(Error::DimensionMismatch("GFM tau must be > 0".into()));
        }
        if self.p_droop <= T::zero() || self.q_droop <= T::zero() {
            return Err(Error::DimensionMismatch("GFM droop gains must be > 0".into()));
        }
        if self.pi_proportional < T::zero() || self.pi_integral < T::zero() {
            return Err(Error::DimensionMismatch("GFM PI gains must be >= 0".into()));
        }
        Ok(())
    }
}
