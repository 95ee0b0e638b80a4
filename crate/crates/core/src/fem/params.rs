use serde::{Deserialize, Serialize};

use crate::error::FemError;

/// Fluid properties and inlet peak velocity (SI units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    pub rho_f: f64,
    pub mu: f64,
    pub v_c: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            rho_f: 1.0,
            mu: 1.0,
            v_c: 1.0,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<(), FemError> {
        if !(self.rho_f >= 0.0 && self.rho_f.is_finite()) {
            return Err(FemError::InvalidParameter(format!(
                "rho_f must be >= 0, got {}",
                self.rho_f
            )));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(FemError::InvalidParameter(format!(
                "mu must be > 0, got {}",
                self.mu
            )));
        }
        if !(self.v_c > 0.0 && self.v_c.is_finite()) {
            return Err(FemError::InvalidParameter(format!(
                "v_c must be > 0, got {}",
                self.v_c
            )));
        }
        Ok(())
    }

    /// Reynolds number based on the inlet width.
    pub fn reynolds(&self, l_c: f64) -> f64 {
        self.rho_f * self.v_c * l_c / self.mu
    }
}

/// Inverse permeability limits and interpolation parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrinkmanParams {
    pub alpha_max: f64,
    pub alpha_min: f64,
    pub p_alpha: f64,
}

impl Default for BrinkmanParams {
    fn default() -> Self {
        Self {
            alpha_max: 1e8,
            alpha_min: 0.0,
            p_alpha: 0.1,
        }
    }
}

impl BrinkmanParams {
    pub fn with_alpha_max(alpha_max: f64) -> Self {
        Self {
            alpha_max,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), FemError> {
        if !(self.alpha_min >= 0.0 && self.alpha_max.is_finite()) {
            return Err(FemError::InvalidParameter(format!(
                "alpha_min must be >= 0 and alpha_max finite, got {} and {}",
                self.alpha_min, self.alpha_max
            )));
        }
        if !(self.alpha_max >= self.alpha_min) {
            return Err(FemError::InvalidParameter(format!(
                "alpha_max {} must be >= alpha_min {}",
                self.alpha_max, self.alpha_min
            )));
        }
        if !(self.p_alpha > 0.0 && self.p_alpha.is_finite()) {
            return Err(FemError::InvalidParameter(format!(
                "p_alpha must be > 0, got {}",
                self.p_alpha
            )));
        }
        Ok(())
    }
}

/// Convex inverse-permeability interpolation between `alpha_max` (solid,
/// `rho = 0`) and `alpha_min` (fluid, `rho = 1`).
pub fn alpha_of_rho(rho: f64, params: &BrinkmanParams) -> Result<f64, FemError> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(FemError::DensityOutOfRange(rho));
    }
    let BrinkmanParams {
        alpha_max,
        alpha_min,
        p_alpha,
    } = *params;
    // Exact limits regardless of rounding in the rational term.
    if rho == 0.0 {
        return Ok(alpha_max);
    }
    if rho == 1.0 {
        return Ok(alpha_min);
    }
    Ok(alpha_max + rho * (alpha_min - alpha_max) * (1.0 + p_alpha) / (rho + p_alpha))
}
