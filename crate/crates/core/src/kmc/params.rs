use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Jump rates of the weakly asymmetric exclusion process.
///
/// A particle at `x` jumps to an empty `x+1` at rate `2p` and to an empty
/// `x-1` at rate `2q`, with `p = (1 + γ)/2`, `q = (1 - γ)/2` and
/// `γ = γ̃·√ε`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsParams {
    pub eps: f64,
    pub gamma_tilde: f64,
}

impl DynamicsParams {
    pub fn new(eps: f64, gamma_tilde: f64) -> Result<Self> {
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(Error::OutOfRange(format!("eps must lie in (0, 1], got {eps}")));
        }
        if !(gamma_tilde >= 0.0) || !gamma_tilde.is_finite() {
            return Err(Error::OutOfRange(format!(
                "gamma_tilde must be finite and non-negative, got {gamma_tilde}"
            )));
        }
        let gamma = gamma_tilde * eps.sqrt();
        if gamma > 1.0 {
            return Err(Error::OutOfRange(format!(
                "gamma_tilde*sqrt(eps) = {gamma} exceeds 1, jump probabilities would be negative"
            )));
        }
        Ok(Self { eps, gamma_tilde })
    }

    /// Symmetric dynamics, `p = q = 1/2`.
    pub fn symmetric(eps: f64) -> Result<Self> {
        Self::new(eps, 0.0)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma_tilde * self.eps.sqrt()
    }

    pub fn p(&self) -> f64 {
        0.5 * (1.0 + self.gamma())
    }

    pub fn q(&self) -> f64 {
        0.5 * (1.0 - self.gamma())
    }

    /// Diffusive time scale `c = ε^{-2}` linking macroscopic and microscopic time.
    pub fn time_scale(&self) -> f64 {
        1.0 / (self.eps * self.eps)
    }
}
