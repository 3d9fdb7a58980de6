//! Adaptive entropy controller.
//!
//! Three pieces of state-driven logic:
//!
//! * per-question coefficients from group accuracy,
//!   `lambda = alpha * max(0, rho - g) / (rho + eps) + alpha * [rho == 0 && g == 0]`;
//! * a target entropy anchored to the first batch, `H* = tau * H0`;
//! * a sign-feedback update of the global scale,
//!   `alpha <- max(0, alpha + eta * sgn(H* - H_t))`.

use serde::{Deserialize, Serialize};

use crate::error::{AerError, Result};
use crate::rollout::RolloutGroup;

pub const DEFAULT_TAU: f64 = 0.4;
pub const DEFAULT_RHO: f64 = 0.2;
pub const DEFAULT_ETA: f64 = 0.005;
pub const DEFAULT_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AerState {
    pub initial_entropy: Option<f64>,
    pub target_entropy: Option<f64>,
    pub alpha: f64,
    pub tau: f64,
    pub rho: f64,
    pub eta: f64,
    pub eps: f64,
    /// Number of alpha updates applied so far.
    pub step: u64,
}

impl AerState {
    pub fn new(tau: f64, rho: f64, eta: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(AerError::Config(format!("reduction ratio tau must be positive, got {tau}")));
        }
        if !(0.0..=1.0).contains(&rho) {
            return Err(AerError::Config(format!("pivot accuracy rho must lie in [0, 1], got {rho}")));
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(AerError::Config(format!("step size eta must be positive, got {eta}")));
        }
        Ok(Self { initial_entropy: None, target_entropy: None, alpha: 0.0, tau, rho, eta, eps: DEFAULT_EPS, step: 0 })
    }

    pub fn is_initialized(&self) -> bool {
        self.target_entropy.is_some()
    }

    /// Records the first-batch entropy and sets `H* = tau * H0`. Only valid once.
    pub fn init_target(&mut self, first_batch_entropy: f64) -> Result<f64> {
        if self.is_initialized() {
            return Err(AerError::Contract("target entropy already initialized".into()));
        }
        if !(first_batch_entropy > 0.0 && first_batch_entropy.is_finite()) {
            return Err(AerError::Data(format!("initial entropy must be positive, got {first_batch_entropy}")));
        }
        let target = self.tau * first_batch_entropy;
        self.initial_entropy = Some(first_batch_entropy);
        self.target_entropy = Some(target);
        Ok(target)
    }

    fn target(&self) -> Result<f64> {
        self.target_entropy.ok_or_else(|| AerError::Contract("controller used before target initialization".into()))
    }

    /// Difficulty-aware coefficient for a question with group accuracy `g`.
    pub fn allocate_lambda(&self, g: f64) -> Result<f64> {
        self.target()?;
        if !(0.0..=1.0).contains(&g) {
            return Err(AerError::Contract(format!("group accuracy must lie in [0, 1], got {g}")));
        }
        let graded = self.alpha * (self.rho - g).max(0.0) / (self.rho + self.eps);
        let indicator = if self.rho == 0.0 && g == 0.0 { self.alpha } else { 0.0 };
        Ok(graded + indicator)
    }

    /// Applies one sign-feedback step from the observed batch entropy and returns the new alpha.
    pub fn update_alpha(&mut self, batch_entropy: f64) -> Result<f64> {
        let target = self.target()?;
        if !(batch_entropy >= 0.0 && batch_entropy.is_finite()) {
            return Err(AerError::Data(format!("batch entropy must be >= 0, got {batch_entropy}")));
        }
        let sign = if batch_entropy < target {
            1.0
        } else if batch_entropy > target {
            -1.0
        } else {
            0.0
        };
        self.alpha = (self.alpha + self.eta * sign).max(0.0);
        self.step += 1;
        Ok(self.alpha)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchEntropyEstimate {
    pub entropy: f64,
    pub tokens: usize,
}

/// Token-weighted mean of the rollout token entropies across all groups.
pub fn batch_entropy(groups: &[RolloutGroup]) -> Result<BatchEntropyEstimate> {
    let mut sum = 0.0;
    let mut tokens = 0usize;
    for g in groups {
        for r in &g.responses {
            sum += r.entropies.iter().sum::<f64>();
            tokens += r.entropies.len();
        }
    }
    if tokens == 0 {
        return Err(AerError::Data("batch entropy of an empty batch".into()));
    }
    Ok(BatchEntropyEstimate { entropy: sum / tokens as f64, tokens })
}
