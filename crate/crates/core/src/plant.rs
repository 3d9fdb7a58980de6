//! Synthetic linear entropy plant for exercising the controller in isolation.
//!
//! `H_{t+1} = H_t + kappa * (alpha_t - alpha_eq) + noise_t`, with
//! `|noise_t| <= noise_bound`. `alpha_eq` is the regularization strength that
//! exactly cancels the plant's natural entropy drift.

use rand::Rng;

use crate::controller::AerState;
use crate::error::Result;
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearEntropyPlant {
    pub kappa: f64,
    pub alpha_eq: f64,
    pub noise_bound: f64,
}

impl LinearEntropyPlant {
    /// Closes the loop for `steps` iterations starting from `initial_entropy`
    /// and returns the observed entropy sequence `H_0, H_1, ...`.
    pub fn simulate(
        &self,
        state: &mut AerState,
        initial_entropy: f64,
        steps: usize,
        rng: &mut RngStream,
    ) -> Result<Vec<f64>> {
        let mut h = initial_entropy;
        let mut trace = Vec::with_capacity(steps);
        for t in 0..steps {
            if t == 0 {
                state.init_target(h)?;
            }
            trace.push(h);
            let alpha = state.alpha;
            state.update_alpha(h)?;
            let noise = if self.noise_bound > 0.0 { rng.gen_range(-self.noise_bound..=self.noise_bound) } else { 0.0 };
            h = (h + self.kappa * (alpha - self.alpha_eq) + noise).max(0.0);
        }
        Ok(trace)
    }
}
