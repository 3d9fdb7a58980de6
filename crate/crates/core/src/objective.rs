//! Training objective: clipped group-relative surrogate, exact KL penalty to a
//! frozen reference, and per-question entropy bonus, with exact gradients.
//!
//! For a set of M (question, response) samples
//!
//! ```text
//! surrogate = 1/M sum_i 1/|o_i| sum_l min(w_il A_i, clip(w_il, 1-eps_l, 1+eps_h) A_i)
//! kl        = 1/M sum_i 1/|o_i| sum_l KL(pi(.|q,o_<l) || pi_ref(.|q,o_<l))
//! bonus     = 1/M sum_i lambda(q_i) 1/|o_i| sum_l H_l
//! total     = surrogate - beta * kl + bonus
//! ```
//!
//! With every response of every group present, M = B*G and the sums reduce to the
//! per-question, per-group averages. Gradients of all three terms are accumulated
//! in a single backward pass per response.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AerError, Result};
use crate::policy::{PolicyParams, QuestionEncoding, Response};
use crate::rollout::RolloutGroup;

/// Samples per parallel work unit. Fixed so the reduction order never depends
/// on the thread count.
const CHUNK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EntropyMode {
    None,
    Fixed(f64),
    Aer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub clip_low: f64,
    pub clip_high: f64,
    pub kl_coef: f64,
    pub entropy: EntropyMode,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self { clip_low: 0.2, clip_high: 0.2, kl_coef: 0.0, entropy: EntropyMode::None }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| v > 0.0 && v < 1.0;
        if !in_unit(self.clip_low) || !in_unit(self.clip_high) {
            return Err(AerError::Config(format!(
                "clip ratios must lie in (0, 1), got low={} high={}",
                self.clip_low, self.clip_high
            )));
        }
        if !(self.kl_coef >= 0.0 && self.kl_coef.is_finite()) {
            return Err(AerError::Config(format!("KL coefficient must be >= 0, got {}", self.kl_coef)));
        }
        if let EntropyMode::Fixed(g) = self.entropy {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(AerError::Config(format!("entropy coefficient must be >= 0, got {g}")));
            }
        }
        Ok(())
    }
}

/// Value of one clipped surrogate token and whether its gradient flows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClippedTerm {
    pub value: f64,
    pub active: bool,
}

/// min(w A, clip(w, 1-lo, 1+hi) A). The gradient is `A * w * dlog pi` when the
/// unclipped branch is selected and zero otherwise.
pub fn clipped_term(ratio: f64, advantage: f64, clip_low: f64, clip_high: f64) -> ClippedTerm {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip_low, 1.0 + clip_high) * advantage;
    if unclipped <= clipped {
        ClippedTerm { value: unclipped, active: advantage != 0.0 }
    } else {
        ClippedTerm { value: clipped, active: false }
    }
}

/// One (question, response) pair with its advantage and entropy coefficient.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub question: &'a QuestionEncoding,
    pub response: &'a Response,
    pub advantage: f64,
    pub lambda: f64,
}

/// Flattens groups into samples in (question, response) order.
pub fn samples_from_groups<'a>(groups: &'a [RolloutGroup], lambdas: &[f64]) -> Result<Vec<Sample<'a>>> {
    if groups.len() != lambdas.len() {
        return Err(AerError::Contract(format!("{} groups but {} entropy coefficients", groups.len(), lambdas.len())));
    }
    let mut out = Vec::new();
    for (g, &lambda) in groups.iter().zip(lambdas) {
        for (resp, &adv) in g.responses.iter().zip(&g.advantages) {
            out.push(Sample { question: &g.question.encoding, response: resp, advantage: adv, lambda });
        }
    }
    Ok(out)
}

/// Weights applied to each term's gradient in the combined backward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
struct GradWeights {
    surrogate: f64,
    kl: f64,
    entropy: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Partial {
    surrogate: f64,
    kl: f64,
    bonus: f64,
    tokens: usize,
    clipped: usize,
    grad: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveReport {
    pub surrogate: f64,
    pub kl: f64,
    pub entropy_bonus: f64,
    pub total: f64,
    pub gradient: Vec<f64>,
    /// Entropy coefficient per group (empty when evaluated on a flat sample list).
    pub lambdas: Vec<f64>,
    pub tokens: usize,
    pub clipped_tokens: usize,
}

fn evaluate(
    params: &PolicyParams,
    reference: Option<&PolicyParams>,
    samples: &[Sample<'_>],
    cfg: &ObjectiveConfig,
    weights: GradWeights,
) -> Result<Partial> {
    if samples.is_empty() {
        return Err(AerError::Data("objective over an empty sample set".into()));
    }
    for s in samples {
        if !(s.lambda >= 0.0) {
            return Err(AerError::Contract(format!("entropy coefficient must be >= 0, got {}", s.lambda)));
        }
        if s.response.is_empty() {
            return Err(AerError::Data("empty response in objective".into()));
        }
        if s.response.log_probs.len() != s.response.tokens.len() {
            return Err(AerError::Data(format!(
                "response has {} tokens but {} old log-probs",
                s.response.tokens.len(),
                s.response.log_probs.len()
            )));
        }
    }
    let m = samples.len() as f64;
    let n = params.len();
    let partials: Vec<Result<Partial>> = samples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = Partial { grad: vec![0.0; n], ..Default::default() };
            for s in chunk {
                accumulate_sample(params, reference, s, cfg, weights, m, &mut acc)?;
            }
            Ok(acc)
        })
        .collect();
    let mut total = Partial { grad: vec![0.0; n], ..Default::default() };
    for p in partials {
        let p = p?;
        total.surrogate += p.surrogate;
        total.kl += p.kl;
        total.bonus += p.bonus;
        total.tokens += p.tokens;
        total.clipped += p.clipped;
        for (a, b) in total.grad.iter_mut().zip(&p.grad) {
            *a += b;
        }
    }
    Ok(total)
}

fn accumulate_sample(
    params: &PolicyParams,
    reference: Option<&PolicyParams>,
    s: &Sample<'_>,
    cfg: &ObjectiveConfig,
    weights: GradWeights,
    m: f64,
    acc: &mut Partial,
) -> Result<()> {
    let tokens = &s.response.tokens;
    let len = tokens.len() as f64;
    let scale = 1.0 / (len * m);
    let ref_dists = match reference {
        Some(r) => Some(r.distributions(s.question, tokens)?),
        None => None,
    };
    let (mut surr, mut kl, mut ent, mut clipped) = (0.0, 0.0, 0.0, 0usize);
    params.accumulate_sequence(s.question, tokens, &mut acc.grad, |l, dist, dl| {
        let mut touched = false;
        let ratio = (dist.log_prob(tokens[l]) - s.response.log_probs[l]).exp();
        let term = clipped_term(ratio, s.advantage, cfg.clip_low, cfg.clip_high);
        surr += term.value;
        if !term.active && s.advantage != 0.0 {
            clipped += 1;
        }
        if term.active && weights.surrogate != 0.0 {
            dist.add_logprob_grad(tokens[l], weights.surrogate * scale * s.advantage * ratio, dl);
            touched = true;
        }
        if let Some(refs) = &ref_dists {
            kl += dist.kl_to(&refs[l]);
            if weights.kl != 0.0 {
                dist.add_kl_grad(&refs[l], weights.kl * scale, dl);
                touched = true;
            }
        }
        if s.lambda != 0.0 {
            ent += dist.entropy();
            if weights.entropy != 0.0 {
                dist.add_entropy_grad(weights.entropy * s.lambda * scale, dl);
                touched = true;
            }
        }
        touched
    })?;
    acc.surrogate += surr * scale;
    acc.kl += kl * scale;
    acc.bonus += s.lambda * ent * scale;
    acc.tokens += tokens.len();
    acc.clipped += clipped;
    Ok(())
}

/// Clipped surrogate value and gradient.
pub fn grpo_surrogate(params: &PolicyParams, samples: &[Sample<'_>], cfg: &ObjectiveConfig) -> Result<(f64, Vec<f64>)> {
    let zeroed: Vec<Sample<'_>> = samples.iter().map(|s| Sample { lambda: 0.0, ..*s }).collect();
    let p = evaluate(params, None, &zeroed, cfg, GradWeights { surrogate: 1.0, kl: 0.0, entropy: 0.0 })?;
    Ok((p.surrogate, p.grad))
}

/// Exact per-token KL to the reference policy, averaged per response and over samples.
pub fn kl_penalty(params: &PolicyParams, reference: &PolicyParams, samples: &[Sample<'_>]) -> Result<(f64, Vec<f64>)> {
    let zeroed: Vec<Sample<'_>> = samples.iter().map(|s| Sample { lambda: 0.0, advantage: 0.0, ..*s }).collect();
    let p = evaluate(
        params,
        Some(reference),
        &zeroed,
        &ObjectiveConfig::default(),
        GradWeights { surrogate: 0.0, kl: 1.0, entropy: 0.0 },
    )?;
    Ok((p.kl, p.grad))
}

/// lambda-weighted sequence entropy bonus.
pub fn entropy_bonus(params: &PolicyParams, samples: &[Sample<'_>]) -> Result<(f64, Vec<f64>)> {
    let zeroed: Vec<Sample<'_>> = samples.iter().map(|s| Sample { advantage: 0.0, ..*s }).collect();
    let p = evaluate(
        params,
        None,
        &zeroed,
        &ObjectiveConfig::default(),
        GradWeights { surrogate: 0.0, kl: 0.0, entropy: 1.0 },
    )?;
    Ok((p.bonus, p.grad))
}

/// surrogate - beta * KL + bonus over an arbitrary sample list (a minibatch).
pub fn objective_on_samples(
    params: &PolicyParams,
    reference: &PolicyParams,
    samples: &[Sample<'_>],
    cfg: &ObjectiveConfig,
) -> Result<ObjectiveReport> {
    cfg.validate()?;
    let p = evaluate(
        params,
        Some(reference),
        samples,
        cfg,
        GradWeights { surrogate: 1.0, kl: -cfg.kl_coef, entropy: 1.0 },
    )?;
    Ok(ObjectiveReport {
        surrogate: p.surrogate,
        kl: p.kl,
        entropy_bonus: p.bonus,
        total: p.surrogate - cfg.kl_coef * p.kl + p.bonus,
        gradient: p.grad,
        lambdas: Vec::new(),
        tokens: p.tokens,
        clipped_tokens: p.clipped,
    })
}

/// Full objective over whole rollout groups. Old-policy log-probs come from the
/// responses, which were sampled under the old parameters.
pub fn total_objective(
    params: &PolicyParams,
    reference: &PolicyParams,
    groups: &[RolloutGroup],
    lambdas: &[f64],
    cfg: &ObjectiveConfig,
) -> Result<ObjectiveReport> {
    let samples = samples_from_groups(groups, lambdas)?;
    let mut report = objective_on_samples(params, reference, &samples, cfg)?;
    report.lambdas = lambdas.to_vec();
    Ok(report)
}
