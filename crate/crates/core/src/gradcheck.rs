//! Finite-difference verification of the analytic objective gradient.

use rand::seq::index::sample;
use rand::Rng;

use crate::controller::AerState;
use crate::error::Result;
use crate::objective::{total_objective, EntropyMode, ObjectiveConfig};
use crate::policy::{PolicyParams, PolicyShape, Vocab};
use crate::rng::{self, Purpose};
use crate::rollout::RolloutGroup;
use crate::tasks::{TaskKind, TaskSuite, TaskTier};

pub const FD_STEP: f64 = 1e-5;

/// Objective configurations covered by gradient checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckMode {
    Grpo,
    FixedEntropy,
    Aer,
    ClipHigher,
    KlPenalty,
}

impl CheckMode {
    pub const ALL: [CheckMode; 5] =
        [CheckMode::Grpo, CheckMode::FixedEntropy, CheckMode::Aer, CheckMode::ClipHigher, CheckMode::KlPenalty];

    pub fn name(self) -> &'static str {
        match self {
            CheckMode::Grpo => "grpo",
            CheckMode::FixedEntropy => "fixed-entropy",
            CheckMode::Aer => "aer",
            CheckMode::ClipHigher => "clip-higher",
            CheckMode::KlPenalty => "kl",
        }
    }

    pub fn config(self) -> ObjectiveConfig {
        let base = ObjectiveConfig::default();
        match self {
            CheckMode::Grpo => base,
            CheckMode::FixedEntropy => ObjectiveConfig { entropy: EntropyMode::Fixed(0.05), ..base },
            CheckMode::Aer => ObjectiveConfig { entropy: EntropyMode::Aer, ..base },
            CheckMode::ClipHigher => ObjectiveConfig { clip_high: 0.28, ..base },
            CheckMode::KlPenalty => ObjectiveConfig { kl_coef: 0.1, entropy: EntropyMode::Fixed(0.02), ..base },
        }
    }
}

/// A random policy, a perturbed old policy that generated the rollouts, a
/// separate reference policy and groups with random binary rewards.
pub struct Instance {
    pub params: PolicyParams,
    pub reference: PolicyParams,
    pub groups: Vec<RolloutGroup>,
    pub lambdas: Vec<f64>,
    pub config: ObjectiveConfig,
}

impl Instance {
    pub fn random(seed: u64, mode: CheckMode) -> Result<Self> {
        let mut r = rng::stream(seed, Purpose::Init, &[0xfd]);
        let suite = TaskSuite::new(Vocab::new(16)?)?;
        let shape = PolicyShape::new(suite.vocab(), suite.num_symbols(), 6, 4, 8)?;
        let params = PolicyParams::random(shape, &mut r, 0.6, 0.6);
        let mut old = params.clone();
        for v in old.as_mut_slice() {
            *v += r.gen_range(-0.15..=0.15);
        }
        let reference = PolicyParams::random(shape, &mut r, 0.6, 0.6);

        let tiers = [
            TaskTier::new(TaskKind::ReverseCopy, 1)?,
            TaskTier::new(TaskKind::ReverseCopy, 2)?,
            TaskTier::new(TaskKind::ModularSum, 2)?,
        ];
        let mut groups = Vec::new();
        for i in 0..3 {
            let q = suite.generate(tiers[i % tiers.len()], &mut r)?;
            let responses = (0..4).map(|_| old.sample_response(&q.encoding, &mut r, 5)).collect::<Result<Vec<_>>>()?;
            let rewards = (0..4).map(|_| r.gen_range(0..=1u8)).collect();
            groups.push(RolloutGroup::from_scored(q, responses, rewards)?);
        }

        let config = mode.config();
        let lambdas = match config.entropy {
            EntropyMode::None => vec![0.0; groups.len()],
            EntropyMode::Fixed(g) => vec![g; groups.len()],
            EntropyMode::Aer => {
                let mut s = AerState::new(0.4, 0.5, 0.005)?;
                s.init_target(2.0)?;
                s.alpha = 0.3;
                groups.iter().map(|g| s.allocate_lambda(g.accuracy)).collect::<Result<_>>()?
            }
        };
        Ok(Self { params, reference, groups, lambdas, config })
    }

    pub fn objective(&self, params: &PolicyParams) -> Result<f64> {
        Ok(total_objective(params, &self.reference, &self.groups, &self.lambdas, &self.config)?.total)
    }

    pub fn gradient(&self) -> Result<Vec<f64>> {
        Ok(total_objective(&self.params, &self.reference, &self.groups, &self.lambdas, &self.config)?.gradient)
    }
}

/// Central difference of `f` along coordinate `i`.
pub fn central_difference<F>(f: F, params: &PolicyParams, i: usize, step: f64) -> Result<f64>
where
    F: Fn(&PolicyParams) -> Result<f64>,
{
    let mut p = params.clone();
    let x = p.as_slice()[i];
    p.as_mut_slice()[i] = x + step;
    let up = f(&p)?;
    p.as_mut_slice()[i] = x - step;
    let down = f(&p)?;
    Ok((up - down) / (2.0 * step))
}

/// `|a - b| / max(|a|, |b|)`, or 0 when both are below `floor`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < floor {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordCheck {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Compares `analytic` with central differences of `f` on `coords` random
/// coordinates. Three quarters are drawn from the support of `analytic` (most
/// embedding rows are untouched by any given instance), the rest uniformly.
pub fn check<F, R>(f: F, params: &PolicyParams, analytic: &[f64], coords: usize, rng: &mut R) -> Result<Vec<CoordCheck>>
where
    F: Fn(&PolicyParams) -> Result<f64>,
    R: Rng,
{
    let support: Vec<usize> = (0..analytic.len()).filter(|&i| analytic[i] != 0.0).collect();
    let from_support = (coords * 3 / 4).min(support.len());
    let mut picked: Vec<usize> = sample(rng, support.len(), from_support).into_iter().map(|k| support[k]).collect();
    picked.extend(sample(rng, params.len(), (coords - from_support).min(params.len())));
    picked
        .into_iter()
        .map(|i| {
            let numeric = central_difference(&f, params, i, FD_STEP)?;
            Ok(CoordCheck {
                index: i,
                analytic: analytic[i],
                numeric,
                rel_error: relative_error(analytic[i], numeric, 1e-9),
            })
        })
        .collect()
}

/// Largest relative error of the total-objective gradient over `instances`
/// random instances with `coords` coordinates each.
pub fn max_objective_error(mode: CheckMode, instances: usize, coords: usize, seed: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for k in 0..instances as u64 {
        let inst = Instance::random(seed.wrapping_add(k), mode)?;
        let grad = inst.gradient()?;
        let mut r = rng::stream(seed, Purpose::Init, &[0xc0, k]);
        for c in check(|p| inst.objective(p), &inst.params, &grad, coords, &mut r)? {
            worst = worst.max(c.rel_error);
        }
    }
    Ok(worst)
}
