//! Training loop.
//!
//! Each iteration:
//! 1. freeze the old policy and collect one rollout group per question;
//! 2. on the very first iteration, anchor the target entropy to the batch entropy;
//! 3. assign an entropy coefficient per question according to the mode;
//! 4. take one pass of plain gradient ascent over shuffled minibatches of
//!    (question, response) pairs;
//! 5. in AER mode, update the global scale from the rollout batch entropy.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::controller::{self, batch_entropy, AerState};
use crate::error::{AerError, Result};
use crate::eval::{self, DEFAULT_K_LIST};
use crate::objective::{objective_on_samples, samples_from_groups, EntropyMode, ObjectiveConfig, Sample};
use crate::policy::{PolicyParams, PolicyShape, Vocab};
use crate::rng::{self, Purpose};
use crate::rollout::{collect_batch, RolloutGroup};
use crate::tasks::{Question, TaskKind, TaskMix, TaskSuite, TaskTier};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Grpo,
    FixedEntropy,
    ClipHigher,
    Aer,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Grpo => "grpo",
            Mode::FixedEntropy => "fixed-entropy",
            Mode::ClipHigher => "clip-higher",
            Mode::Aer => "aer",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = AerError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grpo" => Ok(Mode::Grpo),
            "fixed-entropy" | "fixed_entropy" | "fixed" => Ok(Mode::FixedEntropy),
            "clip-higher" | "clip_higher" => Ok(Mode::ClipHigher),
            "aer" => Ok(Mode::Aer),
            other => Err(AerError::Config(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: Mode,
    pub seed: u64,
    pub iterations: usize,
    /// Questions per iteration (B).
    pub batch_size: usize,
    /// Responses per question (G).
    pub group_size: usize,
    /// (question, response) pairs per gradient step; must divide B*G.
    pub minibatch_size: usize,
    pub max_len: usize,
    pub learning_rate: f64,

    pub tau: f64,
    pub rho: f64,
    pub eta: f64,
    /// Constant coefficient of the fixed-entropy baseline.
    pub gamma: f64,

    pub clip_low: f64,
    pub clip_high: f64,
    /// Upper clip ratio used by the clip-higher baseline.
    pub clip_higher: f64,
    pub kl_coef: f64,

    pub task_mix: TaskMix,

    pub vocab_size: usize,
    pub embed_dim: usize,
    pub context: usize,
    pub hidden: usize,
    pub init_scale: f64,
    pub embed_scale: f64,

    /// Iterations between held-out pass@1 measurements (0 disables them).
    pub eval_interval: usize,
    /// Held-out questions per tier; 0 evaluates every question of each tier.
    pub eval_questions: usize,
    pub eval_samples: usize,
    pub eval_k: Vec<usize>,
    pub temperature: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let tier = |k, t| TaskTier::new(k, t).unwrap();
        Self {
            mode: Mode::Aer,
            seed: 0,
            iterations: 300,
            batch_size: 32,
            group_size: 8,
            minibatch_size: 64,
            max_len: 6,
            learning_rate: 0.05,
            tau: controller::DEFAULT_TAU,
            rho: controller::DEFAULT_RHO,
            eta: controller::DEFAULT_ETA,
            gamma: 0.01,
            clip_low: 0.2,
            clip_high: 0.2,
            clip_higher: 0.28,
            kl_coef: 0.0,
            task_mix: TaskMix::new(vec![(tier(TaskKind::ReverseCopy, 1), 1.0), (tier(TaskKind::ModularSum, 2), 1.0)])
                .unwrap(),
            vocab_size: 16,
            embed_dim: 16,
            context: 4,
            hidden: 32,
            init_scale: 0.3,
            embed_scale: 1.0,
            eval_interval: 0,
            eval_questions: 32,
            eval_samples: 32,
            eval_k: DEFAULT_K_LIST.to_vec(),
            temperature: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("iterations", self.iterations),
            ("batch_size", self.batch_size),
            ("minibatch_size", self.minibatch_size),
            ("max_len", self.max_len),
            ("embed_dim", self.embed_dim),
            ("context", self.context),
            ("hidden", self.hidden),
            ("eval_samples", self.eval_samples),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(AerError::Config(format!("{name} must be positive")));
            }
        }
        if self.group_size < 2 {
            return Err(AerError::Config(format!("group_size must be >= 2, got {}", self.group_size)));
        }
        if !(self.batch_size * self.group_size).is_multiple_of(self.minibatch_size) {
            return Err(AerError::Config(format!(
                "minibatch_size {} must divide batch_size*group_size = {}",
                self.minibatch_size,
                self.batch_size * self.group_size
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(AerError::Config("learning_rate must be positive".into()));
        }
        if !(self.gamma >= 0.0) {
            return Err(AerError::Config("gamma must be >= 0".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(AerError::Config("temperature must be positive".into()));
        }
        if let Some(&k) = self.eval_k.iter().find(|&&k| k == 0 || k > self.eval_samples) {
            return Err(AerError::Config(format!("eval k={k} must lie in 1..=eval_samples")));
        }
        AerState::new(self.tau, self.rho, self.eta)?;
        self.objective_config().validate()?;
        let suite = self.suite()?;
        for (t, _) in self.task_mix.entries() {
            if suite.max_answer_len(*t) > self.max_len {
                return Err(AerError::Config(format!(
                    "max_len {} is shorter than the longest answer of {t}",
                    self.max_len
                )));
            }
        }
        Ok(())
    }

    pub fn suite(&self) -> Result<TaskSuite> {
        TaskSuite::new(Vocab::new(self.vocab_size)?)
    }

    pub fn shape(&self) -> Result<PolicyShape> {
        let suite = self.suite()?;
        PolicyShape::new(suite.vocab(), suite.num_symbols(), self.embed_dim, self.context, self.hidden)
    }

    pub fn objective_config(&self) -> ObjectiveConfig {
        let clip_high = if self.mode == Mode::ClipHigher { self.clip_higher } else { self.clip_high };
        let entropy = match self.mode {
            Mode::Aer => EntropyMode::Aer,
            Mode::FixedEntropy => EntropyMode::Fixed(self.gamma),
            Mode::Grpo | Mode::ClipHigher => EntropyMode::None,
        };
        ObjectiveConfig { clip_low: self.clip_low, clip_high, kl_coef: self.kl_coef, entropy }
    }

    pub fn initial_params(&self) -> Result<PolicyParams> {
        let mut r = rng::stream(self.seed, Purpose::Init, &[]);
        Ok(PolicyParams::random(self.shape()?, &mut r, self.init_scale, self.embed_scale))
    }
}

/// Accuracy and coefficient of one rollout group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStat {
    pub task: TaskTier,
    pub accuracy: f64,
    pub lambda: f64,
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: usize,
    pub mode: String,
    pub mean_reward: f64,
    pub batch_entropy: f64,
    /// Global scale used during this iteration.
    pub alpha: f64,
    pub target_entropy: f64,
    pub lambda_mean: f64,
    pub lambda_max: f64,
    pub frac_hard: f64,
    pub mean_resp_len: f64,
    pub pass1: Option<f64>,
    #[serde(skip)]
    pub groups: Vec<GroupStat>,
}

impl MetricRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("metric records always serialize")
    }
}

/// Renders records as JSONL, one object per line.
pub fn metrics_jsonl(records: &[MetricRecord]) -> String {
    records.iter().map(|r| r.to_json_line() + "\n").collect()
}

pub struct Trainer {
    config: TrainConfig,
    suite: TaskSuite,
    params: PolicyParams,
    reference: PolicyParams,
    state: AerState,
    /// Iterations completed so far.
    iteration: usize,
    eval_questions: Vec<Question>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let params = config.initial_params()?;
        let reference = sync_reference(&params);
        let state = AerState::new(config.tau, config.rho, config.eta)?;
        Self::assemble(config, params, reference, state, 0)
    }

    /// Continues a run from a checkpoint written by a trainer with the same config.
    pub fn resume(config: TrainConfig, ckpt: Checkpoint) -> Result<Self> {
        config.validate()?;
        if ckpt.seed != config.seed {
            return Err(AerError::Config(format!(
                "checkpoint seed {} differs from config seed {}",
                ckpt.seed, config.seed
            )));
        }
        if *ckpt.policy.shape() != config.shape()? {
            return Err(AerError::Config("checkpoint policy shape differs from config".into()));
        }
        Self::assemble(config, ckpt.policy, ckpt.reference, ckpt.controller, ckpt.iteration)
    }

    fn assemble(
        config: TrainConfig,
        params: PolicyParams,
        reference: PolicyParams,
        state: AerState,
        iteration: usize,
    ) -> Result<Self> {
        let suite = config.suite()?;
        let eval_questions = eval::eval_set(&suite, &config.task_mix, config.eval_questions, config.seed)?;
        Ok(Self { config, suite, params, reference, state, iteration, eval_questions })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn reference(&self) -> &PolicyParams {
        &self.reference
    }

    pub fn state(&self) -> &AerState {
        &self.state
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn suite(&self) -> &TaskSuite {
        &self.suite
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.config.iterations
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            policy: self.params.clone(),
            reference: self.reference.clone(),
            controller: self.state,
            iteration: self.iteration,
            seed: self.config.seed,
        }
    }

    fn sample_questions(&self, t: usize) -> Result<Vec<Question>> {
        (0..self.config.batch_size)
            .map(|i| {
                let mut r = rng::stream(self.config.seed, Purpose::Questions, &[t as u64, i as u64]);
                let tier = self.config.task_mix.sample(&mut r);
                self.suite.generate(tier, &mut r)
            })
            .collect()
    }

    fn lambdas(&self, groups: &[RolloutGroup]) -> Result<Vec<f64>> {
        groups
            .iter()
            .map(|g| match self.config.mode {
                Mode::Aer => self.state.allocate_lambda(g.accuracy),
                Mode::FixedEntropy => Ok(self.config.gamma),
                Mode::Grpo | Mode::ClipHigher => Ok(0.0),
            })
            .collect()
    }

    /// Runs one full iteration and returns its metric record.
    pub fn step(&mut self) -> Result<MetricRecord> {
        let cfg = self.config.clone();
        let t = self.iteration;
        let old = self.params.clone();
        let questions = self.sample_questions(t)?;
        let groups = collect_batch(&old, &self.suite, questions, cfg.group_size, cfg.max_len, cfg.seed, t)?;

        let entropy = batch_entropy(&groups)?.entropy;
        if !self.state.is_initialized() {
            self.state.init_target(entropy)?;
        }
        let alpha_used = self.state.alpha;
        let lambdas = self.lambdas(&groups)?;

        let samples = samples_from_groups(&groups, &lambdas)?;
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng::stream(cfg.seed, Purpose::Minibatch, &[t as u64]));
        let obj_cfg = cfg.objective_config();
        for chunk in order.chunks(cfg.minibatch_size) {
            let mb: Vec<Sample<'_>> = chunk.iter().map(|&i| samples[i]).collect();
            let report = objective_on_samples(&self.params, &self.reference, &mb, &obj_cfg)?;
            if !report.total.is_finite() {
                return Err(AerError::NonFinite { what: "objective", iteration: t + 1 });
            }
            if report.gradient.iter().any(|g| !g.is_finite()) {
                return Err(AerError::NonFinite { what: "gradient", iteration: t + 1 });
            }
            self.params.add_scaled(&report.gradient, cfg.learning_rate);
        }
        if !self.params.is_finite() {
            return Err(AerError::NonFinite { what: "parameters", iteration: t + 1 });
        }

        if cfg.mode == Mode::Aer {
            self.state.update_alpha(entropy)?;
        }
        self.iteration += 1;

        let pass1 = if cfg.eval_interval > 0 && self.iteration.is_multiple_of(cfg.eval_interval) {
            let report = eval::evaluate(
                &self.params,
                &self.suite,
                &self.eval_questions,
                cfg.eval_samples,
                &[1],
                cfg.max_len,
                cfg.temperature,
                cfg.seed,
                self.iteration as u64,
            )?;
            Some(report.pass1())
        } else {
            None
        };

        let nq = groups.len() as f64;
        let responses: usize = groups.iter().map(RolloutGroup::size).sum();
        let tokens: usize = groups.iter().map(RolloutGroup::token_count).sum();
        let rewards: usize = groups.iter().flat_map(|g| &g.rewards).map(|&r| r as usize).sum();
        Ok(MetricRecord {
            step: self.iteration,
            mode: cfg.mode.to_string(),
            mean_reward: rewards as f64 / responses as f64,
            batch_entropy: entropy,
            alpha: alpha_used,
            target_entropy: self.state.target_entropy.unwrap_or(f64::NAN),
            lambda_mean: lambdas.iter().sum::<f64>() / nq,
            lambda_max: lambdas.iter().cloned().fold(0.0, f64::max),
            frac_hard: groups.iter().filter(|g| g.accuracy <= cfg.rho).count() as f64 / nq,
            mean_resp_len: tokens as f64 / responses as f64,
            pass1,
            groups: groups
                .iter()
                .zip(&lambdas)
                .map(|(g, &lambda)| GroupStat { task: g.question.task, accuracy: g.accuracy, lambda })
                .collect(),
        })
    }

    /// Steps until the configured iteration count, handing each record to `sink`.
    pub fn run<F>(&mut self, mut sink: F) -> Result<()>
    where
        F: FnMut(&Trainer, &MetricRecord) -> Result<()>,
    {
        while !self.is_done() {
            let rec = self.step()?;
            sink(self, &rec)?;
        }
        Ok(())
    }
}

/// Frozen copy of the policy used as the KL reference.
pub fn sync_reference(policy: &PolicyParams) -> PolicyParams {
    policy.clone()
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<MetricRecord>,
}

/// Trains from scratch for `config.iterations` iterations.
pub fn train(config: TrainConfig) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config)?;
    let mut metrics = Vec::new();
    trainer.run(|_, rec| {
        metrics.push(rec.clone());
        Ok(())
    })?;
    Ok(TrainOutcome { checkpoint: trainer.checkpoint(), metrics })
}
