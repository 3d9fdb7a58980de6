//! Synthetic verifiable tasks.
//!
//! * `ReverseCopy` tier k: k random non-EOS tokens; the answer is the same tokens
//!   reversed, then EOS.
//! * `ModularSum` tier k: k addends in 0..=9; the answer is the decimal digits of
//!   (sum mod 16), then EOS.
//!
//! Questions are encoded for the policy as a set of embedding symbols: a task
//! symbol, a task/length symbol and one (slot, value) symbol per question token.
//! ReverseCopy slots count from the end of the question so that answer position
//! `l` always reads slot `l`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AerError, Result};
use crate::policy::{QuestionEncoding, Vocab};

/// Largest tier the embedding layout reserves room for.
pub const MAX_TIER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskKind {
    ReverseCopy,
    ModularSum,
}

impl TaskKind {
    pub const ALL: [TaskKind; 2] = [TaskKind::ReverseCopy, TaskKind::ModularSum];

    pub fn max_tier(self) -> usize {
        match self {
            TaskKind::ReverseCopy => 4,
            // mod-16 wraparound makes the digit count non-monotone beyond three addends
            TaskKind::ModularSum => 3,
        }
    }

    fn index(self) -> usize {
        match self {
            TaskKind::ReverseCopy => 0,
            TaskKind::ModularSum => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::ReverseCopy => "reverse_copy",
            TaskKind::ModularSum => "modular_sum",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = AerError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reverse_copy" | "reverse-copy" | "rc" => Ok(TaskKind::ReverseCopy),
            "modular_sum" | "modular-sum" | "ms" => Ok(TaskKind::ModularSum),
            other => Err(AerError::Config(format!("unknown task kind `{other}`"))),
        }
    }
}

/// A task family at a specific difficulty tier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaskTier {
    pub kind: TaskKind,
    pub tier: usize,
}

impl TaskTier {
    pub fn new(kind: TaskKind, tier: usize) -> Result<Self> {
        if tier == 0 || tier > kind.max_tier() {
            return Err(AerError::Config(format!("{kind} supports tiers 1..={}, got {tier}", kind.max_tier())));
        }
        Ok(Self { kind, tier })
    }
}

impl fmt::Display for TaskTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind, self.tier)
    }
}

impl FromStr for TaskTier {
    type Err = AerError;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, tier) =
            s.split_once(':').ok_or_else(|| AerError::Config(format!("task tier `{s}` must look like kind:tier")))?;
        let tier = tier.trim().parse().map_err(|_| AerError::Config(format!("bad tier in `{s}`")))?;
        TaskTier::new(kind.trim().parse()?, tier)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub task: TaskTier,
    /// Raw question tokens (ReverseCopy) or addends (ModularSum).
    pub symbols: Vec<usize>,
    pub encoding: QuestionEncoding,
    answer: Vec<usize>,
}

impl Question {
    pub fn answer(&self) -> &[usize] {
        &self.answer
    }
}

/// Question generator and rule-based verifier over a fixed vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskSuite {
    vocab: Vocab,
}

impl TaskSuite {
    /// The vocabulary must hold the ten digits plus EOS.
    pub fn new(vocab: Vocab) -> Result<Self> {
        if vocab.size() < 11 {
            return Err(AerError::Config(format!("task vocabulary needs at least 11 tokens, got {}", vocab.size())));
        }
        Ok(Self { vocab })
    }

    pub fn vocab(&self) -> Vocab {
        self.vocab
    }

    /// Rows the policy's question-embedding table must have.
    pub fn num_symbols(&self) -> usize {
        2 + 2 * MAX_TIER + 2 * MAX_TIER * self.vocab.size()
    }

    fn length_symbol(&self, kind: TaskKind, tier: usize) -> usize {
        2 + kind.index() * MAX_TIER + (tier - 1)
    }

    fn slot_symbol(&self, kind: TaskKind, slot: usize, value: usize) -> usize {
        2 + 2 * MAX_TIER + (kind.index() * MAX_TIER + slot) * self.vocab.size() + value
    }

    /// Longest ground-truth answer across the supported tiers of `task`.
    pub fn max_answer_len(&self, task: TaskTier) -> usize {
        match task.kind {
            TaskKind::ReverseCopy => task.tier + 1,
            TaskKind::ModularSum => 3,
        }
    }

    /// Builds the question for explicit symbols.
    pub fn make_question(&self, task: TaskTier, symbols: Vec<usize>) -> Result<Question> {
        let task = TaskTier::new(task.kind, task.tier)?;
        if symbols.len() != task.tier {
            return Err(AerError::Config(format!("{task} needs {} symbols, got {}", task.tier, symbols.len())));
        }
        let eos = self.vocab.eos();
        let (limit, answer) = match task.kind {
            TaskKind::ReverseCopy => {
                let mut a: Vec<usize> = symbols.iter().rev().cloned().collect();
                a.push(eos);
                (eos, a)
            }
            TaskKind::ModularSum => {
                let total = symbols.iter().sum::<usize>() % 16;
                let mut a: Vec<usize> = total.to_string().bytes().map(|b| (b - b'0') as usize).collect();
                a.push(eos);
                (10, a)
            }
        };
        if let Some(bad) = symbols.iter().find(|&&s| s >= limit) {
            return Err(AerError::Config(format!("symbol {bad} out of range for {task}")));
        }
        let k = task.tier;
        let mut enc = vec![task.kind.index(), self.length_symbol(task.kind, k)];
        for (i, &s) in symbols.iter().enumerate() {
            let slot = match task.kind {
                TaskKind::ReverseCopy => k - 1 - i,
                TaskKind::ModularSum => i,
            };
            enc.push(self.slot_symbol(task.kind, slot, s));
        }
        Ok(Question { task, symbols, encoding: QuestionEncoding(enc), answer })
    }

    fn symbol_limit(&self, kind: TaskKind) -> usize {
        match kind {
            TaskKind::ReverseCopy => self.vocab.eos(),
            TaskKind::ModularSum => 10,
        }
    }

    /// Number of distinct questions in a tier.
    pub fn question_count(&self, task: TaskTier) -> usize {
        self.symbol_limit(task.kind).pow(task.tier as u32)
    }

    /// Every question of a tier, in lexicographic order of symbols.
    pub fn enumerate(&self, task: TaskTier) -> Result<Vec<Question>> {
        let limit = self.symbol_limit(task.kind);
        (0..self.question_count(task))
            .map(|mut n| {
                let mut symbols = vec![0; task.tier];
                for s in symbols.iter_mut().rev() {
                    *s = n % limit;
                    n /= limit;
                }
                self.make_question(task, symbols)
            })
            .collect()
    }

    /// Draws a question uniformly from the tier's question space.
    pub fn generate<R: Rng>(&self, task: TaskTier, rng: &mut R) -> Result<Question> {
        let task = TaskTier::new(task.kind, task.tier)?;
        let limit = self.symbol_limit(task.kind);
        let symbols = (0..task.tier).map(|_| rng.gen_range(0..limit)).collect();
        self.make_question(task, symbols)
    }

    /// 1 iff the response equals the ground-truth answer (including EOS).
    pub fn verify(&self, question: &Question, tokens: &[usize]) -> u8 {
        u8::from(tokens == question.answer.as_slice())
    }
}

/// Categorical distribution over task tiers for mixed-difficulty batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMix {
    entries: Vec<(TaskTier, f64)>,
}

impl TaskMix {
    pub fn new(entries: Vec<(TaskTier, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(AerError::Config("task mix is empty".into()));
        }
        if entries.iter().any(|(_, w)| !(*w > 0.0 && w.is_finite())) {
            return Err(AerError::Config("task mix weights must be positive".into()));
        }
        Ok(Self { entries })
    }

    pub fn single(task: TaskTier) -> Self {
        Self { entries: vec![(task, 1.0)] }
    }

    pub fn entries(&self) -> &[(TaskTier, f64)] {
        &self.entries
    }

    pub fn tiers(&self) -> Vec<TaskTier> {
        let mut t: Vec<TaskTier> = self.entries.iter().map(|(t, _)| *t).collect();
        t.sort();
        t.dedup();
        t
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> TaskTier {
        let total: f64 = self.entries.iter().map(|(_, w)| w).sum();
        let u = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        for (t, w) in &self.entries {
            acc += w;
            if u < acc {
                return *t;
            }
        }
        self.entries.last().unwrap().0
    }
}

impl fmt::Display for TaskMix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.entries.iter().map(|(t, w)| format!("{t}={w}")).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for TaskMix {
    type Err = AerError;

    /// `reverse_copy:1=0.5,modular_sum:2=0.5`; a missing weight defaults to 1.
    fn from_str(s: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (tier, weight) = match part.split_once('=') {
                Some((t, w)) => {
                    (t, w.trim().parse::<f64>().map_err(|_| AerError::Config(format!("bad weight in `{part}`")))?)
                }
                None => (part, 1.0),
            };
            entries.push((tier.parse()?, weight));
        }
        TaskMix::new(entries)
    }
}
