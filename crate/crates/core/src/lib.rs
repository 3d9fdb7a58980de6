//! Group-relative policy optimization with adaptive entropy regularization,
//! trained on small verifiable sequence tasks.
//!
//! The pipeline is: a [`policy`] samples grouped responses to [`tasks`]
//! questions ([`rollout`]), the clipped [`objective`] is ascended by the
//! [`trainer`], the [`controller`] sets per-question entropy coefficients, and
//! [`eval`] reports pass@k.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod controller;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod objective;
pub mod plant;
pub mod policy;
pub mod rng;
pub mod rollout;
pub mod tasks;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use controller::{batch_entropy, AerState};
pub use error::{AerError, Result};
pub use eval::{pass_at_k, EvalReport};
pub use objective::{EntropyMode, ObjectiveConfig, ObjectiveReport};
pub use policy::{PolicyParams, PolicyShape, QuestionEncoding, Response, Vocab};
pub use rollout::RolloutGroup;
pub use tasks::{Question, TaskKind, TaskMix, TaskSuite, TaskTier};
pub use trainer::{MetricRecord, Mode, TrainConfig, Trainer};
