//! Group rollouts: G responses per question from the frozen old policy, scored
//! by the verifier, with group accuracy and group-normalized advantages.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AerError, Result};
use crate::policy::{PolicyParams, Response};
use crate::rng::{self, Purpose, RngStream};
use crate::tasks::{Question, TaskSuite};

/// Floor on the group standard deviation used as the advantage denominator.
pub const STD_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub question: Question,
    pub responses: Vec<Response>,
    pub rewards: Vec<u8>,
    pub accuracy: f64,
    pub advantages: Vec<f64>,
}

impl RolloutGroup {
    /// Scores already-sampled responses and derives accuracy and advantages.
    pub fn from_scored(question: Question, responses: Vec<Response>, rewards: Vec<u8>) -> Result<Self> {
        if responses.len() != rewards.len() {
            return Err(AerError::Data(format!("{} responses but {} rewards", responses.len(), rewards.len())));
        }
        let advantages = normalize_advantages(&rewards)?;
        Ok(Self { accuracy: group_accuracy(&rewards), question, responses, rewards, advantages })
    }

    pub fn size(&self) -> usize {
        self.responses.len()
    }

    pub fn token_count(&self) -> usize {
        self.responses.iter().map(Response::len).sum()
    }
}

/// g(q) = (sum of rewards) / G.
pub fn group_accuracy(rewards: &[u8]) -> f64 {
    if rewards.is_empty() {
        return 0.0;
    }
    rewards.iter().map(|&r| r as usize).sum::<usize>() as f64 / rewards.len() as f64
}

/// (R_i - mean) / max(std, STD_EPS) with the population standard deviation;
/// all-equal groups get zero advantages.
pub fn normalize_advantages(rewards: &[u8]) -> Result<Vec<f64>> {
    let g = rewards.len();
    if g < 2 {
        return Err(AerError::Contract(format!("group size must be >= 2, got {g}")));
    }
    let r: Vec<f64> = rewards.iter().map(|&v| v as f64).collect();
    let mean = r.iter().sum::<f64>() / g as f64;
    let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / g as f64;
    let std = var.sqrt();
    if std == 0.0 {
        return Ok(vec![0.0; g]);
    }
    let denom = std.max(STD_EPS);
    Ok(r.iter().map(|v| (v - mean) / denom).collect())
}

/// Samples `group_size` independent responses to `question` and scores them.
pub fn collect_group(
    old: &PolicyParams,
    suite: &TaskSuite,
    question: Question,
    group_size: usize,
    max_len: usize,
    rng: &mut RngStream,
) -> Result<RolloutGroup> {
    if group_size < 2 {
        return Err(AerError::Contract(format!("group size must be >= 2, got {group_size}")));
    }
    let mut responses = Vec::with_capacity(group_size);
    let mut rewards = Vec::with_capacity(group_size);
    for _ in 0..group_size {
        let r = old.sample_response(&question.encoding, rng, max_len)?;
        rewards.push(suite.verify(&question, &r.tokens));
        responses.push(r);
    }
    RolloutGroup::from_scored(question, responses, rewards)
}

/// Collects one group per question, each from its own stream keyed by
/// `(seed, iteration, question index)`. Output order follows `questions`
/// regardless of how many threads run the collection.
pub fn collect_batch(
    old: &PolicyParams,
    suite: &TaskSuite,
    questions: Vec<Question>,
    group_size: usize,
    max_len: usize,
    seed: u64,
    iteration: usize,
) -> Result<Vec<RolloutGroup>> {
    questions
        .into_par_iter()
        .enumerate()
        .map(|(i, q)| {
            let mut rng = rng::stream(seed, Purpose::Rollout, &[iteration as u64, i as u64]);
            collect_group(old, suite, q, group_size, max_len, &mut rng)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{PolicyShape, Vocab};
    use crate::tasks::{TaskKind, TaskTier};
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64]) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-9, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn advantage_examples() {
        close(&normalize_advantages(&[1, 1, 0, 0]).unwrap(), &[1.0, 1.0, -1.0, -1.0]);
        close(&normalize_advantages(&[1, 1, 1, 1]).unwrap(), &[0.0; 4]);
        close(&normalize_advantages(&[0, 0, 0, 0]).unwrap(), &[0.0; 4]);
        close(&normalize_advantages(&[1, 0]).unwrap(), &[1.0, -1.0]);
        let s3 = 3f64.sqrt();
        close(&normalize_advantages(&[1, 0, 0, 0]).unwrap(), &[s3, -1.0 / s3, -1.0 / s3, -1.0 / s3]);
        assert!(matches!(normalize_advantages(&[1]), Err(AerError::Contract(_))));
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(group_accuracy(&[1, 0, 1, 0]), 0.5);
        assert_eq!(group_accuracy(&[0, 0, 0]), 0.0);
    }

    proptest! {
        #[test]
        fn advantages_are_centered_and_unit_std(bits in proptest::collection::vec(0u8..=1, 2..32)) {
            let adv = normalize_advantages(&bits).unwrap();
            let g = bits.len() as f64;
            if bits.iter().all(|&b| b == bits[0]) {
                prop_assert!(adv.iter().all(|&a| a == 0.0));
            } else {
                let sum: f64 = adv.iter().sum();
                let std = (adv.iter().map(|a| a * a).sum::<f64>() / g - (sum / g).powi(2)).sqrt();
                prop_assert!(sum.abs() < 1e-9);
                prop_assert!((std - 1.0).abs() < 1e-6);
            }
            let acc = group_accuracy(&bits);
            prop_assert!(((acc * g).round() - acc * g).abs() < 1e-12);
        }

        #[test]
        fn advantages_follow_permutations(bits in proptest::collection::vec(0u8..=1, 2..16), rot in 0usize..16) {
            let adv = normalize_advantages(&bits).unwrap();
            let k = rot % bits.len();
            let mut permuted = bits.clone();
            permuted.rotate_left(k);
            let mut expected = adv.clone();
            expected.rotate_left(k);
            let got = normalize_advantages(&permuted).unwrap();
            for (a, b) in got.iter().zip(&expected) {
                prop_assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn collect_group_scores_responses() {
        let vocab = Vocab::new(16).unwrap();
        let suite = TaskSuite::new(vocab).unwrap();
        let shape = PolicyShape::new(vocab, suite.num_symbols(), 4, 4, 8).unwrap();
        let mut p = PolicyParams::zeros(shape);
        // EOS-only policy never answers correctly
        p.output_bias_mut()[15] = 50.0;
        let q = suite.make_question(TaskTier::new(TaskKind::ReverseCopy, 1).unwrap(), vec![3]).unwrap();
        let mut rng = rng::stream(0, Purpose::Rollout, &[]);
        let g = collect_group(&p, &suite, q, 4, 6, &mut rng).unwrap();
        assert_eq!(g.rewards, vec![0; 4]);
        assert_eq!(g.accuracy, 0.0);
        assert_eq!(g.advantages, vec![0.0; 4]);
        assert!(g.responses.iter().all(|r| r.tokens == vec![15]));
    }
}
