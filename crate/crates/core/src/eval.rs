//! pass@k evaluation over held-out question sets.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AerError, Result};
use crate::policy::PolicyParams;
use crate::rng::{self, Purpose};
use crate::tasks::{Question, TaskMix, TaskSuite, TaskTier};

pub const DEFAULT_K_LIST: [usize; 6] = [1, 2, 4, 8, 16, 32];

/// Unbiased pass@k estimate from `c` correct out of `n` samples:
/// `1 - C(n-c, k) / C(n, k)`, evaluated as a running product.
pub fn pass_at_k(n: usize, c: usize, k: usize) -> Result<f64> {
    if c > n {
        return Err(AerError::Contract(format!("correct count {c} exceeds sample count {n}")));
    }
    if k == 0 || k > n {
        return Err(AerError::Contract(format!("k must lie in 1..={n}, got {k}")));
    }
    if n - c < k {
        return Ok(1.0);
    }
    // C(n-c, k) / C(n, k) = prod_{i=0}^{k-1} (n-c-i) / (n-i)
    let miss: f64 = (0..k).map(|i| (n - c - i) as f64 / (n - i) as f64).product();
    Ok(1.0 - miss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierReport {
    pub task: TaskTier,
    pub questions: usize,
    pub pass_at_k: BTreeMap<usize, f64>,
    pub mean_response_len: f64,
    pub mean_entropy: f64,
}

impl TierReport {
    pub fn pass1(&self) -> f64 {
        self.pass_at_k.get(&1).copied().unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples_per_question: usize,
    pub k_list: Vec<usize>,
    pub aggregate: BTreeMap<usize, f64>,
    pub tiers: Vec<TierReport>,
    pub mean_response_len: f64,
    pub mean_entropy: f64,
}

impl EvalReport {
    pub fn pass1(&self) -> f64 {
        self.aggregate.get(&1).copied().unwrap_or(f64::NAN)
    }

    pub fn tier(&self, task: TaskTier) -> Option<&TierReport> {
        self.tiers.iter().find(|t| t.task == task)
    }

    /// `k,aggregate,<tier>...` with one row per k.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,aggregate");
        for t in &self.tiers {
            write!(out, ",{}", t.task).unwrap();
        }
        out.push('\n');
        for k in &self.k_list {
            write!(out, "{k},{}", self.aggregate[k]).unwrap();
            for t in &self.tiers {
                write!(out, ",{}", t.pass_at_k[k]).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// `per_tier` held-out questions for each tier of the mix, or every question
/// of each tier when `per_tier` is 0.
pub fn eval_set(suite: &TaskSuite, mix: &TaskMix, per_tier: usize, seed: u64) -> Result<Vec<Question>> {
    let mut out = Vec::new();
    for (ti, tier) in mix.tiers().into_iter().enumerate() {
        if per_tier == 0 {
            out.extend(suite.enumerate(tier)?);
            continue;
        }
        for i in 0..per_tier {
            let mut r = rng::stream(seed, Purpose::EvalQuestions, &[ti as u64, i as u64]);
            out.push(suite.generate(tier, &mut r)?);
        }
    }
    Ok(out)
}

struct QuestionStats {
    task: TaskTier,
    correct: usize,
    tokens: usize,
    entropy_sum: f64,
}

/// Samples `n` responses per question and aggregates pass@k per tier and overall.
/// Question `i` draws from the stream keyed by `(seed, round, i)`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    params: &PolicyParams,
    suite: &TaskSuite,
    questions: &[Question],
    n: usize,
    k_list: &[usize],
    max_len: usize,
    temperature: f64,
    seed: u64,
    round: u64,
) -> Result<EvalReport> {
    if questions.is_empty() {
        return Err(AerError::Data("evaluation over an empty question set".into()));
    }
    if let Some(&k) = k_list.iter().find(|&&k| k == 0 || k > n) {
        return Err(AerError::Contract(format!("k={k} requires 1 <= k <= n={n}")));
    }
    let stats: Vec<QuestionStats> = questions
        .par_iter()
        .enumerate()
        .map(|(i, q)| {
            let mut r = rng::stream(seed, Purpose::EvalSamples, &[round, i as u64]);
            let mut st = QuestionStats { task: q.task, correct: 0, tokens: 0, entropy_sum: 0.0 };
            for _ in 0..n {
                let resp = params.sample_response_with_temperature(&q.encoding, &mut r, max_len, temperature)?;
                st.correct += suite.verify(q, &resp.tokens) as usize;
                st.tokens += resp.len();
                st.entropy_sum += resp.entropies.iter().sum::<f64>();
            }
            Ok(st)
        })
        .collect::<Result<_>>()?;

    let mut k_list = k_list.to_vec();
    k_list.sort_unstable();
    k_list.dedup();

    let summarize = |subset: &[&QuestionStats]| -> Result<(BTreeMap<usize, f64>, f64, f64)> {
        let mut pk = BTreeMap::new();
        for &k in &k_list {
            let mut sum = 0.0;
            for s in subset {
                sum += pass_at_k(n, s.correct, k)?;
            }
            pk.insert(k, sum / subset.len() as f64);
        }
        let tokens: usize = subset.iter().map(|s| s.tokens).sum();
        let len = tokens as f64 / (subset.len() * n) as f64;
        let ent = subset.iter().map(|s| s.entropy_sum).sum::<f64>() / tokens.max(1) as f64;
        Ok((pk, len, ent))
    };

    let mut tiers: Vec<TaskTier> = stats.iter().map(|s| s.task).collect();
    tiers.sort();
    tiers.dedup();
    let mut tier_reports = Vec::new();
    for t in tiers {
        let subset: Vec<&QuestionStats> = stats.iter().filter(|s| s.task == t).collect();
        let (pk, len, ent) = summarize(&subset)?;
        tier_reports.push(TierReport {
            task: t,
            questions: subset.len(),
            pass_at_k: pk,
            mean_response_len: len,
            mean_entropy: ent,
        });
    }
    let all: Vec<&QuestionStats> = stats.iter().collect();
    let (aggregate, len, ent) = summarize(&all)?;
    Ok(EvalReport {
        samples_per_question: n,
        k_list,
        aggregate,
        tiers: tier_reports,
        mean_response_len: len,
        mean_entropy: ent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Fraction of k-subsets of n items (c of them correct) containing a correct item.
    fn brute_force(n: usize, c: usize, k: usize) -> f64 {
        let (mut hit, mut total) = (0u64, 0u64);
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != k {
                continue;
            }
            total += 1;
            // items 0..c are the correct ones
            if mask & ((1u32 << c) - 1) != 0 {
                hit += 1;
            }
        }
        hit as f64 / total as f64
    }

    #[test]
    fn pass_at_k_examples() {
        assert!((pass_at_k(4, 2, 2).unwrap() - 5.0 / 6.0).abs() < 1e-12);
        for k in 1..=8 {
            assert_eq!(pass_at_k(8, 0, k).unwrap(), 0.0);
            assert_eq!(pass_at_k(8, 8, k).unwrap(), 1.0);
            assert!((pass_at_k(8, 3, k).unwrap() - brute_force(8, 3, k)).abs() < 1e-12);
        }
        assert!(pass_at_k(4, 1, 5).is_err());
        assert!(pass_at_k(4, 5, 1).is_err());
    }

    #[test]
    fn pass_at_k_monotone_and_unbiased_up_to_12() {
        for n in 1..=12 {
            for c in 0..=n {
                let mut prev = 0.0;
                for k in 1..=n {
                    let v = pass_at_k(n, c, k).unwrap();
                    assert!((v - brute_force(n, c, k)).abs() < 1e-12, "n={n} c={c} k={k}");
                    assert!(v + 1e-15 >= prev);
                    assert!((0.0..=1.0).contains(&v));
                    if c < n {
                        assert!(pass_at_k(n, c + 1, k).unwrap() + 1e-15 >= v);
                    }
                    prev = v;
                }
            }
        }
    }
}
