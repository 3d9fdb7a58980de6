//! Flat `key = value` configuration files with dotted section names.
//!
//! ```text
//! # comment
//! mode = aer
//! train.learning_rate = 0.3
//! tasks.mix = reverse_copy:1=1,modular_sum:2=1
//! ```
//!
//! Overrides name a key either in full or by a unique dotted suffix
//! (`rho` resolves to `aer.rho`).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use aer_core::trainer::{Mode, TrainConfig};

use crate::error::{CliError, Result};

/// Every recognised key, in snapshot order.
pub const KEYS: &[&str] = &[
    "mode",
    "seed",
    "train.iterations",
    "train.batch_size",
    "train.group_size",
    "train.minibatch_size",
    "train.max_len",
    "train.learning_rate",
    "aer.tau",
    "aer.rho",
    "aer.eta",
    "fixed.gamma",
    "clip.low",
    "clip.high",
    "clip.higher",
    "kl.beta",
    "tasks.mix",
    "policy.vocab",
    "policy.embed_dim",
    "policy.context",
    "policy.hidden",
    "policy.init_scale",
    "policy.embed_scale",
    "eval.interval",
    "eval.questions",
    "eval.samples",
    "eval.k",
    "eval.temperature",
];

/// Maps a full key or unique dotted suffix to its canonical key.
pub fn resolve_key(name: &str) -> Result<&'static str> {
    let name = name.trim();
    if let Some(k) = KEYS.iter().find(|k| **k == name) {
        return Ok(k);
    }
    let matches: Vec<&'static str> =
        KEYS.iter().copied().filter(|k| k.ends_with(name) && k[..k.len() - name.len()].ends_with('.')).collect();
    match matches.as_slice() {
        [one] => Ok(one),
        [] => Err(CliError::UnknownKey(name.to_string())),
        many => {
            Err(CliError::Config { key: name.to_string(), message: format!("ambiguous, matches {}", many.join(", ")) })
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| CliError::Config {
        key: key.to_string(),
        message: format!("invalid value `{value}`: {e}"),
    })
}

fn parse_k_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse_value(key, v.trim())).collect()
}

/// Sets one key on `cfg`. `key` may be a suffix alias.
pub fn set(cfg: &mut TrainConfig, key: &str, value: &str) -> Result<()> {
    let key = resolve_key(key)?;
    let v = value.trim();
    match key {
        "mode" => cfg.mode = parse_value::<Mode>(key, v)?,
        "seed" => cfg.seed = parse_value(key, v)?,
        "train.iterations" => cfg.iterations = parse_value(key, v)?,
        "train.batch_size" => cfg.batch_size = parse_value(key, v)?,
        "train.group_size" => cfg.group_size = parse_value(key, v)?,
        "train.minibatch_size" => cfg.minibatch_size = parse_value(key, v)?,
        "train.max_len" => cfg.max_len = parse_value(key, v)?,
        "train.learning_rate" => cfg.learning_rate = parse_value(key, v)?,
        "aer.tau" => cfg.tau = parse_value(key, v)?,
        "aer.rho" => cfg.rho = parse_value(key, v)?,
        "aer.eta" => cfg.eta = parse_value(key, v)?,
        "fixed.gamma" => cfg.gamma = parse_value(key, v)?,
        "clip.low" => cfg.clip_low = parse_value(key, v)?,
        "clip.high" => cfg.clip_high = parse_value(key, v)?,
        "clip.higher" => cfg.clip_higher = parse_value(key, v)?,
        "kl.beta" => cfg.kl_coef = parse_value(key, v)?,
        "tasks.mix" => cfg.task_mix = parse_value(key, v)?,
        "policy.vocab" => cfg.vocab_size = parse_value(key, v)?,
        "policy.embed_dim" => cfg.embed_dim = parse_value(key, v)?,
        "policy.context" => cfg.context = parse_value(key, v)?,
        "policy.hidden" => cfg.hidden = parse_value(key, v)?,
        "policy.init_scale" => cfg.init_scale = parse_value(key, v)?,
        "policy.embed_scale" => cfg.embed_scale = parse_value(key, v)?,
        "eval.interval" => cfg.eval_interval = parse_value(key, v)?,
        "eval.questions" => cfg.eval_questions = parse_value(key, v)?,
        "eval.samples" => cfg.eval_samples = parse_value(key, v)?,
        "eval.k" => cfg.eval_k = parse_k_list(key, v)?,
        "eval.temperature" => cfg.temperature = parse_value(key, v)?,
        _ => unreachable!("every key in KEYS is handled"),
    }
    Ok(())
}

/// Current value of a canonical key, formatted as it would appear in a file.
pub fn get(cfg: &TrainConfig, key: &str) -> Result<String> {
    let key = resolve_key(key)?;
    Ok(match key {
        "mode" => cfg.mode.to_string(),
        "seed" => cfg.seed.to_string(),
        "train.iterations" => cfg.iterations.to_string(),
        "train.batch_size" => cfg.batch_size.to_string(),
        "train.group_size" => cfg.group_size.to_string(),
        "train.minibatch_size" => cfg.minibatch_size.to_string(),
        "train.max_len" => cfg.max_len.to_string(),
        "train.learning_rate" => cfg.learning_rate.to_string(),
        "aer.tau" => cfg.tau.to_string(),
        "aer.rho" => cfg.rho.to_string(),
        "aer.eta" => cfg.eta.to_string(),
        "fixed.gamma" => cfg.gamma.to_string(),
        "clip.low" => cfg.clip_low.to_string(),
        "clip.high" => cfg.clip_high.to_string(),
        "clip.higher" => cfg.clip_higher.to_string(),
        "kl.beta" => cfg.kl_coef.to_string(),
        "tasks.mix" => cfg.task_mix.to_string(),
        "policy.vocab" => cfg.vocab_size.to_string(),
        "policy.embed_dim" => cfg.embed_dim.to_string(),
        "policy.context" => cfg.context.to_string(),
        "policy.hidden" => cfg.hidden.to_string(),
        "policy.init_scale" => cfg.init_scale.to_string(),
        "policy.embed_scale" => cfg.embed_scale.to_string(),
        "eval.interval" => cfg.eval_interval.to_string(),
        "eval.questions" => cfg.eval_questions.to_string(),
        "eval.samples" => cfg.eval_samples.to_string(),
        "eval.k" => cfg.eval_k.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(","),
        "eval.temperature" => cfg.temperature.to_string(),
        _ => unreachable!("every key in KEYS is handled"),
    })
}

/// Applies the lines of a config file on top of `base`. Keys in files must be
/// written in full; duplicates are rejected.
pub fn parse_onto(mut cfg: TrainConfig, text: &str) -> Result<TrainConfig> {
    let mut seen = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| CliError::Config {
            key: line.to_string(),
            message: format!("line {} is not `key = value`", n + 1),
        })?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(CliError::UnknownKey(key.to_string()));
        }
        if seen.contains(&key) {
            return Err(CliError::Config { key: key.to_string(), message: "set twice".into() });
        }
        seen.push(key);
        set(&mut cfg, key, value)?;
    }
    Ok(cfg)
}

pub fn parse(text: &str) -> Result<TrainConfig> {
    parse_onto(TrainConfig::default(), text)
}

pub fn load(path: &Path) -> Result<TrainConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })?;
    parse(&text)
}

/// Applies `KEY=VALUE` overrides in order.
pub fn apply_overrides<S: AsRef<str>>(cfg: &mut TrainConfig, overrides: &[S]) -> Result<()> {
    for o in overrides {
        let o = o.as_ref();
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| CliError::Config { key: o.to_string(), message: "override must be KEY=VALUE".into() })?;
        set(cfg, k, v)?;
    }
    Ok(())
}

/// Serializes every key in canonical order.
pub fn to_string(cfg: &TrainConfig) -> String {
    let mut out = String::new();
    for key in KEYS {
        writeln!(out, "{key} = {}", get(cfg, key).expect("canonical key")).unwrap();
    }
    out
}
