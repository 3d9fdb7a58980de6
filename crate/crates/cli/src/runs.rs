//! Run directories: training with persisted metrics and checkpoints, and
//! evaluation of saved policies.
//!
//! Layout of a run directory:
//!
//! | file              | contents                                             |
//! |-------------------|------------------------------------------------------|
//! | `config.snapshot` | effective configuration, every key                   |
//! | `metrics.jsonl`   | one metric record per iteration                      |
//! | `groups.jsonl`    | per-iteration group accuracies and coefficients      |
//! | `checkpoint.bin`  | latest checkpoint                                    |
//! | `eval.json`       | final evaluation report                              |
//! | `passk.csv`       | pass@k against k, aggregate and per tier             |
//! | `abort.json`      | written only when training stops on a non-finite value |

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use aer_core::checkpoint::Checkpoint;
use aer_core::eval::{self, EvalReport};
use aer_core::trainer::{MetricRecord, TrainConfig, Trainer};
use aer_core::{AerError, PolicyParams};
use serde_json::{json, Value};

use crate::config;
use crate::error::{io_at, CliError, Result};

pub const CONFIG_FILE: &str = "config.snapshot";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const GROUPS_FILE: &str = "groups.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const EVAL_FILE: &str = "eval.json";
pub const PASSK_FILE: &str = "passk.csv";
pub const ABORT_FILE: &str = "abort.json";

/// A named training run and where it writes.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub config: TrainConfig,
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    /// Iterations between checkpoint writes; the final state is always saved.
    pub checkpoint_every: usize,
    pub resume: bool,
    /// Stop with a checkpoint once this iteration is reached, skipping the
    /// final evaluation. `resume` continues from there.
    pub stop_after: Option<usize>,
    /// Progress lines on stderr.
    pub verbose: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { checkpoint_every: 50, resume: false, stop_after: None, verbose: false }
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub name: String,
    pub last: MetricRecord,
    /// Absent when the run stopped early.
    pub eval: Option<EvalReport>,
}

fn groups_line(rec: &MetricRecord) -> String {
    let groups: Vec<Value> = rec
        .groups
        .iter()
        .map(|g| json!({ "task": g.task.to_string(), "accuracy": g.accuracy, "lambda": g.lambda }))
        .collect();
    json!({ "step": rec.step, "groups": groups }).to_string()
}

/// Keeps the first `lines` lines of a file, creating it if absent.
fn truncate_lines(path: &Path, lines: usize) -> Result<()> {
    if !path.exists() {
        return io_at(path, File::create(path)).map(|_| ());
    }
    let text = io_at(path, fs::read_to_string(path))?;
    let kept: String = text.lines().take(lines).map(|l| format!("{l}\n")).collect();
    if kept.lines().count() < lines {
        return Err(CliError::Usage(format!(
            "{} has fewer than {lines} lines; cannot resume from the checkpoint",
            path.display()
        )));
    }
    io_at(path, fs::write(path, kept))
}

fn open_append(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(io_at(path, OpenOptions::new().create(true).append(true).open(path))?))
}

fn start(spec: &ExperimentSpec, opts: &RunOptions) -> Result<Trainer> {
    let dir = &spec.dir;
    let ckpt = dir.join(CHECKPOINT_FILE);
    let snapshot = config::to_string(&spec.config);
    if opts.resume && ckpt.exists() {
        let previous = io_at(&dir.join(CONFIG_FILE), fs::read_to_string(dir.join(CONFIG_FILE)))?;
        if previous != snapshot {
            return Err(CliError::Usage(format!(
                "{} was written with a different configuration; refusing to resume",
                dir.display()
            )));
        }
        let trainer = Trainer::resume(spec.config.clone(), Checkpoint::load(&ckpt)?)?;
        truncate_lines(&dir.join(METRICS_FILE), trainer.iteration())?;
        truncate_lines(&dir.join(GROUPS_FILE), trainer.iteration())?;
        return Ok(trainer);
    }
    if dir.join(METRICS_FILE).exists() {
        return Err(CliError::Usage(format!(
            "{} already holds a run; pass --resume or choose another directory",
            dir.display()
        )));
    }
    io_at(dir, fs::create_dir_all(dir))?;
    io_at(&dir.join(CONFIG_FILE), fs::write(dir.join(CONFIG_FILE), snapshot))?;
    for f in [METRICS_FILE, GROUPS_FILE] {
        io_at(&dir.join(f), File::create(dir.join(f)))?;
    }
    Ok(Trainer::new(spec.config.clone())?)
}

/// Trains `spec` to completion, streaming metrics to disk, then evaluates the
/// final policy.
pub fn train_run(spec: &ExperimentSpec, opts: &RunOptions) -> Result<RunSummary> {
    spec.config.validate()?;
    let dir = &spec.dir;
    let mut trainer = start(spec, opts)?;
    let metrics_path = dir.join(METRICS_FILE);
    let groups_path = dir.join(GROUPS_FILE);
    let ckpt_path = dir.join(CHECKPOINT_FILE);
    let mut metrics = open_append(&metrics_path)?;
    let mut groups = open_append(&groups_path)?;
    let mut last: Option<MetricRecord> = None;

    let stop = opts.stop_after.unwrap_or(usize::MAX);
    let mut result = Ok(());
    while !trainer.is_done() && trainer.iteration() < stop {
        let rec = match trainer.step() {
            Ok(r) => r,
            Err(e) => {
                result = Err(e);
                break;
            }
        };
        io_at(&metrics_path, writeln!(metrics, "{}", rec.to_json_line()))?;
        io_at(&groups_path, writeln!(groups, "{}", groups_line(&rec)))?;
        if opts.checkpoint_every > 0 && trainer.iteration() % opts.checkpoint_every == 0 {
            io_at(&metrics_path, metrics.flush())?;
            io_at(&groups_path, groups.flush())?;
            trainer.checkpoint().save(&ckpt_path)?;
        }
        if opts.verbose && (rec.step % 25 == 0 || rec.step == 1) {
            eprintln!(
                "[{}] step {:>4}  reward {:.3}  entropy {:.3}  alpha {:.3}",
                spec.name, rec.step, rec.mean_reward, rec.batch_entropy, rec.alpha
            );
        }
        last = Some(rec);
    }
    io_at(&metrics_path, metrics.flush())?;
    io_at(&groups_path, groups.flush())?;

    if let Err(e) = result {
        if let AerError::NonFinite { what, iteration } = &e {
            let diag = json!({ "iteration": iteration, "what": what, "run": spec.name });
            io_at(&dir.join(ABORT_FILE), fs::write(dir.join(ABORT_FILE), diag.to_string() + "\n"))?;
        }
        return Err(e.into());
    }
    trainer.checkpoint().save(&ckpt_path)?;

    let last = match last {
        Some(l) => l,
        None => read_metrics(&metrics_path)?
            .last()
            .map(|v| serde_json::from_value(v.clone()).expect("metrics written by this program"))
            .ok_or_else(|| CliError::Usage(format!("{} is empty", metrics_path.display())))?,
    };
    if !trainer.is_done() {
        return Ok(RunSummary { name: spec.name.clone(), last, eval: None });
    }
    let report = evaluate_params(&spec.config, trainer.params())?;
    write_eval(dir, &report)?;
    Ok(RunSummary { name: spec.name.clone(), last, eval: Some(report) })
}

/// Final evaluation on the held-out set derived from the run seed.
pub fn evaluate_params(cfg: &TrainConfig, params: &PolicyParams) -> Result<EvalReport> {
    let suite = cfg.suite()?;
    let questions = eval::eval_set(&suite, &cfg.task_mix, cfg.eval_questions, cfg.seed)?;
    Ok(eval::evaluate(
        params,
        &suite,
        &questions,
        cfg.eval_samples,
        &cfg.eval_k,
        cfg.max_len,
        cfg.temperature,
        cfg.seed,
        0,
    )?)
}

pub fn write_eval(dir: &Path, report: &EvalReport) -> Result<()> {
    io_at(dir, fs::create_dir_all(dir))?;
    let json = serde_json::to_string_pretty(report).expect("reports serialize");
    io_at(&dir.join(EVAL_FILE), fs::write(dir.join(EVAL_FILE), json + "\n"))?;
    io_at(&dir.join(PASSK_FILE), fs::write(dir.join(PASSK_FILE), report.to_csv()))
}

/// Re-evaluates the checkpoint in `run_dir` with its snapshot plus `overrides`.
pub fn eval_run<S: AsRef<str>>(run_dir: &Path, overrides: &[S], out: &Path) -> Result<EvalReport> {
    let mut cfg = config::load(&run_dir.join(CONFIG_FILE))?;
    config::apply_overrides(&mut cfg, overrides)?;
    cfg.validate()?;
    let ckpt = Checkpoint::load(&run_dir.join(CHECKPOINT_FILE))?;
    if *ckpt.policy.shape() != cfg.shape()? {
        return Err(CliError::Usage("overrides change the policy shape of the checkpoint".into()));
    }
    let report = evaluate_params(&cfg, &ckpt.policy)?;
    write_eval(out, &report)?;
    Ok(report)
}

/// Parses every line of a JSONL file.
pub fn read_metrics(path: &Path) -> Result<Vec<Value>> {
    let file = io_at(path, File::open(path))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = io_at(path, line)?;
        if line.trim().is_empty() {
            continue;
        }
        let v =
            serde_json::from_str(&line).map_err(|e| CliError::Usage(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(v);
    }
    Ok(out)
}
