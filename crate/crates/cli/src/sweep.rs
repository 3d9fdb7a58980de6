//! Cartesian-product sweeps over config keys.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use aer_core::eval::EvalReport;
use aer_core::trainer::{MetricRecord, TrainConfig};
use aer_core::AerError;

use crate::config;
use crate::error::{io_at, CliError, Result};
use crate::runs::{self, ExperimentSpec, CONFIG_FILE, EVAL_FILE, METRICS_FILE};

pub const SUMMARY_FILE: &str = "summary.csv";

/// One swept key and its values.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub key: &'static str,
    pub values: Vec<String>,
}

/// Parses `key=v1,v2,...`. Values that themselves contain commas (task mixes,
/// k lists) are separated with `|` instead.
pub fn parse_axis(spec: &str) -> Result<Axis> {
    let (k, vals) =
        spec.split_once('=').ok_or_else(|| CliError::Usage(format!("grid entry `{spec}` must be KEY=V1,V2,...")))?;
    let key = config::resolve_key(k)?;
    let sep = if vals.contains('|') { '|' } else { ',' };
    let values: Vec<String> = vals.split(sep).map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        return Err(CliError::Config { key: key.into(), message: "grid axis has no values".into() });
    }
    Ok(Axis { key, values })
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect()
}

/// Expands the grid into named runs under `out`. The last axis varies fastest.
pub fn plan(base: &TrainConfig, grid: &[Axis], out: &Path) -> Result<Vec<ExperimentSpec>> {
    if grid.is_empty() {
        return Err(AerError::Contract("sweep grid is empty".into()).into());
    }
    let keys: BTreeSet<_> = grid.iter().map(|a| a.key).collect();
    if keys.len() != grid.len() {
        return Err(CliError::Usage("a key appears on more than one grid axis".into()));
    }
    let mut combos: Vec<Vec<(&'static str, &str)>> = vec![Vec::new()];
    for axis in grid {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                axis.values.iter().map(move |v| {
                    let mut c = c.clone();
                    c.push((axis.key, v.as_str()));
                    c
                })
            })
            .collect();
    }
    let mut names = BTreeSet::new();
    let mut specs = Vec::with_capacity(combos.len());
    for combo in combos {
        let mut cfg = base.clone();
        let mut parts = Vec::new();
        for (key, value) in &combo {
            config::set(&mut cfg, key, value)?;
            let leaf = key.rsplit('.').next().unwrap_or(key);
            parts.push(format!("{leaf}={}", sanitize(value)));
        }
        cfg.validate()?;
        let name = parts.join("_");
        if !names.insert(name.clone()) {
            return Err(CliError::Usage(format!("grid produces duplicate run name `{name}`")));
        }
        specs.push(ExperimentSpec { dir: out.join(&name), name, config: cfg });
    }
    Ok(specs)
}

/// Writes every planned config snapshot so external processes can pick them up.
pub fn write_snapshots(specs: &[ExperimentSpec]) -> Result<()> {
    for s in specs {
        io_at(&s.dir, fs::create_dir_all(&s.dir))?;
        let path = s.dir.join(CONFIG_FILE);
        io_at(&path, fs::write(&path, config::to_string(&s.config)))?;
    }
    Ok(())
}

/// `run,<grid keys>,final metrics,pass@k` with one row per run, read from disk.
pub fn summarize(specs: &[ExperimentSpec], grid: &[Axis]) -> Result<String> {
    let k_max = specs.iter().flat_map(|s| s.config.eval_k.iter().copied()).max().unwrap_or(1);
    let mut out = String::from("run");
    for a in grid {
        write!(out, ",{}", a.key).unwrap();
    }
    writeln!(out, ",steps,mean_reward,batch_entropy,target_entropy,alpha,mean_resp_len,pass1,pass_at_{k_max}").unwrap();
    for s in specs {
        let metrics_path = s.dir.join(METRICS_FILE);
        let metrics = runs::read_metrics(&metrics_path)?;
        let last: MetricRecord = metrics
            .last()
            .and_then(|v| serde_json::from_value(v.clone()).ok())
            .ok_or_else(|| CliError::Usage(format!("{} has no records", metrics_path.display())))?;
        let eval_path = s.dir.join(EVAL_FILE);
        let report: EvalReport = serde_json::from_str(&io_at(&eval_path, fs::read_to_string(&eval_path))?)
            .map_err(|e| CliError::Usage(format!("{}: {e}", eval_path.display())))?;
        write!(out, "{}", s.name).unwrap();
        for a in grid {
            write!(out, ",{}", config::get(&s.config, a.key)?.replace(',', "|")).unwrap();
        }
        let pk = report.aggregate.get(&k_max).map_or(String::new(), |v| v.to_string());
        writeln!(
            out,
            ",{},{},{},{},{},{},{},{pk}",
            last.step,
            last.mean_reward,
            last.batch_entropy,
            last.target_entropy,
            last.alpha,
            last.mean_resp_len,
            report.pass1()
        )
        .unwrap();
    }
    Ok(out)
}

pub fn write_summary(out: &Path, specs: &[ExperimentSpec], grid: &[Axis]) -> Result<String> {
    let text = summarize(specs, grid)?;
    let path = out.join(SUMMARY_FILE);
    io_at(&path, fs::write(&path, &text))?;
    Ok(text)
}
