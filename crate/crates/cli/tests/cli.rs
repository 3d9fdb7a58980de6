use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use aer_cli::plot::{self, PlotKind};
use aer_cli::runs::{self, ExperimentSpec, RunOptions};
use aer_cli::{config, CliError};

const SMALL: &str = "\
mode = aer
train.iterations = 8
train.batch_size = 8
train.group_size = 4
train.minibatch_size = 16
train.learning_rate = 0.3
eval.interval = 4
eval.questions = 4
eval.samples = 8
eval.k = 1,2,4,8
";

fn aer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aer")).args(args).output().unwrap()
}

fn small_cfg(dir: &Path) -> PathBuf {
    let p = dir.join("small.cfg");
    fs::write(&p, SMALL).unwrap();
    p
}

fn spec(dir: &Path, name: &str, overrides: &[&str]) -> ExperimentSpec {
    let mut cfg = config::parse(SMALL).unwrap();
    config::apply_overrides(&mut cfg, overrides).unwrap();
    ExperimentSpec { name: name.into(), config: cfg, dir: dir.join(name) }
}

fn read(p: impl AsRef<Path>) -> String {
    fs::read_to_string(p).unwrap()
}

#[test]
fn missing_config_file_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nowhere/absent.cfg");
    let out = aer(&["train", "--config", missing.to_str().unwrap(), "--out", tmp.path().join("r").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere/absent.cfg"));
}

#[test]
fn invalid_key_exits_naming_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_cfg(tmp.path());
    let r = tmp.path().join("r");
    let out = aer(&["train", "--config", cfg.to_str().unwrap(), "--set", "aer.rhoo=0.1", "--out", r.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("aer.rhoo"));
    fs::write(&cfg, format!("{SMALL}train.warmup = 3\n")).unwrap();
    let out = aer(&["train", "--config", cfg.to_str().unwrap(), "--out", r.to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.warmup"));
    assert!(!r.join("metrics.jsonl").exists());
}

#[test]
fn overrides_win_and_snapshot_records_effective_values() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_cfg(tmp.path());
    let r = tmp.path().join("run");
    let out = aer(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--set",
        "mode=grpo",
        "--set",
        "mode=aer",
        "--set",
        "rho=0.2",
        "--seed",
        "5",
        "--out",
        r.to_str().unwrap(),
        "-q",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let snap = read(r.join("config.snapshot"));
    assert!(snap.contains("mode = aer\n"));
    assert!(snap.contains("aer.rho = 0.2\n"));
    assert!(snap.contains("seed = 5\n"));
    assert!(snap.contains("train.iterations = 8\n"));
    assert_eq!(config::parse(&snap).unwrap().rho, 0.2);
    for f in ["metrics.jsonl", "groups.jsonl", "checkpoint.bin", "eval.json", "passk.csv"] {
        assert!(r.join(f).exists(), "{f}");
    }
    let again = aer(&["train", "--config", cfg.to_str().unwrap(), "--out", r.to_str().unwrap()]);
    assert!(!again.status.success(), "existing run directory must not be overwritten");
}

#[test]
fn rerun_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let a = spec(tmp.path(), "a", &[]);
    let b = spec(tmp.path(), "b", &[]);
    runs::train_run(&a, &RunOptions::default()).unwrap();
    runs::train_run(&b, &RunOptions::default()).unwrap();
    for f in ["metrics.jsonl", "groups.jsonl", "checkpoint.bin", "eval.json", "passk.csv", "config.snapshot"] {
        assert_eq!(fs::read(a.dir.join(f)).unwrap(), fs::read(b.dir.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn every_metrics_line_parses_alone() {
    let tmp = tempfile::tempdir().unwrap();
    let s = spec(tmp.path(), "m", &[]);
    runs::train_run(&s, &RunOptions::default()).unwrap();
    let text = read(s.dir.join("metrics.jsonl"));
    assert_eq!(text.lines().count(), 8);
    for (i, line) in text.lines().enumerate() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["step"], i + 1);
    }
    let groups = read(s.dir.join("groups.jsonl"));
    for line in groups.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["groups"].as_array().unwrap().len(), 8);
    }
}

#[test]
fn resume_after_crash_discards_unsaved_lines() {
    let tmp = tempfile::tempdir().unwrap();
    let full = spec(tmp.path(), "full", &[]);
    runs::train_run(&full, &RunOptions::default()).unwrap();

    let part = spec(tmp.path(), "part", &[]);
    let stop = RunOptions { stop_after: Some(4), ..RunOptions::default() };
    assert!(runs::train_run(&part, &stop).unwrap().eval.is_none());
    assert!(!part.dir.join("eval.json").exists());
    // a crashed process may have written records past its last checkpoint
    let extra: String =
        read(full.dir.join("metrics.jsonl")).lines().skip(4).take(2).map(|l| format!("{l}\n")).collect();
    let mut m = read(part.dir.join("metrics.jsonl"));
    m.push_str(&extra);
    fs::write(part.dir.join("metrics.jsonl"), m).unwrap();

    runs::train_run(&part, &RunOptions { resume: true, ..RunOptions::default() }).unwrap();
    for f in ["metrics.jsonl", "groups.jsonl", "checkpoint.bin", "eval.json"] {
        assert_eq!(fs::read(full.dir.join(f)).unwrap(), fs::read(part.dir.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn resume_refuses_a_changed_config() {
    let tmp = tempfile::tempdir().unwrap();
    let s = spec(tmp.path(), "r", &[]);
    runs::train_run(&s, &RunOptions { stop_after: Some(2), ..RunOptions::default() }).unwrap();
    let mut changed = s.clone();
    changed.config.rho = 0.3;
    let err = runs::train_run(&changed, &RunOptions { resume: true, ..RunOptions::default() }).unwrap_err();
    assert!(err.to_string().contains("different configuration"));
}

#[test]
fn non_finite_training_exits_nonzero_with_diagnostics() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_cfg(tmp.path());
    let r = tmp.path().join("boom");
    let out = aer(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--set",
        "mode=fixed-entropy",
        "--set",
        "gamma=1",
        "--set",
        "learning_rate=1e300",
        "--out",
        r.to_str().unwrap(),
        "-q",
    ]);
    assert!(!out.status.success());
    let diag: serde_json::Value = serde_json::from_str(&read(r.join("abort.json"))).unwrap();
    assert!(diag["iteration"].as_u64().is_some());
}

#[test]
fn two_by_two_sweep_yields_four_runs_and_a_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_cfg(tmp.path());
    let out_dir = tmp.path().join("sweep");
    let out = aer(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--grid",
        "rho=0,0.2",
        "--grid",
        "mode=grpo,aer",
        "--out",
        out_dir.to_str().unwrap(),
        "--jobs",
        "2",
        "-q",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut dirs: Vec<String> = fs::read_dir(&out_dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    dirs.sort();
    assert_eq!(dirs, ["rho=0.2_mode=aer", "rho=0.2_mode=grpo", "rho=0_mode=aer", "rho=0_mode=grpo"]);
    let summary = read(out_dir.join("summary.csv"));
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].starts_with("run,aer.rho,mode,steps,"));
    assert!(lines[1].starts_with("rho=0_mode=grpo,0,grpo,8,"));
    assert_eq!(String::from_utf8_lossy(&out.stdout), summary);
}

#[test]
fn sequential_sweep_matches_process_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_cfg(tmp.path());
    let mut summaries = Vec::new();
    for jobs in ["1", "3"] {
        let d = tmp.path().join(format!("s{jobs}"));
        let out = aer(&[
            "sweep",
            "--config",
            cfg.to_str().unwrap(),
            "--grid",
            "seed=1,2,3",
            "--out",
            d.to_str().unwrap(),
            "--jobs",
            jobs,
            "-q",
        ]);
        assert!(out.status.success());
        summaries.push(read(d.join("summary.csv")));
    }
    assert_eq!(summaries[0], summaries[1]);
}

#[test]
fn empty_grid_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_cfg(tmp.path());
    let out = aer(&["sweep", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("s").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("grid is empty"));
}

#[test]
fn eval_command_reuses_the_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let s = spec(tmp.path(), "e", &[]);
    let trained = runs::train_run(&s, &RunOptions::default()).unwrap().eval.unwrap();
    let again = runs::eval_run(&s.dir, &[] as &[&str], &tmp.path().join("e2")).unwrap();
    assert_eq!(trained, again);
    let wider = runs::eval_run(&s.dir, &["eval.samples=16", "eval.k=1,16"], &tmp.path().join("e3")).unwrap();
    assert_eq!(wider.k_list, [1, 16]);
    assert!(runs::eval_run(&s.dir, &["policy.hidden=4"], &tmp.path().join("e4")).is_err());
}

fn polylines(svg: &str) -> Vec<&str> {
    svg.lines().filter(|l| l.contains(r#"class="series""#)).collect()
}

fn attr<'a>(line: &'a str, name: &str) -> &'a str {
    let start = line.find(&format!(" {name}=\"")).unwrap() + name.len() + 3;
    &line[start..start + line[start..].find('"').unwrap()]
}

#[test]
fn plots_draw_targets_ticks_and_distinct_series() {
    let tmp = tempfile::tempdir().unwrap();
    let a = spec(tmp.path(), "aer-run", &[]);
    let g = spec(tmp.path(), "grpo-run", &["mode=grpo"]);
    runs::train_run(&a, &RunOptions::default()).unwrap();
    runs::train_run(&g, &RunOptions::default()).unwrap();
    let both = [a.dir.clone(), g.dir.clone()];

    let entropy = plot::plot(PlotKind::Entropy, std::slice::from_ref(&a.dir)).unwrap();
    assert_eq!(entropy.matches(r#"class="target""#).count(), 1);
    assert!(entropy.contains(r#"class="band""#));
    assert!(entropy.contains("H* "));

    let passk = plot::plot(PlotKind::Passk, &both).unwrap();
    let ticks: Vec<&str> = passk
        .lines()
        .filter(|l| l.contains(r#"class="xtick""#))
        .map(|l| &l[l.find('>').unwrap() + 1..l.rfind('<').unwrap()])
        .collect();
    assert_eq!(ticks, ["1", "2", "4", "8"]);
    let xs: Vec<f64> =
        passk.lines().filter(|l| l.contains(r#"class="xtick""#)).map(|l| attr(l, "x").parse().unwrap()).collect();
    let gaps: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    assert!(gaps.iter().all(|d| (d - gaps[0]).abs() < 0.02), "log2 spacing {gaps:?}");

    for kind in PlotKind::ALL {
        let svg = plot::plot(kind, &both).unwrap();
        let series = polylines(&svg);
        assert_eq!(series.len(), 2, "{}", kind.name());
        assert_ne!(
            (attr(series[0], "stroke"), attr(series[0], "stroke-dasharray")),
            (attr(series[1], "stroke"), attr(series[1], "stroke-dasharray"))
        );
        let legend = &svg[svg.find(r#"<g class="legend">"#).unwrap()..];
        assert!(legend.contains(">aer-run<") && legend.contains(">grpo-run<"));
    }
}

#[test]
fn plotting_a_missing_metric_names_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let s = spec(tmp.path(), "p", &[]);
    runs::train_run(&s, &RunOptions::default()).unwrap();
    let m = read(s.dir.join("metrics.jsonl")).replace("\"mean_resp_len\"", "\"resp_len\"");
    fs::write(s.dir.join("metrics.jsonl"), m).unwrap();
    let err = plot::plot(PlotKind::Length, std::slice::from_ref(&s.dir)).unwrap_err();
    assert!(matches!(&err, CliError::MissingMetric { key, .. } if key == "mean_resp_len"));
    assert!(err.to_string().contains("mean_resp_len"));

    let out_dir = tmp.path().join("svg");
    let out = aer(&[
        "plot",
        s.dir.to_str().unwrap(),
        "--kind",
        "entropy",
        "--kind",
        "reward",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(out_dir.join("entropy.svg").exists() && out_dir.join("reward.svg").exists());
    let out = aer(&["plot", s.dir.to_str().unwrap(), "--kind", "length", "--out", out_dir.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("mean_resp_len"));
}
