use std::path::PathBuf;
use std::process::{Command, ExitCode, Stdio};

use aer_cli::error::{CliError, Result};
use aer_cli::plot::{self, PlotKind};
use aer_cli::runs::{self, ExperimentSpec, RunOptions, CONFIG_FILE};
use aer_cli::{config, sweep};
use aer_core::trainer::TrainConfig;
use clap::{Args, Parser, Subcommand};

/// Train, evaluate, sweep and plot GRPO runs with adaptive entropy regularization.
#[derive(Parser)]
#[command(name = "aer", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a key, e.g. `--set rho=0.2`. Repeatable, applied in order.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for `--set seed=N`, applied last.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => config::load(p)?,
            None => TrainConfig::default(),
        };
        config::apply_overrides(&mut cfg, &self.overrides)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one run into a run directory.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Run directory.
        #[arg(long)]
        out: PathBuf,
        /// Continue from the checkpoint in `--out`.
        #[arg(long)]
        resume: bool,
        #[arg(long, default_value_t = 50)]
        checkpoint_every: usize,
        /// Checkpoint and exit once this iteration is reached.
        #[arg(long)]
        stop_after: Option<usize>,
        #[arg(long, short)]
        quiet: bool,
    },
    /// Re-evaluate the checkpoint of a finished run.
    Eval {
        #[arg(long)]
        run: PathBuf,
        /// Override evaluation keys, e.g. `--set eval.samples=128`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output directory; defaults to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the Cartesian product of one or more grid axes.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// `KEY=V1,V2,...`; separate with `|` when values contain commas.
        #[arg(long = "grid", value_name = "KEY=VALUES")]
        grid: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        /// Runs trained concurrently as separate processes.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, short)]
        quiet: bool,
    },
    /// Draw SVG charts from run directories.
    Plot {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// entropy, reward, passk or length. Repeatable; all four when omitted.
        #[arg(long)]
        kind: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn print_report(report: &aer_core::EvalReport) {
    print!("{}", report.to_csv());
}

fn sweep_with_processes(specs: &[ExperimentSpec], jobs: usize, quiet: bool) -> Result<()> {
    let exe = std::env::current_exe().map_err(|e| CliError::Usage(format!("cannot locate own executable: {e}")))?;
    sweep::write_snapshots(specs)?;
    for chunk in specs.chunks(jobs) {
        let mut children = Vec::new();
        for s in chunk {
            let mut cmd = Command::new(&exe);
            cmd.arg("train")
                .arg("--config")
                .arg(s.dir.join(CONFIG_FILE))
                .arg("--out")
                .arg(&s.dir)
                .stdout(Stdio::null());
            if quiet {
                cmd.arg("--quiet");
            }
            let child = cmd.spawn().map_err(|e| CliError::Usage(format!("spawning run {}: {e}", s.name)))?;
            children.push((s, child));
        }
        for (s, mut child) in children {
            let status = child.wait().map_err(|e| CliError::Usage(format!("waiting for run {}: {e}", s.name)))?;
            if !status.success() {
                return Err(CliError::Usage(format!("run {} exited with {status}", s.name)));
            }
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Cmd::Train { cfg, out, resume, checkpoint_every, stop_after, quiet } => {
            let config = cfg.resolve()?;
            let name = out.file_name().map_or_else(|| "run".into(), |n| n.to_string_lossy().into_owned());
            let spec = ExperimentSpec { name, config, dir: out };
            let summary =
                runs::train_run(&spec, &RunOptions { checkpoint_every, resume, stop_after, verbose: !quiet })?;
            println!("{}", summary.last.to_json_line());
            if let Some(report) = &summary.eval {
                print_report(report);
            }
        }
        Cmd::Eval { run, overrides, out } => {
            let out = out.unwrap_or_else(|| run.clone());
            print_report(&runs::eval_run(&run, &overrides, &out)?);
        }
        Cmd::Sweep { cfg, grid, out, jobs, quiet } => {
            let base = cfg.resolve()?;
            let axes = grid.iter().map(|g| sweep::parse_axis(g)).collect::<Result<Vec<_>>>()?;
            let specs = sweep::plan(&base, &axes, &out)?;
            if jobs > 1 {
                sweep_with_processes(&specs, jobs, quiet)?;
            } else {
                let opts = RunOptions { verbose: !quiet, ..RunOptions::default() };
                for s in &specs {
                    runs::train_run(s, &opts)?;
                }
            }
            print!("{}", sweep::write_summary(&out, &specs, &axes)?);
        }
        Cmd::Plot { runs, kind, out } => {
            let kinds = if kind.is_empty() {
                PlotKind::ALL.to_vec()
            } else {
                kind.iter().map(|k| k.parse()).collect::<Result<Vec<_>>>()?
            };
            for k in kinds {
                let path = plot::write_plot(k, &runs, &out)?;
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
