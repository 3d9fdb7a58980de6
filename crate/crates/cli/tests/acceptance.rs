//! One test per acceptance criterion. Each prints a `criterion N: PASS|FAIL`
//! line with the measured values before asserting.
//!
//! Run with `cargo test -p aer-cli --test acceptance -- --nocapture --test-threads 1`
//! to see the report in order.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use aer_cli::config;
use aer_cli::runs::{self, ExperimentSpec, RunOptions, GROUPS_FILE, METRICS_FILE};
use aer_core::batch_entropy;
use aer_core::controller::AerState;
use aer_core::eval::{pass_at_k, EvalReport};
use aer_core::gradcheck::{self, CheckMode, FD_STEP};
use aer_core::objective::clipped_term;
use aer_core::plant::LinearEntropyPlant;
use aer_core::policy::{token_entropy, PolicyParams, PolicyShape, Response, TokenDistribution, Vocab};
use aer_core::rng::{stream, Purpose};
use aer_core::rollout::{group_accuracy, normalize_advantages, RolloutGroup};
use aer_core::tasks::{TaskKind, TaskSuite, TaskTier};
use aer_core::trainer::{MetricRecord, Mode, TrainConfig};

const SEEDS: [u64; 3] = [0, 1, 2];

fn report(n: usize, pass: bool, detail: &str) {
    println!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" });
}

fn desk() -> TrainConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.cfg");
    config::load(&path).unwrap()
}

// ---------------------------------------------------------------- criterion 1

struct Checks(Vec<String>, usize);

impl Checks {
    fn close(&mut self, name: &str, got: f64, want: f64) {
        self.1 += 1;
        if (got - want).abs() > 1e-9 || got.is_nan() {
            self.0.push(format!("{name}: got {got}, want {want}"));
        }
    }

    fn all_close(&mut self, name: &str, got: &[f64], want: &[f64]) {
        assert_eq!(got.len(), want.len(), "{name}");
        for (i, (g, w)) in got.iter().zip(want).enumerate() {
            self.close(&format!("{name}[{i}]"), *g, *w);
        }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).map(|i| (n - i) as f64 / (i + 1) as f64).product()
}

/// Fraction of size-k subsets of n samples (the first c correct) that contain a correct one.
fn subset_pass(n: usize, c: usize, k: usize) -> f64 {
    let mut hit = 0usize;
    let mut total = 0usize;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize == k {
            total += 1;
            hit += usize::from(mask & ((1u32 << c) - 1) != 0);
        }
    }
    hit as f64 / total as f64
}

#[test]
fn criterion_1_formula_fidelity() {
    let mut ck = Checks(Vec::new(), 0);
    let r3 = 3f64.sqrt();

    ck.close("g([1,0,1,0])", group_accuracy(&[1, 0, 1, 0]), 0.5);
    ck.all_close("adv([1,0])", &normalize_advantages(&[1, 0]).unwrap(), &[1.0, -1.0]);
    ck.all_close("adv([1,1,0,0])", &normalize_advantages(&[1, 1, 0, 0]).unwrap(), &[1.0, 1.0, -1.0, -1.0]);
    ck.all_close("adv([1,1,1,1])", &normalize_advantages(&[1, 1, 1, 1]).unwrap(), &[0.0; 4]);
    ck.all_close("adv([0,0,0,0])", &normalize_advantages(&[0, 0, 0, 0]).unwrap(), &[0.0; 4]);
    ck.all_close(
        "adv([1,0,0,0])",
        &normalize_advantages(&[1, 0, 0, 0]).unwrap(),
        &[r3, -1.0 / r3, -1.0 / r3, -1.0 / r3],
    );

    let t = clipped_term(1.5, 1.0, 0.2, 0.28);
    ck.close("clip(w=1.5,A=1)", t.value, 1.28);
    ck.close("clip(w=1.5,A=1).active", f64::from(u8::from(t.active)), 0.0);
    let t = clipped_term(1.5, -1.0, 0.2, 0.28);
    ck.close("clip(w=1.5,A=-1)", t.value, -1.5);
    ck.close("clip(w=1.5,A=-1).active", f64::from(u8::from(t.active)), 1.0);
    let t = clipped_term(1.0, 0.7, 0.2, 0.2);
    ck.close("clip(w=1,A=0.7)", t.value, 0.7);

    ck.close("H(uniform16)", token_entropy(&TokenDistribution::from_probs(&[1.0 / 16.0; 16])), 16f64.ln());
    let mut peaked = vec![1e-12 / 15.0; 16];
    peaked[0] = 1.0 - 1e-12;
    ck.close("H(peaked)", token_entropy(&TokenDistribution::from_probs(&peaked)), 0.0);
    ck.close("H([.5,.25,.25])", token_entropy(&TokenDistribution::from_probs(&[0.5, 0.25, 0.25])), 1.5 * 2f64.ln());
    ck.close(
        "KL([.5,.5]||[.75,.25])",
        TokenDistribution::from_probs(&[0.5, 0.5]).kl_to(&TokenDistribution::from_probs(&[0.75, 0.25])),
        0.5 * (2.0f64 / 3.0).ln() + 0.5 * 2f64.ln(),
    );

    let vocab = Vocab::new(16).unwrap();
    let suite = TaskSuite::new(vocab).unwrap();
    let shape = PolicyShape::new(vocab, suite.num_symbols(), 8, 4, 8).unwrap();
    let q = suite.make_question(TaskTier::new(TaskKind::ReverseCopy, 2).unwrap(), vec![3, 9]).unwrap();
    let zero = PolicyParams::zeros(shape);
    ck.close("seqH(uniform, 1 token)", zero.sequence_entropy(&q.encoding, &[vocab.eos()]).unwrap(), 16f64.ln());
    let random = PolicyParams::random(shape, &mut stream(11, Purpose::Init, &[]), 0.8, 1.0);
    let tokens = [4, 1, 7, vocab.eos()];
    let per_pos: Vec<f64> =
        (0..tokens.len()).map(|l| random.forward(&q.encoding, &tokens[..l]).unwrap().entropy()).collect();
    ck.close(
        "seqH(random) = mean of position entropies",
        random.sequence_entropy(&q.encoding, &tokens).unwrap(),
        per_pos.iter().sum::<f64>() / 4.0,
    );

    let resp = |ents: &[f64]| Response {
        tokens: vec![0; ents.len()],
        log_probs: vec![-1.0; ents.len()],
        entropies: ents.to_vec(),
    };
    let (a, b) = (0.3, 1.9);
    let group = RolloutGroup::from_scored(q.clone(), vec![resp(&[a]), resp(&[b, b, b])], vec![0, 0]).unwrap();
    ck.close("batch entropy (a+3b)/4", batch_entropy(&[group]).unwrap().entropy, (a + 3.0 * b) / 4.0);

    let mut s = AerState::new(0.4, 0.2, 0.005).unwrap();
    ck.close("H*(2.0, tau=.4)", s.init_target(2.0).unwrap(), 0.8);
    let mut s1 = AerState::new(1.0, 0.2, 0.005).unwrap();
    ck.close("H*(tau=1)", s1.init_target(1.7).unwrap(), 1.7);
    let mut s2 = AerState::new(0.5, 0.2, 0.005).unwrap();
    ck.close("H*(ln16, tau=.5)", s2.init_target(16f64.ln()).unwrap(), 4f64.ln());

    s.alpha = 1.0;
    ck.close("lambda(rho=.2,g=0,a=1)", s.allocate_lambda(0.0).unwrap(), 0.2 / (0.2 + 1e-8));
    ck.close("lambda(rho=.2,g=.5,a=1)", s.allocate_lambda(0.5).unwrap(), 0.0);
    ck.close("lambda(rho=.2,g=.1,a=1)", s.allocate_lambda(0.1).unwrap(), 0.1 / (0.2 + 1e-8));
    let mut z = AerState::new(0.4, 0.0, 0.005).unwrap();
    z.init_target(2.0).unwrap();
    z.alpha = 0.7;
    ck.close("lambda(rho=0,g=0,a=.7)", z.allocate_lambda(0.0).unwrap(), 0.7);
    ck.close("lambda(rho=0,g=.25,a=.7)", z.allocate_lambda(0.25).unwrap(), 0.0);

    s.alpha = 0.10;
    ck.close("alpha up", s.update_alpha(0.6).unwrap(), 0.105);
    s.alpha = 0.002;
    ck.close("alpha clamp", s.update_alpha(1.0).unwrap(), 0.0);
    s.alpha = 0.05;
    ck.close("alpha hold", s.update_alpha(0.8).unwrap(), 0.05);

    ck.close("pass@2(4,2)", pass_at_k(4, 2, 2).unwrap(), 5.0 / 6.0);
    for n in 1..=12 {
        for c in 0..=n {
            for k in 1..=n {
                let got = pass_at_k(n, c, k).unwrap();
                ck.close(&format!("pass@{k}({n},{c}) vs subsets"), got, subset_pass(n, c, k));
                ck.close(&format!("pass@{k}({n},{c}) vs binomials"), got, 1.0 - binomial(n - c, k) / binomial(n, k));
            }
        }
    }

    let pass = ck.0.is_empty();
    report(1, pass, &format!("{} hand and exhaustive checks, {} off by more than 1e-9", ck.1, ck.0.len()));
    assert!(pass, "{:#?}", ck.0);
}

// ---------------------------------------------------------------- criterion 2

#[test]
fn criterion_2_gradient_correctness() {
    assert_eq!(FD_STEP, 1e-5);
    let mut parts = Vec::new();
    let mut pass = true;
    for mode in CheckMode::ALL {
        let worst = gradcheck::max_objective_error(mode, 10, 20, 2024).unwrap();
        pass &= worst <= 1e-4;
        parts.push(format!("{}={worst:.1e}", mode.name()));
    }
    report(2, pass, &format!("max relative error over 10 instances x 20 coords: {}", parts.join(" ")));
    assert!(pass);
}

// ------------------------------------------------------- shared desk-scale runs

struct DeskRun {
    seed: u64,
    mode: Mode,
    dir: PathBuf,
    metrics: Vec<MetricRecord>,
    groups: Vec<serde_json::Value>,
    eval: EvalReport,
}

struct Desk {
    _tmp: tempfile::TempDir,
    runs: Vec<DeskRun>,
}

fn desk_runs() -> &'static Desk {
    static DESK: OnceLock<Desk> = OnceLock::new();
    DESK.get_or_init(|| {
        let tmp = tempfile::tempdir().unwrap();
        let specs: Vec<ExperimentSpec> = SEEDS
            .iter()
            .flat_map(|&seed| [Mode::Grpo, Mode::Aer].map(|mode| (seed, mode)))
            .map(|(seed, mode)| {
                let config = TrainConfig { seed, mode, ..desk() };
                let name = format!("{}-{seed}", mode.name());
                ExperimentSpec { dir: tmp.path().join(&name), name, config }
            })
            .collect();
        let summaries: Vec<_> = std::thread::scope(|sc| {
            let handles: Vec<_> =
                specs.iter().map(|s| sc.spawn(move || runs::train_run(s, &RunOptions::default()).unwrap())).collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        let runs = specs
            .iter()
            .zip(summaries)
            .map(|(s, summary)| {
                let metrics = runs::read_metrics(&s.dir.join(METRICS_FILE))
                    .unwrap()
                    .into_iter()
                    .map(|v| serde_json::from_value(v).unwrap())
                    .collect();
                DeskRun {
                    seed: s.config.seed,
                    mode: s.config.mode,
                    dir: s.dir.clone(),
                    metrics,
                    groups: runs::read_metrics(&s.dir.join(GROUPS_FILE)).unwrap(),
                    eval: summary.eval.unwrap(),
                }
            })
            .collect();
        Desk { _tmp: tmp, runs }
    })
}

fn run_for(mode: Mode, seed: u64) -> &'static DeskRun {
    desk_runs().runs.iter().find(|r| r.mode == mode && r.seed == seed).unwrap()
}

// ---------------------------------------------------------------- criterion 3

#[test]
fn criterion_3_controller_tracking() {
    let cfg = desk();
    assert_eq!((cfg.batch_size, cfg.group_size, cfg.vocab_size, cfg.iterations), (32, 8, 16, 300));
    assert_eq!((cfg.tau, cfg.rho, cfg.eta), (0.4, 0.2, 0.005));

    let mut collapse = Vec::new();
    let mut pass_a = true;
    for seed in SEEDS {
        let m = &run_for(Mode::Grpo, seed).metrics;
        let h0 = m[0].target_entropy / cfg.tau;
        let h300 = m[299].batch_entropy;
        pass_a &= h300 < 0.5 * h0;
        collapse.push(format!("{:.3}/{:.3}", h300, h0));
    }

    let mut fractions = Vec::new();
    for seed in SEEDS {
        let m = &run_for(Mode::Aer, seed).metrics;
        let window = &m[149..300];
        assert_eq!((window[0].step, window[window.len() - 1].step), (150, 300));
        let inside = window
            .iter()
            .filter(|r| r.batch_entropy >= 0.75 * r.target_entropy && r.batch_entropy <= 1.25 * r.target_entropy)
            .count();
        fractions.push(inside as f64 / window.len() as f64);
    }
    let mean_in = fractions.iter().sum::<f64>() / fractions.len() as f64;
    let pass_b = mean_in >= 0.8;
    report(
        3,
        pass_a && pass_b,
        &format!(
            "(a) grpo H300/H0 per seed {} (need < 0.5x); (b) aer in-band fraction {:?} mean {mean_in:.3} (need >= 0.8)",
            collapse.join(" "),
            fractions.iter().map(|f| format!("{f:.3}")).collect::<Vec<_>>()
        ),
    );
    assert!(pass_a && pass_b);
}

// ---------------------------------------------------------------- criterion 4

#[test]
fn criterion_4_difficulty_gating() {
    let rho = desk().rho;
    let mut gate_violations = 0;
    let mut order_violations = 0;
    let mut compared = 0;
    let mut iterations = 0;
    for seed in SEEDS {
        let run = run_for(Mode::Aer, seed);
        assert_eq!(run.groups.len(), run.metrics.len());
        for (rec, line) in run.metrics.iter().zip(&run.groups) {
            assert_eq!(line["step"], rec.step);
            iterations += 1;
            let (mut zero, mut low) = (Vec::new(), Vec::new());
            for g in line["groups"].as_array().unwrap() {
                let acc = g["accuracy"].as_f64().unwrap();
                let lambda = g["lambda"].as_f64().unwrap();
                if acc > rho {
                    gate_violations += usize::from(lambda != 0.0);
                } else if acc == 0.0 {
                    zero.push(lambda);
                } else {
                    low.push(lambda);
                }
            }
            // with alpha = 0 every coefficient is 0 and no ordering is possible
            if rec.alpha > 0.0 && !zero.is_empty() && !low.is_empty() {
                compared += 1;
                let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
                order_violations += usize::from(mean(&zero) <= mean(&low));
            }
        }
    }
    let pass = gate_violations == 0 && order_violations == 0 && compared > 0;
    report(
        4,
        pass,
        &format!(
            "{iterations} logged iterations: {gate_violations} easy groups with lambda != 0; \
             mean lambda(g=0) > mean lambda(0<g<=rho) violated in {order_violations} of {compared} comparable iterations"
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 5

#[test]
fn criterion_5_exploration_benefit() {
    let hard = TaskTier::new(TaskKind::ModularSum, 2).unwrap();
    let easy = TaskTier::new(TaskKind::ReverseCopy, 1).unwrap();
    let pass_k = |r: &DeskRun, tier, k| r.eval.tier(tier).unwrap().pass_at_k[&k];

    let mut per_seed = Vec::new();
    let mut all_ge = true;
    let (mut aer_hard, mut grpo_hard, mut easy_gap) = (0.0, 0.0, 0.0);
    for seed in SEEDS {
        let (a, g) = (run_for(Mode::Aer, seed), run_for(Mode::Grpo, seed));
        assert_eq!(a.metrics.len(), 300);
        let (ah, gh) = (pass_k(a, hard, 8), pass_k(g, hard, 8));
        let (ae, ge) = (pass_k(a, easy, 1), pass_k(g, easy, 1));
        all_ge &= ah >= gh;
        aer_hard += ah / 3.0;
        grpo_hard += gh / 3.0;
        easy_gap += (ae - ge) / 3.0;
        per_seed
            .push(format!("seed {seed}: hard pass@8 aer {ah:.4} grpo {gh:.4}, easy pass@1 aer {ae:.4} grpo {ge:.4}"));
    }
    let mean_gt = aer_hard > grpo_hard;
    let easy_ok = easy_gap.abs() <= 0.02;
    let pass = all_ge && mean_gt && easy_ok;
    report(
        5,
        pass,
        &format!(
            "[{}]; per-seed aer >= grpo: {all_ge}; mean hard pass@8 aer {aer_hard:.4} vs grpo {grpo_hard:.4}: {mean_gt}; \
             mean easy pass@1 gap {:+.2} pp (need |gap| <= 2): {easy_ok}",
            per_seed.join("; "),
            100.0 * easy_gap
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 6

#[test]
fn criterion_6_closed_loop_plant() {
    let eta = 0.005;
    let h0 = 16f64.ln();
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, kappa) in [0.5, 1.0, 2.0].into_iter().enumerate() {
        let ek = eta * kappa;
        let plant = LinearEntropyPlant { kappa, alpha_eq: eta, noise_bound: 0.1 * ek };
        let mut state = AerState::new(0.4, 0.2, eta).unwrap();
        let target = 0.4 * h0;
        let deadline = (2.0 * (h0 - target) / ek).ceil() as usize;
        let steps = 3 * deadline;
        let trace = plant.simulate(&mut state, h0, steps, &mut stream(6, Purpose::Init, &[i as u64])).unwrap();
        assert_eq!(state.target_entropy, Some(target));
        let inside = |h: &f64| (h - target).abs() <= 2.0 * ek;
        let first_in = trace.iter().position(inside);
        let last_out = trace.iter().rposition(|h| !inside(h));
        let settled_by = last_out.map_or(0, |t| t + 1);
        let ok = settled_by <= deadline;
        pass &= ok;
        let tail = trace[deadline..].iter().map(|h| (h - target).abs()).fold(0.0, f64::max);
        parts.push(format!(
            "kappa={kappa}: first in band at {first_in:?}, stays in band from {settled_by} (deadline {deadline}), \
             max |H-H*| after deadline {:.2} eta*kappa",
            tail / ek
        ));
    }
    report(6, pass, &format!("band |H-H*| <= 2 eta*kappa, simulated for 3x the deadline; {}", parts.join("; ")));
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 7

#[test]
fn criterion_7_determinism_and_resume() {
    let reference = run_for(Mode::Aer, 0);
    let tmp = tempfile::tempdir().unwrap();
    let config = TrainConfig { seed: 0, mode: Mode::Aer, ..desk() };

    let rerun = ExperimentSpec { name: "rerun".into(), config: config.clone(), dir: tmp.path().join("rerun") };
    runs::train_run(&rerun, &RunOptions::default()).unwrap();

    let resumed = ExperimentSpec { name: "resumed".into(), config, dir: tmp.path().join("resumed") };
    let mid = RunOptions { stop_after: Some(150), ..RunOptions::default() };
    runs::train_run(&resumed, &mid).unwrap();
    assert_eq!(fs::read_to_string(resumed.dir.join(METRICS_FILE)).unwrap().lines().count(), 150);
    runs::train_run(&resumed, &RunOptions { resume: true, ..RunOptions::default() }).unwrap();

    let bytes = |d: &Path, f: &str| fs::read(d.join(f)).unwrap();
    let original = bytes(&reference.dir, METRICS_FILE);
    let same_rerun = bytes(&rerun.dir, METRICS_FILE) == original;
    let same_resume = bytes(&resumed.dir, METRICS_FILE) == original;
    let same_rest = ["groups.jsonl", "checkpoint.bin", "eval.json"].iter().all(|f| {
        bytes(&rerun.dir, f) == bytes(&reference.dir, f) && bytes(&resumed.dir, f) == bytes(&reference.dir, f)
    });
    let pass = same_rerun && same_resume && same_rest;
    report(
        7,
        pass,
        &format!(
            "metrics.jsonl ({} bytes) identical on rerun: {same_rerun}, after resume at iteration 150: {same_resume}; \
             groups, checkpoint and eval identical: {same_rest}",
            original.len()
        ),
    );
    assert!(pass);
}
