use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sgf_core::baselines::{self, LatentOptConfig};
use sgf_core::evaluation::{self, EvalConfig};
use sgf_core::metrics::{self, MdcCurve};
use sgf_core::numerics::{self, RngState};
use sgf_core::trainer::{self, CheckpointMeta, TrainConfig};
use sgf_core::{navigate, ArchConfig, AuxMap, Error, NavTrace, Oracle, PairDataset};

use crate::args::*;
use crate::manifest::{hex, sibling, write_partial, Run};

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(&a),
        Command::Train(a) => train(&a),
        Command::Navigate(a) => navigate_cmd(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::Mds(a) => mds(&a),
        Command::Baseline(a) => baseline(&a),
        Command::CompareLinear(a) => compare_linear(&a),
    }
}

fn build_oracle(args: &OracleArgs, seed: u64) -> Result<Oracle> {
    let spec = args.resolve(seed)?;
    log::debug!("oracle {spec}");
    Oracle::build(spec.clone()).with_context(|| format!("building oracle {spec}"))
}

fn json_bytes(value: &impl Serialize) -> Result<Vec<u8>> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text.into_bytes())
}

fn gen_data(a: &GenDataArgs) -> Result<()> {
    if a.count == 0 {
        bail!("--count must be at least 1");
    }
    let mut run = Run::start("gen-data", a, a.seed)?;
    let oracle = build_oracle(&a.oracle, a.seed)?;
    run.note("oracle_resolved", oracle.spec().to_string())?;
    let ds = trainer::build_dataset(&oracle, a.count, &mut RngState::new(a.seed))?;
    run.output(&a.out, &ds.to_bytes())?;
    println!(
        "wrote {} pairs (d={}, n_c={}) to {}",
        ds.len(),
        ds.d,
        ds.n_c,
        a.out.display()
    );
    run.finish(&a.out, oracle.call_count())
}

fn train(a: &TrainArgs) -> Result<()> {
    let mut run = Run::start("train", a, a.seed)?;
    let ds = PairDataset::load(&a.data).with_context(|| format!("loading {}", a.data.display()))?;
    run.input(&a.data);
    let arch = ArchConfig::new(ds.d, ds.n_c, a.blocks, a.hidden);
    let cfg = TrainConfig {
        iterations: a.iterations,
        batch_size: a.batch_size,
        lr: a.lr,
        seed: a.seed,
        sn_power_steps_per_update: a.sn_steps,
        diag_interval: a.diag_interval,
        ..TrainConfig::default()
    };
    let report_path = a.report.clone().unwrap_or_else(|| sibling(&a.out, ".report.json"));
    let (f, report) = match trainer::train(&ds, arch.clone(), &cfg) {
        Ok(r) => r,
        Err(Error::TrainingDiverged { iteration, last_finite }) => {
            let partial = serde_json::json!({
                "error": "training diverged",
                "iteration": iteration,
                "last_finite_iteration": last_finite,
                "config": cfg,
            });
            write_partial(&report_path, &json_bytes(&partial)?);
            bail!("training diverged at iteration {iteration} (last finite loss at {last_finite})");
        }
        Err(e) => return Err(e.into()),
    };
    let mut meta = CheckpointMeta::new(arch, a.seed);
    meta.oracle = Some(format!("sha256:{}", hex(&ds.oracle_digest)));
    meta.train = Some(cfg);
    meta.held_out_loss = Some(report.held_out_loss);
    run.output(&a.out, &trainer::checkpoint_bytes(&f, &meta)?)?;
    run.output(&report_path, &json_bytes(&report)?)?;
    if let Some(last) = report.records.last() {
        println!(
            "iteration {}: probe |dF/dc| {:.4}, probe |dF/dz| {:.4}",
            last.iteration, last.probe_jvp_c, last.probe_spectral_radius
        );
    }
    println!(
        "held-out loss {:.6e} (initial {:.6e}), relative error {:.4}",
        report.held_out_loss, report.initial_held_out_loss, report.held_out_relative_error
    );
    if report.degenerate {
        eprintln!("warning: the trained map barely depends on its condition input");
    }
    run.finish(&a.out, 0)
}

fn load_map(path: &Path, oracle: &Oracle) -> Result<AuxMap> {
    let (f, meta) =
        trainer::load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    if f.arch.d != oracle.d() || f.arch.n_c != oracle.n_c() {
        bail!(
            "checkpoint maps d={}, n_c={} but the oracle has d={}, n_c={}",
            f.arch.d,
            f.arch.n_c,
            oracle.d(),
            oracle.n_c()
        );
    }
    let expected = format!("sha256:{}", hex(&oracle.spec().digest()));
    if meta.oracle.as_deref().is_some_and(|o| o != expected) {
        log::warn!("checkpoint was trained on a different oracle than {}", oracle.spec());
    }
    Ok(f)
}

/// Starting latent and target condition; one oracle call when the target is
/// given per attribute.
fn resolve_target(t: &TargetArgs, oracle: &Oracle, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let z0 = match &t.z0 {
        Some(v) => v.0.clone(),
        None => numerics::sample_gaussian(&mut RngState::new(seed), oracle.d())?,
    };
    if z0.len() != oracle.d() {
        bail!("--z0 has {} entries, the oracle expects {}", z0.len(), oracle.d());
    }
    let c1 = match (&t.c1, t.attr, t.target) {
        (Some(c), _, _) => c.0.clone(),
        (None, Some(k), Some(v)) => {
            let mut c = oracle.eval(&z0)?;
            if k >= c.len() {
                bail!("--attr {k} is out of range for {} conditions", c.len());
            }
            c[k] = v;
            c
        }
        _ => bail!("give either --c1 or --attr with --target"),
    };
    if c1.len() != oracle.n_c() {
        bail!("target has {} entries, the oracle has {} conditions", c1.len(), oracle.n_c());
    }
    Ok((z0, c1))
}

fn run_navigation(
    f: &AuxMap,
    oracle: &Oracle,
    z0: &[f64],
    c1: &[f64],
    nav: &NavFlags,
    max_steps: usize,
    partial_at: Option<&Path>,
) -> Result<NavTrace> {
    let cfg = nav.config(max_steps);
    match navigate(f, oracle, z0, c1, &cfg) {
        Ok(trace) => Ok(trace),
        Err(Error::NavigationDiverged { trace }) => {
            if let Some(path) = partial_at {
                write_partial(path, &json_bytes(&trace)?);
            }
            bail!("navigation diverged after {} steps", trace.executed_steps());
        }
        Err(e) => Err(e.into()),
    }
}

fn print_trace(trace: &NavTrace) {
    println!(
        "converged {}  steps {}  oracle calls {}  final distance {:.6}",
        trace.converged,
        trace.executed_steps(),
        trace.oracle_calls,
        trace.final_dist()
    );
}

fn navigate_cmd(a: &NavigateArgs) -> Result<()> {
    let mut run = Run::start("navigate", a, a.seed)?;
    let oracle = build_oracle(&a.oracle, a.seed)?;
    run.note("oracle_resolved", oracle.spec().to_string())?;
    let f = load_map(&a.checkpoint, &oracle)?;
    run.input(&a.checkpoint);
    let (z0, c1) = resolve_target(&a.target, &oracle, a.seed)?;
    let before = oracle.call_count();
    let trace = run_navigation(&f, &oracle, &z0, &c1, &a.nav, a.max_steps, Some(&a.out))?;
    debug_assert_eq!(oracle.call_count() - before, trace.oracle_calls);
    run.output(&a.out, &json_bytes(&trace)?)?;
    print_trace(&trace);
    run.finish(&a.out, oracle.call_count())
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let mut run = Run::start("evaluate", a, a.seed)?;
    let oracle = build_oracle(&a.oracle, a.seed)?;
    run.note("oracle_resolved", oracle.spec().to_string())?;
    let f = load_map(&a.checkpoint, &oracle)?;
    run.input(&a.checkpoint);
    let cfg = EvalConfig {
        samples: a.samples,
        attr: a.attr,
        target: a.target,
        strengths: a.strengths.clone(),
        nav: a.nav.config(1),
        seed: a.seed,
        jobs: a.jobs,
    };
    let summary = evaluation::evaluate(&f, &oracle, &cfg)?;
    run.output(&a.out, summary.curve.to_csv().as_bytes())?;
    let summary_path = a.summary.clone().unwrap_or_else(|| sibling(&a.out, ".summary.json"));
    run.output(&summary_path, &json_bytes(&summary)?)?;
    println!("strength  accuracy  disentanglement  harmonic  accumulated  errors");
    for (i, p) in summary.curve.points.iter().enumerate() {
        println!(
            "{:>8}  {:>8.3}  {:>15.3}  {:>8.3}  {:>11.3}  {:>6}",
            p.strength,
            p.accuracy,
            p.disentanglement,
            p.harmonic_mean(),
            summary.accumulated_mds[i],
            summary.errors[i]
        );
    }
    let best = &summary.curve.points[summary.best_index];
    println!("MDS {:.3}", summary.mds);
    println!(
        "best strength {} (harmonic mean {:.3})",
        best.strength, summary.best_harmonic_mean
    );
    run.finish(&a.out, oracle.call_count())
}

#[derive(Serialize)]
struct MdsReport {
    accumulated: Vec<f64>,
    harmonic_means: Vec<f64>,
    mds: f64,
    best_index: usize,
    best_strength: f64,
}

fn mds(a: &MdsArgs) -> Result<()> {
    let text = fs::read_to_string(&a.csv).with_context(|| format!("reading {}", a.csv.display()))?;
    let curve = MdcCurve::from_csv(&text).with_context(|| format!("parsing {}", a.csv.display()))?;
    let scored = metrics::mds(&curve)?;
    let best = metrics::select_best_strength(&curve)?;
    let report = MdsReport {
        harmonic_means: curve.points.iter().map(|p| p.harmonic_mean()).collect(),
        accumulated: scored.accumulated,
        mds: scored.mds,
        best_index: best,
        best_strength: curve.points[best].strength,
    };
    println!("strength  accumulated  harmonic");
    for (i, p) in curve.points.iter().enumerate() {
        println!(
            "{:>8}  {:>11.3}  {:>8.3}",
            p.strength, report.accumulated[i], report.harmonic_means[i]
        );
    }
    println!("MDS {:.3}", report.mds);
    println!(
        "best strength {} (harmonic mean {:.3})",
        report.best_strength, report.harmonic_means[best]
    );
    if let Some(out) = &a.out {
        let mut run = Run::start("mds", a, 0)?;
        run.input(&a.csv);
        run.output(out, &json_bytes(&report)?)?;
        run.finish(out, 0)?;
    }
    Ok(())
}

fn baseline(a: &BaselineArgs) -> Result<()> {
    let mut run = Run::start("baseline", a, a.seed)?;
    let oracle = build_oracle(&a.oracle, a.seed)?;
    run.note("oracle_resolved", oracle.spec().to_string())?;
    let (z0, c1) = resolve_target(&a.target, &oracle, a.seed)?;
    let cfg = LatentOptConfig {
        lr: a.lr,
        iterations: a.iterations,
        tol: a.tol,
        record_every: a.record_every,
    };
    let trace = baselines::latent_opt(&oracle, &z0, &c1, &cfg)?;
    run.output(&a.out, &json_bytes(&trace)?)?;
    let iterations = trace.records.last().map_or(0, |r| r.iteration);
    println!(
        "converged {}  iterations {}  final loss {:.6e}",
        trace.converged, iterations, trace.final_loss
    );
    run.finish(&a.out, oracle.call_count())
}

#[derive(Serialize)]
struct LinearComparison {
    deviation: f64,
    start: Vec<f64>,
    end: Vec<f64>,
    /// Straight-line endpoint, `linear_path(start, end, 1)`.
    linear_end: Vec<f64>,
    steps: usize,
}

fn compare_linear(a: &CompareLinearArgs) -> Result<()> {
    let mut run = Run::start("compare-linear", a, a.seed)?;
    let mut calls = 0;
    let trace: NavTrace = match (&a.trace, &a.checkpoint) {
        (Some(path), _) => {
            run.input(path);
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        (None, Some(ck)) => {
            let oracle = build_oracle(&a.oracle, a.seed)?;
            run.note("oracle_resolved", oracle.spec().to_string())?;
            let f = load_map(ck, &oracle)?;
            run.input(ck);
            let (z0, c1) = resolve_target(&a.target, &oracle, a.seed)?;
            let trace = run_navigation(&f, &oracle, &z0, &c1, &a.nav, a.max_steps, None)?;
            print_trace(&trace);
            calls = oracle.call_count();
            trace
        }
        (None, None) => bail!("give --trace or --checkpoint"),
    };
    let deviation = baselines::path_deviation(&trace)?;
    let start = trace.steps[0].z.clone();
    let end = trace.final_z().to_vec();
    let report = LinearComparison {
        deviation,
        linear_end: baselines::linear_path(&start, &end, 1.0)?,
        start,
        end,
        steps: trace.executed_steps(),
    };
    println!("path deviation {:.6}", report.deviation);
    println!("start {}", serde_json::to_string(&report.start)?);
    println!("end   {}", serde_json::to_string(&report.end)?);
    if let Some(out) = &a.out {
        run.output(out, &json_bytes(&report)?)?;
        run.finish(out, calls)?;
    }
    Ok(())
}
