//! Acceptance checks for the library and the `sgf` binary.
//!
//! Prints one PASS/FAIL line per criterion. The process fails when any
//! criterion's outcome differs from the expected one; the Neumann part of the
//! linear-world check is expected to fail (see `criterion_2`).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use anyhow::{ensure, Context, Result};
use serde_json::Value;
use sha2::{Digest, Sha256};
use sgf_core::baselines::{latent_opt, LatentOptConfig};
use sgf_core::metrics::{mds, select_best_strength, MdcCurve};
use sgf_core::navigator::surrogate_field;
use sgf_core::numerics::{self, finite_diff_jvp, sample_gaussian, DEFAULT_FD_STEP};
use sgf_core::trainer::{build_dataset, checkpoint_bytes, load_checkpoint, train};
use sgf_core::{
    navigate, AffineMap, ArchConfig, AuxMap, InverseMode, Matrix, NavConfig, Oracle, OracleKind,
    OracleSpec, PairDataset, RngState, TrainConfig,
};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

struct Criterion {
    id: u8,
    name: &'static str,
    limit: Duration,
    /// Expected to fail; a pass is reported as a surprise.
    known_failure: bool,
}

fn main() -> ExitCode {
    let criteria = [
        (Criterion { id: 1, name: "MDS table reproduction", limit: secs(1), known_failure: false }, criterion_1 as fn(&mut Rig) -> Result<Outcome>),
        (Criterion { id: 2, name: "linear-world exactness", limit: secs(1), known_failure: true }, criterion_2),
        (Criterion { id: 3, name: "Neumann/exact equivalence", limit: secs(10), known_failure: false }, criterion_3),
        (Criterion { id: 4, name: "derivative correctness", limit: secs(30), known_failure: false }, criterion_4),
        (Criterion { id: 5, name: "end-to-end navigation", limit: secs(600), known_failure: false }, criterion_5),
        (Criterion { id: 6, name: "step-size ablation trend", limit: secs(900), known_failure: false }, criterion_6),
        (Criterion { id: 7, name: "fast-variant contract", limit: secs(1), known_failure: false }, criterion_7),
        (Criterion { id: 8, name: "baseline sanity", limit: secs(120), known_failure: false }, criterion_8),
        (Criterion { id: 9, name: "determinism and formats", limit: secs(60), known_failure: false }, criterion_9),
    ];
    let mut rig = Rig::default();
    let mut unexpected = 0;
    for (c, run) in criteria {
        let start = Instant::now();
        let result = run(&mut rig);
        // time spent training the shared rig is charged to the criterion
        // that first needed it
        let elapsed = start.elapsed();
        let outcome = result.unwrap_or_else(|e| Outcome::new(false, format!("error: {e:#}")));
        let in_time = elapsed <= c.limit;
        let pass = outcome.pass && in_time;
        let timing = format!("{:.2}s of {}s", elapsed.as_secs_f64(), c.limit.as_secs());
        let note = match (pass, c.known_failure) {
            (false, true) => " [known failure]",
            (true, true) => " [expected to fail]",
            _ => "",
        };
        println!(
            "{} criterion {} ({}): {}; {}{}",
            if pass { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            outcome.detail,
            if in_time { timing } else { format!("over time limit, {timing}") },
            note
        );
        if pass == c.known_failure {
            unexpected += 1;
        }
    }
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{unexpected} criteria did not match their expected outcome");
        ExitCode::FAILURE
    }
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

const SGF_ROWS: [(f64, f64); 6] = [
    (0.18, 0.986),
    (0.48, 0.915),
    (0.79, 0.890),
    (0.93, 0.872),
    (0.99, 0.859),
    (0.98, 0.842),
];
const SGF_ACCUMULATED: [f64; 6] = [0.179, 0.464, 0.744, 0.867, 0.919, 0.910];
const SGF_HARMONIC: [f64; 6] = [0.304, 0.630, 0.837, 0.900, 0.920, 0.906];

const IGAN_ROWS: [(f64, f64); 7] = [
    (0.13, 0.993),
    (0.32, 0.942),
    (0.41, 0.883),
    (0.55, 0.822),
    (0.85, 0.612),
    (0.99, 0.469),
    (1.00, 0.398),
];
const IGAN_ACCUMULATED: [f64; 7] = [0.129, 0.312, 0.394, 0.513, 0.728, 0.804, 0.808];
const IGAN_HARMONIC: [f64; 7] = [0.230, 0.478, 0.560, 0.659, 0.712, 0.636, 0.569];

/// Worst absolute deviation from one method's table, including its final MDS
/// and best harmonic mean.
fn table_error(
    rows: &[(f64, f64)],
    accumulated: &[f64],
    harmonic: &[f64],
    final_mds: f64,
    best_hm: f64,
) -> Result<f64> {
    let curve = MdcCurve::from_pairs(rows)?;
    let result = mds(&curve)?;
    let mut worst: f64 = 0.0;
    for (got, want) in result.accumulated.iter().zip(accumulated) {
        worst = worst.max((got - want).abs());
    }
    for (p, want) in curve.points.iter().zip(harmonic) {
        worst = worst.max((p.harmonic_mean() - want).abs());
    }
    let best = curve.points[select_best_strength(&curve)?].harmonic_mean();
    worst = worst.max((result.mds - final_mds).abs());
    Ok(worst.max((best - best_hm).abs()))
}

fn criterion_1(_: &mut Rig) -> Result<Outcome> {
    let sgf = table_error(&SGF_ROWS, &SGF_ACCUMULATED, &SGF_HARMONIC, 0.919, 0.920)?;
    let igan = table_error(&IGAN_ROWS, &IGAN_ACCUMULATED, &IGAN_HARMONIC, 0.808, 0.712)?;
    Ok(Outcome::new(
        sgf <= 0.002 && igan <= 0.002,
        format!("max |Δ| SGF {sgf:.5}, InterfaceGAN {igan:.5} (26 table values and 4 headline numbers)"),
    ))
}

/// `F(z, c) = 0.5 z + 0.25 c` against `Φ(z) = 2 z`, from 0 to 2.
///
/// The exact inverse moves Φ by exactly `δc` per step. Neumann order 1
/// approximates `(1 − 0.5)⁻¹ = 2` by `1.5`, so Φ advances by `0.75 δc` per
/// step. For each tested λ no multiple of that increment lands within 1e-3
/// of 2, so that part is reported as a known failure.
fn criterion_2(_: &mut Rig) -> Result<Outcome> {
    let oracle = Oracle::build(OracleSpec::linear(1, 2.0))?;
    let f = AffineMap::new(Matrix::diag(&[0.5]), Matrix::diag(&[0.25]))?;
    let mut exact_ok = true;
    let mut neumann_ok = true;
    let mut parts = Vec::new();
    for lambda in [0.1, 0.2, 0.5] {
        let expected = (1.0_f64 / lambda).ceil() as usize;
        let exact = navigate(
            &f,
            &oracle,
            &[0.0],
            &[2.0],
            &NavConfig {
                step_size: lambda,
                converge_tol: 1e-9,
                inverse_mode: InverseMode::Exact,
                ..NavConfig::default()
            },
        )?;
        exact_ok &= exact.converged && exact.executed_steps() == expected;
        let neumann = navigate(
            &f,
            &oracle,
            &[0.0],
            &[2.0],
            &NavConfig {
                step_size: lambda,
                neumann_order: 1,
                converge_tol: 1e-3,
                max_steps: 50,
                ..NavConfig::default()
            },
        )?;
        let best = neumann.steps.iter().map(|s| s.dist).fold(f64::INFINITY, f64::min);
        neumann_ok &= neumann.converged;
        parts.push(format!(
            "λ={lambda}: exact {} steps (want {expected}), Neumann best |Φ−c1| {best:.3}",
            exact.executed_steps()
        ));
    }
    Ok(Outcome::new(
        exact_ok && neumann_ok,
        format!(
            "exact part {}, Neumann part {}; {}",
            pass_word(exact_ok),
            pass_word(neumann_ok),
            parts.join("; ")
        ),
    ))
}

fn pass_word(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "fail"
    }
}

/// Uses a square world (d = n_c), the only kind of rig whose learned latent
/// Jacobian can contract: with d > n_c the reconstruction identity forces a
/// unit singular value on the null space of ∇Φ.
fn criterion_3(_: &mut Rig) -> Result<Outcome> {
    let oracle = Oracle::build(OracleSpec::sigmoid_attrs(4, 4, 7))?;
    let ds = build_dataset(&oracle, 20_000, &mut RngState::new(7))?;
    let cfg = TrainConfig {
        seed: 7,
        iterations: 5_000,
        ..TrainConfig::default()
    };
    let (f, _) = train(&ds, ArchConfig::new(4, 4, 6, 64), &cfg)?;
    let mut rng = RngState::new(3);
    let mut used = 0;
    let mut worst_ratio: f64 = 0.0;
    for p in ds.held_out() {
        if used == 20 {
            break;
        }
        let rho = f.spectral_radius_z(&p.z, &p.c, 200)?;
        if rho >= 0.95 {
            continue;
        }
        used += 1;
        let dc = rng.unit_vector(4);
        let v0 = f.jvp_c(&p.z, &p.c, &dc)?;
        let exact_cfg = NavConfig {
            inverse_mode: InverseMode::Exact,
            ..NavConfig::default()
        };
        let exact = surrogate_field(&f, &p.z, &p.c, &dc, &exact_cfg)?;
        for m in [1, 5, 20] {
            let cfg = NavConfig {
                neumann_order: m,
                ..NavConfig::default()
            };
            let approx = surrogate_field(&f, &p.z, &p.c, &dc, &cfg)?;
            let err = numerics::norm(&numerics::sub(&approx, &exact));
            let bound = 1.1 * rho.powi(m as i32 + 1) / (1.0 - rho) * numerics::norm(&v0);
            worst_ratio = worst_ratio.max(err / bound);
        }
    }
    Ok(Outcome::new(
        used == 20 && worst_ratio <= 1.0,
        format!("{used} points with ρ̂ < 0.95, worst error/bound {worst_ratio:.3}"),
    ))
}

fn random_map(rng: &mut RngState) -> Result<AuxMap> {
    let arch = ArchConfig::new(
        2 + rng.index(6),
        1 + rng.index(4),
        1 + rng.index(3),
        4 + rng.index(12),
    );
    let mut f = AuxMap::init(arch, rng)?;
    for b in &mut f.blocks {
        for x in b.gamma_weight.as_mut_slice() {
            *x = 0.5 * rng.normal();
        }
        for x in b.beta_weight.as_mut_slice() {
            *x = 0.5 * rng.normal();
        }
        for x in b.linear.bias.iter_mut() {
            *x = 0.3 * rng.normal();
        }
    }
    f.spectral_normalize(3);
    Ok(f)
}

/// A random map and point with every activation kink outside the FD stencil.
fn smooth_case(rng: &mut RngState) -> Result<(AuxMap, Vec<f64>, Vec<f64>)> {
    loop {
        let f = random_map(rng)?;
        let z = sample_gaussian(rng, f.arch.d)?;
        let c: Vec<f64> = (0..f.arch.n_c).map(|_| rng.normal()).collect();
        if f.kink_margin(&z, &c)? > 1e-3 {
            return Ok((f, z, c));
        }
    }
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    numerics::norm(&numerics::sub(a, b)) / numerics::norm(b).max(1e-8)
}

fn criterion_4(_: &mut Rig) -> Result<Outcome> {
    let mut rng = RngState::new(4);
    let (mut jz, mut jc, mut bw, mut og) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
    for _ in 0..100 {
        let (f, z, c) = smooth_case(&mut rng)?;
        let dir = rng.unit_vector(f.arch.d);
        let fd = finite_diff_jvp(|x| f.forward(x, &c), &z, &dir, DEFAULT_FD_STEP)?;
        jz = jz.max(rel_err(&f.jvp_z(&z, &c, &dir)?, &fd));
        let dir = rng.unit_vector(f.arch.n_c);
        let fd = finite_diff_jvp(|x| f.forward(&z, x), &c, &dir, DEFAULT_FD_STEP)?;
        jc = jc.max(rel_err(&f.jvp_c(&z, &c, &dir)?, &fd));
    }
    for _ in 0..100 {
        let (f, z, c) = smooth_case(&mut rng)?;
        let out_grad = sample_gaussian(&mut rng, f.arch.d)?;
        let grads = f.backward(&z, &c, &out_grad)?;
        let theta = f.params();
        let mut fd = vec![0.0; theta.len()];
        let mut e = vec![0.0; theta.len()];
        for k in 0..theta.len() {
            e[k] = 1.0;
            fd[k] = finite_diff_jvp(
                |p| {
                    let mut g = f.clone();
                    g.set_params(p)?;
                    Ok(vec![numerics::dot(&g.forward(&z, &c)?, &out_grad)])
                },
                &theta,
                &e,
                DEFAULT_FD_STEP,
            )?[0];
            e[k] = 0.0;
        }
        let scale = numerics::norm_inf(&fd).max(1e-8);
        for k in 0..theta.len() {
            bw = bw.max((grads[k] - fd[k]).abs() / fd[k].abs().max(1e-3 * scale));
        }
    }
    let specs = [
        OracleSpec::linear(6, 1.7),
        OracleSpec::sigmoid_attrs(6, 3, 4),
        OracleSpec::new(OracleKind::TanhMix, 6, 3, 5),
        OracleSpec::new(OracleKind::KeypointBumps, 6, 4, 6),
    ];
    for spec in specs {
        let o = Oracle::build(spec)?;
        for _ in 0..100 {
            let z = sample_gaussian(&mut rng, 6)?;
            let dir = rng.unit_vector(6);
            let analytic = numerics::matvec(&o.eval_grad(&z)?, &dir)?;
            let fd = finite_diff_jvp(|x| o.eval(x), &z, &dir, DEFAULT_FD_STEP)?;
            og = og.max(rel_err(&analytic, &fd));
        }
    }
    Ok(Outcome::new(
        jz <= 1e-5 && jc <= 1e-5 && og <= 1e-5 && bw <= 1e-4,
        format!(
            "worst relative errors: jvp_z {jz:.1e}, jvp_c {jc:.1e}, eval_grad {og:.1e}, backward {bw:.1e}"
        ),
    ))
}

/// Convergence count of the default rig at λ = 0.2, frozen after the first
/// verified build.
const GOLDEN_CONVERGED: usize = 99;

/// The default sigmoid-attrs world with its trained map and 100 seeded
/// single-attribute navigation targets, built on first use.
#[derive(Default)]
struct Rig {
    built: Option<(Oracle, AuxMap, Vec<(Vec<f64>, Vec<f64>)>)>,
}

impl Rig {
    fn get(&mut self) -> Result<&(Oracle, AuxMap, Vec<(Vec<f64>, Vec<f64>)>)> {
        if self.built.is_none() {
            let oracle = Oracle::build(OracleSpec::sigmoid_attrs(16, 4, 7))?;
            let ds = build_dataset(&oracle, 50_000, &mut RngState::new(7))?;
            let cfg = TrainConfig {
                seed: 7,
                ..TrainConfig::default()
            };
            let (f, _) = train(&ds, ArchConfig::default(), &cfg)?;
            let mut rng = RngState::new(1234);
            let mut targets = Vec::new();
            for s in 0..100 {
                let z0 = sample_gaussian(&mut rng, 16)?;
                let mut c1 = oracle.eval(&z0)?;
                let k = s % 4;
                c1[k] += if c1[k] < 0.5 { 0.3 } else { -0.3 };
                targets.push((z0, c1));
            }
            self.built = Some((oracle, f, targets));
        }
        Ok(self.built.as_ref().expect("rig was just built"))
    }

    /// Converged count and mean final distance at step size `lambda`.
    fn sweep(&mut self, lambda: f64) -> Result<(usize, f64)> {
        let (oracle, f, targets) = self.get()?;
        let cfg = NavConfig {
            step_size: lambda,
            ..NavConfig::default()
        };
        let (mut ok, mut dist) = (0, 0.0);
        for (z0, c1) in targets {
            let trace = navigate(f, oracle, z0, c1, &cfg)?;
            ok += usize::from(trace.converged);
            dist += trace.final_dist();
        }
        Ok((ok, dist / targets.len() as f64))
    }
}

fn criterion_5(rig: &mut Rig) -> Result<Outcome> {
    let (ok, dist) = rig.sweep(0.2)?;
    Ok(Outcome::new(
        ok >= 90 && ok == GOLDEN_CONVERGED,
        format!("{ok}/100 converged (golden {GOLDEN_CONVERGED}), mean final distance {dist:.4}"),
    ))
}

fn criterion_6(rig: &mut Rig) -> Result<Outcome> {
    let (ok_02, dist_02) = rig.sweep(0.2)?;
    let (ok_10, dist_10) = rig.sweep(1.0)?;
    let (ok_002, dist_002) = rig.sweep(0.02)?;
    Ok(Outcome::new(
        ok_02 >= ok_10 && dist_002 > dist_02,
        format!(
            "converged λ=0.2 {ok_02}, λ=1.0 {ok_10}, λ=0.02 {ok_002}; mean distance λ=0.2 {dist_02:.4}, λ=1.0 {dist_10:.4}, λ=0.02 {dist_002:.4}"
        ),
    ))
}

fn criterion_7(rig: &mut Rig) -> Result<Outcome> {
    let (oracle, f, targets) = rig.get()?;
    let mut ok = true;
    let mut counts = Vec::new();
    for (z0, c1) in targets.iter().take(3) {
        for max_steps in [1, 5, 20, 50] {
            let base = NavConfig {
                max_steps,
                ..NavConfig::default()
            };
            let standard = navigate(f, oracle, z0, c1, &base)?;
            let fast = navigate(f, oracle, z0, c1, &NavConfig { fast: true, ..base.clone() })?;
            let checked = navigate(
                f,
                oracle,
                z0,
                c1,
                &NavConfig {
                    fast: true,
                    final_check: true,
                    ..base.clone()
                },
            )?;
            ok &= standard.oracle_calls == 1 + standard.executed_steps() as u64;
            ok &= fast.oracle_calls == 1 && checked.oracle_calls == 2;
            let bits = |t: &sgf_core::NavTrace| -> Vec<u64> {
                t.steps[1].z.iter().chain(&t.steps[1].dz).map(|x| x.to_bits()).collect()
            };
            ok &= bits(&standard) == bits(&fast) && bits(&fast) == bits(&checked);
            counts.push(format!(
                "{}/{}/{}",
                standard.oracle_calls, fast.oracle_calls, checked.oracle_calls
            ));
        }
    }
    Ok(Outcome::new(
        ok,
        format!("calls standard/fast/fast+check for n ∈ {{1,5,20,50}}: {}", counts.join(" ")),
    ))
}

/// A tanh-mix start found by `examples/stall_search.rs` (world seed 7,
/// candidate 1552): Adam stalls at a near-stationary point far from the target.
const STALL_Z0: [f64; 8] = [
    -0.1039420260767742,
    0.6394198898868617,
    -0.18348144339520087,
    -0.42610666498036154,
    0.8553460732634035,
    -1.503802178097423,
    -1.3778935069713343,
    0.9339736507556099,
];
const STALL_C1: [f64; 2] = [0.9960883485524665, 0.8605833808153679];

fn criterion_8(_: &mut Rig) -> Result<Outcome> {
    let linear = Oracle::build(OracleSpec::linear(4, 2.0))?;
    let lin = latent_opt(&linear, &[0.0; 4], &[0.5, -0.3, 0.2, 0.4], &LatentOptConfig::default())?;

    let oracle = Oracle::build(OracleSpec::new(OracleKind::TanhMix, 8, 2, 7))?;
    let opt = LatentOptConfig {
        record_every: 10_000,
        ..LatentOptConfig::default()
    };
    let stalled = latent_opt(&oracle, &STALL_Z0, &STALL_C1, &opt)?;
    let ds = build_dataset(&oracle, 20_000, &mut RngState::new(7))?;
    let cfg = TrainConfig {
        seed: 7,
        iterations: 10_000,
        ..TrainConfig::default()
    };
    let (f, _) = train(&ds, ArchConfig::new(8, 2, 6, 64), &cfg)?;
    let nav = navigate(&f, &oracle, &STALL_Z0, &STALL_C1, &NavConfig::default())?;
    Ok(Outcome::new(
        lin.final_loss < 1e-6 && stalled.final_loss > 0.1 && nav.converged,
        format!(
            "linear world loss {:.3e}; tanh-mix latent_opt loss {:.4}, navigation {} in {} steps (distance {:.4})",
            lin.final_loss,
            stalled.final_loss,
            if nav.converged { "converged" } else { "did not converge" },
            nav.executed_steps(),
            nav.final_dist()
        ),
    ))
}

const WORLD: &str = "sigmoid-attrs:d=8,nc=2";

fn cli_script() -> Vec<Vec<&'static str>> {
    vec![
        vec!["gen-data", "--oracle", WORLD, "--count", "2000", "--seed", "3", "--out", "data.sgfd"],
        vec![
            "train", "--data", "data.sgfd", "--out", "f.sgfc", "--iterations", "400",
            "--diag-interval", "200", "--seed", "3",
        ],
        vec![
            "navigate", "--checkpoint", "f.sgfc", "--oracle", WORLD, "--seed", "3", "--attr", "0",
            "--target", "0.3", "--out", "nav.json",
        ],
        vec![
            "evaluate", "--checkpoint", "f.sgfc", "--oracle", WORLD, "--seed", "3", "--samples",
            "20", "--strengths", "5,10", "--jobs", "2", "--out", "mdc.csv",
        ],
        vec!["mds", "table.csv", "--out", "mds.json"],
        vec![
            "baseline", "--oracle", "linear:d=4", "--seed", "3", "--c1", "[0.5,-0.2,0.1,0.3]",
            "--lr", "0.01", "--iterations", "2000", "--out", "opt.json",
        ],
        vec!["compare-linear", "--trace", "nav.json", "--out", "cmp.json"],
        vec![
            "compare-linear", "--checkpoint", "f.sgfc", "--oracle", WORLD, "--seed", "3", "--attr",
            "1", "--target", "0.7", "--fast", "--out", "cmp-fast.json",
        ],
    ]
}

/// Runs the script in `dir`; returns stdout per command and a digest per
/// output file. Manifests are compared with their wall-clock field removed.
fn run_script(dir: &Path, table_csv: &str) -> Result<(Vec<String>, BTreeMap<String, String>)> {
    fs::write(dir.join("table.csv"), table_csv)?;
    let mut stdout = Vec::new();
    for args in cli_script() {
        let out = Command::new(env!("CARGO_BIN_EXE_sgf"))
            .args(&args)
            .current_dir(dir)
            .output()
            .with_context(|| format!("spawning sgf {}", args[0]))?;
        ensure!(
            out.status.success(),
            "sgf {} failed: {}",
            args[0],
            String::from_utf8_lossy(&out.stderr)
        );
        stdout.push(String::from_utf8(out.stdout)?);
    }
    let mut digests = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        let mut bytes = fs::read(&path)?;
        if name.ends_with(".manifest.json") {
            let mut manifest: Value = serde_json::from_slice(&bytes)?;
            manifest
                .as_object_mut()
                .context("manifest is not an object")?
                .remove("duration_secs");
            bytes = serde_json::to_vec(&manifest)?;
        }
        let hex: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        digests.insert(name, hex);
    }
    Ok((stdout, digests))
}

fn criterion_9(_: &mut Rig) -> Result<Outcome> {
    let table = MdcCurve::from_pairs(&SGF_ROWS)?.to_csv();
    let (a, b) = (tempfile::tempdir()?, tempfile::tempdir()?);
    let (out_a, files_a) = run_script(a.path(), &table)?;
    let (out_b, files_b) = run_script(b.path(), &table)?;
    let identical = out_a == out_b && files_a == files_b;
    let manifests = files_a.keys().filter(|k| k.ends_with(".manifest.json")).count();

    let data = a.path().join("data.sgfd");
    let ds_exact = PairDataset::load(&data)?.to_bytes() == fs::read(&data)?;
    let ckpt = a.path().join("f.sgfc");
    let (f, meta) = load_checkpoint(&ckpt)?;
    let ckpt_exact = checkpoint_bytes(&f, &meta)? == fs::read(&ckpt)?;

    let mds_line = out_a[4].lines().find(|l| l.starts_with("MDS ")).unwrap_or("");
    let mds_ok = mds_line == "MDS 0.919";
    Ok(Outcome::new(
        identical && manifests == 8 && ds_exact && ckpt_exact && mds_ok,
        format!(
            "{} files identical across runs: {identical}, {manifests} manifests, SGFD exact: {ds_exact}, SGFC exact: {ckpt_exact}, mds prints `{mds_line}`",
            files_a.len()
        ),
    ))
}
