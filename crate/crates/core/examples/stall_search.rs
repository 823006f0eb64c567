//! Searches a tanh-mix world for starts where direct latent optimization
//! stalls while surrogate-field navigation reaches the same target.
//!
//! `cargo run --release -p sgf-core --example stall_search -- [world seed] [candidates]`

use sgf_core::baselines::{latent_opt, LatentOptConfig};
use sgf_core::navigator::{navigate, NavConfig};
use sgf_core::numerics::{self, sample_gaussian, RngState};
use sgf_core::trainer::{build_dataset, train, TrainConfig};
use sgf_core::{ArchConfig, Oracle, OracleKind, OracleSpec};

fn main() -> sgf_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let candidates: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(200);
    let (d, n_c) = (8, 2);
    let oracle = Oracle::build(OracleSpec::new(OracleKind::TanhMix, d, n_c, seed))?;
    let ds = build_dataset(&oracle, 20_000, &mut RngState::new(seed))?;
    let cfg = TrainConfig { seed, iterations: 10_000, ..TrainConfig::default() };
    let (f, report) = train(&ds, ArchConfig::new(d, n_c, 6, 64), &cfg)?;
    println!("world {} rel err {:.4}", oracle.spec(), report.held_out_relative_error);

    let opt = LatentOptConfig { record_every: 10_000, ..LatentOptConfig::default() };
    let mut rng = RngState::new(seed ^ 0x5eed);
    let (mut stalls, mut sgf_ok, mut both) = (0, 0, 0);
    for i in 0..candidates {
        let z0 = sample_gaussian(&mut rng, d)?;
        let c1 = oracle.eval(&sample_gaussian(&mut rng, d)?)?;
        let base = latent_opt(&oracle, &z0, &c1, &opt)?;
        let nav = navigate(&f, &oracle, &z0, &c1, &NavConfig::default());
        let converged = nav.as_ref().is_ok_and(|t| t.converged);
        let stalled = base.final_loss > 0.1;
        stalls += usize::from(stalled);
        sgf_ok += usize::from(converged);
        if stalled && converged {
            both += 1;
            let jac = oracle.eval_grad(&base.final_z)?;
            let r = numerics::sub(&oracle.eval(&base.final_z)?, &c1);
            let grad = numerics::matvec(&jac.transpose(), &r)?;
            println!(
                "candidate {i}: latent_opt loss {:.4} |grad| {:.2e}, sgf steps {}\n  z0 {:?}\n  c1 {:?}",
                base.final_loss,
                2.0 * numerics::norm(&grad),
                nav.as_ref().unwrap().executed_steps(),
                z0,
                c1
            );
        }
    }
    println!("{candidates} candidates: latent_opt stalled {stalls}, sgf converged {sgf_ok}, both {both}");
    Ok(())
}
