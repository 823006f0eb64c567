//! Strength sweeps that turn seeded navigations into an MDC.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{self, MdcCurve, MdcPoint, SampleOutcome};
use crate::navigator::{self, ConditionalMap, NavConfig};
use crate::numerics::{self, RngState};
use crate::oracle::Oracle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub samples: usize,
    pub attr: usize,
    /// Requested target score; flipped per sample by
    /// [`metrics::evaluation_target`].
    pub target: f64,
    /// `max_steps` values of the sweep, strictly increasing.
    pub strengths: Vec<usize>,
    pub nav: NavConfig,
    pub seed: u64,
    pub jobs: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            samples: 100,
            attr: 0,
            target: 1.0,
            strengths: vec![5, 10, 15, 20, 25, 30],
            nav: NavConfig::default(),
            seed: 0,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalStart {
    pub z0: Vec<f64>,
    pub c0: Vec<f64>,
    pub c1: Vec<f64>,
    pub target_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub curve: MdcCurve,
    pub accumulated_mds: Vec<f64>,
    pub mds: f64,
    pub best_index: usize,
    pub best_harmonic_mean: f64,
    /// Failed manipulations per strength.
    pub errors: Vec<usize>,
    pub oracle_calls: u64,
}

/// Seeded starting latents with their single-attribute targets.
pub fn evaluation_starts(
    oracle: &Oracle,
    samples: usize,
    attr: usize,
    target: f64,
    seed: u64,
) -> Result<Vec<EvalStart>> {
    if attr >= oracle.n_c() {
        return Err(Error::InvalidArgument(format!(
            "attribute {attr} out of range for {} conditions",
            oracle.n_c()
        )));
    }
    if samples == 0 {
        return Err(Error::InvalidArgument("evaluation needs at least one sample".into()));
    }
    let mut rng = RngState::new(seed);
    let zs = (0..samples)
        .map(|_| numerics::sample_gaussian(&mut rng, oracle.d()))
        .collect::<Result<Vec<_>>>()?;
    let cs = oracle.eval_batch(&zs)?;
    Ok(zs
        .into_iter()
        .zip(cs)
        .map(|(z0, c0)| {
            let target_value = metrics::evaluation_target(c0[attr], target);
            let mut c1 = c0.clone();
            c1[attr] = target_value;
            EvalStart {
                z0,
                c0,
                c1,
                target_value,
            }
        })
        .collect())
}

/// Builds an MDC from any manipulation routine.
///
/// `manipulate(start, strength)` returns the achieved condition. An error
/// counts as a failed manipulation for accuracy and the sample is left out of
/// the disentanglement average.
pub fn sweep<Fm>(
    starts: &[EvalStart],
    attr: usize,
    strengths: &[usize],
    jobs: usize,
    manipulate: Fm,
) -> Result<(MdcCurve, Vec<usize>)>
where
    Fm: Fn(&EvalStart, usize) -> Result<Vec<f64>> + Sync,
{
    if strengths.is_empty() {
        return Err(Error::InvalidArgument("strength sweep is empty".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let m = starts.first().map_or(0, |s| s.c0.len());
    let mut points = Vec::with_capacity(strengths.len());
    let mut errors = Vec::with_capacity(strengths.len());
    for &strength in strengths {
        let results: Vec<Result<Vec<f64>>> = pool.install(|| {
            starts
                .par_iter()
                .map(|s| manipulate(s, strength))
                .collect()
        });
        let mut n_err = 0;
        let mut outcomes = Vec::with_capacity(starts.len());
        let mut hits = 0usize;
        for (s, r) in starts.iter().zip(results) {
            let outcome = |after: Vec<f64>| SampleOutcome {
                target_attr: attr,
                target_value: s.target_value,
                scores_before: s.c0.clone(),
                scores_after: after,
            };
            match r {
                Ok(after) => {
                    let o = outcome(after);
                    hits += usize::from(o.succeeded());
                    outcomes.push(o);
                }
                Err(e) => {
                    log::debug!("manipulation failed at strength {strength}: {e}");
                    n_err += 1;
                }
            }
        }
        let accuracy = hits as f64 / starts.len() as f64;
        let disentanglement = if outcomes.is_empty() {
            0.0
        } else {
            metrics::disentanglement(&outcomes, m)?
        };
        points.push(MdcPoint::new(strength as f64, accuracy, disentanglement));
        errors.push(n_err);
    }
    Ok((MdcCurve::new(points)?, errors))
}

/// Surrogate-field sweep: strength is the step budget `max_steps`.
pub fn evaluate<M: ConditionalMap + Sync + ?Sized>(
    f: &M,
    oracle: &Oracle,
    cfg: &EvalConfig,
) -> Result<EvalSummary> {
    let before = oracle.call_count();
    let starts = evaluation_starts(oracle, cfg.samples, cfg.attr, cfg.target, cfg.seed)?;
    let (curve, errors) = sweep(&starts, cfg.attr, &cfg.strengths, cfg.jobs, |s, strength| {
        let nav = NavConfig {
            max_steps: strength,
            // a fast run must still report what it actually reached
            final_check: cfg.nav.fast || cfg.nav.final_check,
            ..cfg.nav.clone()
        };
        let trace = navigator::navigate(f, oracle, &s.z0, &s.c1, &nav)?;
        Ok(trace.final_c().to_vec())
    })?;
    let scored = metrics::mds(&curve)?;
    let best_index = metrics::select_best_strength(&curve)?;
    Ok(EvalSummary {
        best_harmonic_mean: curve.points[best_index].harmonic_mean(),
        curve,
        accumulated_mds: scored.accumulated,
        mds: scored.mds,
        best_index,
        errors,
        oracle_calls: oracle.call_count() - before,
    })
}
