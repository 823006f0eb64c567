//! Comparison methods: direct latent optimization through a differentiable
//! oracle, and straight-line analyses of navigation paths.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::navigator::NavTrace;
use crate::numerics::{self, AdamState};
use crate::oracle::Oracle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentOptConfig {
    pub lr: f64,
    pub iterations: usize,
    /// Stop once the loss is at or below this.
    pub tol: f64,
    /// Keep every k-th record (the first and last are always kept).
    pub record_every: usize,
}

impl Default for LatentOptConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            iterations: 10_000,
            tol: 1e-6,
            record_every: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptRecord {
    pub iteration: usize,
    pub z: Vec<f64>,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptTrace {
    pub records: Vec<OptRecord>,
    pub final_z: Vec<f64>,
    pub final_loss: f64,
    pub converged: bool,
}

/// Minimizes `‖Φ(z) − c₁‖²` with Adam using the oracle's analytic Jacobian.
pub fn latent_opt(oracle: &Oracle, z0: &[f64], c1: &[f64], cfg: &LatentOptConfig) -> Result<OptTrace> {
    if !oracle.supports_grad() {
        return Err(Error::Unsupported(
            "latent optimization needs a differentiable oracle".into(),
        ));
    }
    check_dim("latent_opt z0", oracle.d(), z0.len())?;
    check_dim("latent_opt c1", oracle.n_c(), c1.len())?;
    if !(cfg.lr > 0.0) || cfg.record_every == 0 {
        return Err(Error::InvalidArgument(
            "latent_opt needs a positive lr and record_every ≥ 1".into(),
        ));
    }

    let loss_at = |z: &[f64]| -> Result<(f64, Vec<f64>)> {
        let r = numerics::sub(&oracle.eval(z)?, c1);
        Ok((numerics::dot(&r, &r), r))
    };

    let mut adam = AdamState::new(z0.len(), cfg.lr);
    let mut z = z0.to_vec();
    let mut records = Vec::new();
    let (mut loss, mut residual) = loss_at(&z)?;
    let mut it = 0;
    loop {
        let keep = it % cfg.record_every == 0;
        let done = loss <= cfg.tol || it == cfg.iterations || !loss.is_finite();
        if keep || done {
            records.push(OptRecord {
                iteration: it,
                z: z.clone(),
                loss,
            });
        }
        if done {
            break;
        }
        let jac = oracle.eval_grad(&z)?;
        let grad = numerics::scaled(&jac.tmul_vec_unchecked(&residual), 2.0);
        adam.step(&mut z, &grad)?;
        (loss, residual) = loss_at(&z)?;
        it += 1;
    }
    Ok(OptTrace {
        records,
        final_z: z,
        final_loss: loss,
        converged: loss <= cfg.tol,
    })
}

/// `(1 − t)·z0 + t·z1` for `t ∈ [0, 1]`.
pub fn linear_path(z0: &[f64], z1: &[f64], t: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("t must lie in [0,1], got {t}")));
    }
    check_dim("linear_path", z0.len(), z1.len())?;
    Ok(z0.iter().zip(z1).map(|(a, b)| (1.0 - t) * a + t * b).collect())
}

/// Applies the displacement `z1 − z0`, scaled, to another latent.
pub fn transfer_direction(z_other: &[f64], z0: &[f64], z1: &[f64], scale: f64) -> Result<Vec<f64>> {
    check_dim("transfer_direction z0", z_other.len(), z0.len())?;
    check_dim("transfer_direction z1", z_other.len(), z1.len())?;
    Ok(z_other
        .iter()
        .zip(z0.iter().zip(z1))
        .map(|(o, (a, b))| o + scale * (b - a))
        .collect())
}

/// Largest distance from a path point to the chord between its endpoints,
/// divided by the chord length.
pub fn path_deviation_points(points: &[Vec<f64>]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::UndefinedDeviation("path needs at least two points".into()));
    }
    let start = &points[0];
    let end = &points[points.len() - 1];
    let chord = numerics::sub(end, start);
    let len2 = numerics::dot(&chord, &chord);
    if !(len2 > 0.0) {
        return Err(Error::UndefinedDeviation("path endpoints coincide".into()));
    }
    let mut worst: f64 = 0.0;
    for p in points {
        check_dim("path_deviation", start.len(), p.len())?;
        let rel = numerics::sub(p, start);
        let t = (numerics::dot(&rel, &chord) / len2).clamp(0.0, 1.0);
        let mut off = rel;
        numerics::axpy(&mut off, -t, &chord);
        worst = worst.max(numerics::norm(&off));
    }
    Ok(worst / len2.sqrt())
}

pub fn path_deviation(trace: &NavTrace) -> Result<f64> {
    let points: Vec<Vec<f64>> = trace.steps.iter().map(|s| s.z.clone()).collect();
    path_deviation_points(&points)
}
