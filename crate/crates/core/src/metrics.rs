//! Manipulation accuracy, disentanglement, and the Manipulation
//! Disentanglement Curve / Score.
//!
//! An MDC is a sequence of (accuracy, disentanglement) points obtained by
//! sweeping a manipulation strength. The curve implicitly starts at
//! `(0, 1)`: no manipulation, nothing changed. The score accumulates signed
//! trapezoids along accuracy and keeps the best prefix.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An attribute counts as changed when its score moves by more than this.
pub const CHANGE_THRESHOLD: f64 = 0.5;

pub const MDC_CSV_HEADER: &str = "strength,accuracy,disentanglement";

pub fn attribute_changed(before: f64, after: f64) -> bool {
    (after - before).abs() > CHANGE_THRESHOLD
}

/// Flips a binary target for samples that already sit on its side of 0.5,
/// so every sample asks for an achievable change.
pub fn evaluation_target(initial_score: f64, requested_target: f64) -> f64 {
    if (initial_score > 0.5) == (requested_target > 0.5) {
        1.0 - requested_target
    } else {
        requested_target
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub target_attr: usize,
    /// Score the manipulation aimed for on the target attribute.
    pub target_value: f64,
    pub scores_before: Vec<f64>,
    pub scores_after: Vec<f64>,
}

impl SampleOutcome {
    fn validate(&self) -> Result<()> {
        if self.scores_before.len() != self.scores_after.len()
            || self.target_attr >= self.scores_before.len()
        {
            return Err(Error::InvalidArgument(format!(
                "outcome has {} / {} scores for target attribute {}",
                self.scores_before.len(),
                self.scores_after.len(),
                self.target_attr
            )));
        }
        Ok(())
    }

    /// Target attribute changed by more than the threshold, toward the target.
    pub fn succeeded(&self) -> bool {
        let before = self.scores_before[self.target_attr];
        let after = self.scores_after[self.target_attr];
        attribute_changed(before, after)
            && (after - before).signum() == (self.target_value - before).signum()
    }

    /// Number of non-target attributes that changed.
    pub fn side_changes(&self) -> usize {
        self.scores_before
            .iter()
            .zip(&self.scores_after)
            .enumerate()
            .filter(|&(k, (b, a))| k != self.target_attr && attribute_changed(*b, *a))
            .count()
    }
}

/// Fraction of samples whose target attribute was successfully changed.
pub fn accuracy(outcomes: &[SampleOutcome]) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::InvalidArgument("accuracy needs at least one outcome".into()));
    }
    let mut hits = 0usize;
    for o in outcomes {
        o.validate()?;
        hits += usize::from(o.succeeded());
    }
    Ok(hits as f64 / outcomes.len() as f64)
}

/// `(1/N) Σ (1 − nᵢ / (M − 1))`, with `nᵢ` the changed non-target attributes.
pub fn disentanglement(outcomes: &[SampleOutcome], m: usize) -> Result<f64> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "disentanglement needs at least two attributes, got {m}"
        )));
    }
    if outcomes.is_empty() {
        return Err(Error::InvalidArgument(
            "disentanglement needs at least one outcome".into(),
        ));
    }
    let mut total = 0.0;
    for o in outcomes {
        o.validate()?;
        if o.scores_before.len() != m {
            return Err(Error::InvalidArgument(format!(
                "outcome has {} attributes, expected {m}",
                o.scores_before.len()
            )));
        }
        total += 1.0 - o.side_changes() as f64 / (m - 1) as f64;
    }
    Ok(total / outcomes.len() as f64)
}

/// `2ab / (a + b)`; zero when `a + b == 0`.
pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MdcPoint {
    pub strength: f64,
    pub accuracy: f64,
    pub disentanglement: f64,
}

impl MdcPoint {
    pub fn new(strength: f64, accuracy: f64, disentanglement: f64) -> Self {
        Self {
            strength,
            accuracy,
            disentanglement,
        }
    }

    pub fn harmonic_mean(&self) -> f64 {
        harmonic_mean(self.accuracy, self.disentanglement)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MdcCurve {
    pub points: Vec<MdcPoint>,
}

impl MdcCurve {
    /// Builds a curve, checking bounds and strictly increasing strengths.
    pub fn new(points: Vec<MdcPoint>) -> Result<Self> {
        for p in &points {
            let ok = |x: f64| (0.0..=1.0).contains(&x);
            if !ok(p.accuracy) || !ok(p.disentanglement) || !p.strength.is_finite() {
                return Err(Error::InvalidArgument(format!("MDC point out of range: {p:?}")));
            }
        }
        if points.windows(2).any(|w| !(w[1].strength > w[0].strength)) {
            return Err(Error::InvalidArgument(
                "MDC strengths must be strictly increasing".into(),
            ));
        }
        Ok(Self { points })
    }

    /// Curve from `(accuracy, disentanglement)` pairs, strengths 1, 2, …
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::new(
            pairs
                .iter()
                .enumerate()
                .map(|(i, &(a, d))| MdcPoint::new((i + 1) as f64, a, d))
                .collect(),
        )
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(MDC_CSV_HEADER);
        out.push('\n');
        for p in &self.points {
            let _ = writeln!(out, "{},{},{}", p.strength, p.accuracy, p.disentanglement);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        match lines.next() {
            Some(h) if h == MDC_CSV_HEADER => {}
            other => {
                return Err(Error::InvalidArgument(format!(
                    "expected header `{MDC_CSV_HEADER}`, found {other:?}"
                )))
            }
        }
        let mut points = Vec::new();
        for (n, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|_| {
                    Error::InvalidArgument(format!("row {}: `{s}` is not a number", n + 1))
                })
            };
            if fields.len() != 3 {
                return Err(Error::InvalidArgument(format!(
                    "row {}: expected 3 fields, got {}",
                    n + 1,
                    fields.len()
                )));
            }
            points.push(MdcPoint::new(parse(fields[0])?, parse(fields[1])?, parse(fields[2])?));
        }
        Self::new(points)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdsResult {
    /// Accumulated signed area after each point.
    pub accumulated: Vec<f64>,
    /// Maximum over the accumulated values.
    pub mds: f64,
}

/// Accumulated signed trapezoid area under the MDC, starting from `(0, 1)`;
/// the score is the largest accumulated value.
pub fn mds(curve: &MdcCurve) -> Result<MdsResult> {
    if curve.points.is_empty() {
        return Err(Error::InvalidArgument("mds needs a nonempty curve".into()));
    }
    let mut prev = (0.0, 1.0);
    let mut area = 0.0;
    let accumulated: Vec<f64> = curve
        .points
        .iter()
        .map(|p| {
            area += (p.accuracy - prev.0) * (p.disentanglement + prev.1) / 2.0;
            prev = (p.accuracy, p.disentanglement);
            area
        })
        .collect();
    let mds = accumulated.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(MdsResult { accumulated, mds })
}

/// Index of the point with the highest harmonic mean; ties go to the lower
/// strength.
pub fn select_best_strength(curve: &MdcCurve) -> Result<usize> {
    if curve.points.is_empty() {
        return Err(Error::InvalidArgument(
            "select_best_strength needs a nonempty curve".into(),
        ));
    }
    let mut best = 0;
    for (i, p) in curve.points.iter().enumerate().skip(1) {
        if p.harmonic_mean() > curve.points[best].harmonic_mean() {
            best = i;
        }
    }
    Ok(best)
}
