//! Latent navigation along the surrogate gradient field.
//!
//! For a map with `F(z, Φ(z)) = z`, moving the condition at a constant rate
//! `δc` requires the latent velocity
//!
//! ```text
//! H(z) = (I − ∂F/∂z)⁻¹ · ∂F/∂c · δc
//! ```
//!
//! [`navigate`] integrates `dz/dt = H(z)` with forward Euler, approximating
//! the inverse with a truncated Neumann series `Σⱼ (∂F/∂z)ʲ` (or an exact LU
//! solve), and stops once the oracle reports a condition within `ε` of the
//! target in the L∞ norm.

use serde::{Deserialize, Serialize};

use crate::auxmap::AuxMap;
use crate::error::{check_dim, Error, Result};
use crate::numerics::{self, Matrix};
use crate::oracle::Oracle;

/// Condition numbers of `I − ∂F/∂z` above this are treated as singular.
pub const SINGULAR_CONDITION: f64 = 1e12;
/// Navigation aborts once `‖z‖` exceeds this.
pub const DIVERGENCE_NORM: f64 = 1e6;

/// A differentiable conditional map `F(z, c)`.
pub trait ConditionalMap {
    fn latent_dim(&self) -> usize;
    fn condition_dim(&self) -> usize;
    fn jvp_z(&self, z: &[f64], c: &[f64], dir: &[f64]) -> Result<Vec<f64>>;
    fn jvp_c(&self, z: &[f64], c: &[f64], dir: &[f64]) -> Result<Vec<f64>>;

    fn jacobian_z(&self, z: &[f64], c: &[f64]) -> Result<Matrix> {
        let d = self.latent_dim();
        let mut jac = Matrix::zeros(d, d);
        let mut e = vec![0.0; d];
        for k in 0..d {
            e[k] = 1.0;
            jac.set_column(k, &self.jvp_z(z, c, &e)?);
            e[k] = 0.0;
        }
        Ok(jac)
    }
}

impl ConditionalMap for AuxMap {
    fn latent_dim(&self) -> usize {
        self.arch.d
    }

    fn condition_dim(&self) -> usize {
        self.arch.n_c
    }

    fn jvp_z(&self, z: &[f64], c: &[f64], dir: &[f64]) -> Result<Vec<f64>> {
        AuxMap::jvp_z(self, z, c, dir)
    }

    fn jvp_c(&self, z: &[f64], c: &[f64], dir: &[f64]) -> Result<Vec<f64>> {
        AuxMap::jvp_c(self, z, c, dir)
    }

    fn jacobian_z(&self, z: &[f64], c: &[f64]) -> Result<Matrix> {
        AuxMap::jacobian_z(self, z, c)
    }
}

/// `F(z, c) = A z + B c`, a closed-form rig for linear worlds.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub a: Matrix,
    pub b: Matrix,
}

impl AffineMap {
    pub fn new(a: Matrix, b: Matrix) -> Result<Self> {
        if a.rows() != a.cols() {
            return Err(Error::InvalidArgument("AffineMap latent block must be square".into()));
        }
        check_dim("AffineMap condition block", a.rows(), b.rows())?;
        Ok(Self { a, b })
    }

    pub fn forward(&self, z: &[f64], c: &[f64]) -> Result<Vec<f64>> {
        Ok(numerics::add(
            &numerics::matvec(&self.a, z)?,
            &numerics::matvec(&self.b, c)?,
        ))
    }
}

impl ConditionalMap for AffineMap {
    fn latent_dim(&self) -> usize {
        self.a.rows()
    }

    fn condition_dim(&self) -> usize {
        self.b.cols()
    }

    fn jvp_z(&self, _z: &[f64], _c: &[f64], dir: &[f64]) -> Result<Vec<f64>> {
        numerics::matvec(&self.a, dir)
    }

    fn jvp_c(&self, _z: &[f64], _c: &[f64], dir: &[f64]) -> Result<Vec<f64>> {
        numerics::matvec(&self.b, dir)
    }

    fn jacobian_z(&self, _z: &[f64], _c: &[f64]) -> Result<Matrix> {
        Ok(self.a.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InverseMode {
    Neumann,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavConfig {
    /// λ
    pub step_size: f64,
    /// m
    pub neumann_order: usize,
    /// n
    pub max_steps: usize,
    /// ε, L∞ distance in condition space.
    pub converge_tol: f64,
    /// Extrapolate `c⁽ⁱ⁾ = c₀ + i·δc` instead of querying the oracle.
    pub fast: bool,
    /// In fast mode, query the oracle once more at the endpoint.
    pub final_check: bool,
    pub inverse_mode: InverseMode,
}

impl Default for NavConfig {
    fn default() -> Self {
        Self {
            step_size: 0.2,
            neumann_order: 1,
            max_steps: 50,
            converge_tol: 0.05,
            fast: false,
            final_check: false,
            inverse_mode: InverseMode::Neumann,
        }
    }
}

impl NavConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::InvalidArgument("step size must be positive".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidArgument("max_steps must be ≥ 1".into()));
        }
        if !(self.converge_tol > 0.0) {
            return Err(Error::InvalidArgument("converge_tol must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavStep {
    pub i: usize,
    pub z: Vec<f64>,
    pub c: Vec<f64>,
    pub dz: Vec<f64>,
    /// `‖c − c₁‖∞`
    pub dist: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavTrace {
    pub config: NavConfig,
    pub c0: Vec<f64>,
    pub c1: Vec<f64>,
    pub converged: bool,
    pub oracle_calls: u64,
    /// `steps[0]` is the initial state with a zero displacement.
    pub steps: Vec<NavStep>,
    /// Oracle reading at the endpoint of a fast run with `final_check`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verified_c: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verified_dist: Option<f64>,
}

impl NavTrace {
    pub fn final_z(&self) -> &[f64] {
        &self.steps.last().expect("trace has an initial step").z
    }

    /// Number of Euler steps taken (excluding the initial state).
    pub fn executed_steps(&self) -> usize {
        self.steps.len() - 1
    }

    /// Best known condition at the endpoint: the verified reading when one
    /// exists, else the last traced condition.
    pub fn final_c(&self) -> &[f64] {
        match &self.verified_c {
            Some(c) => c,
            None => &self.steps.last().expect("trace has an initial step").c,
        }
    }

    pub fn final_dist(&self) -> f64 {
        self.verified_dist
            .unwrap_or_else(|| self.steps.last().expect("trace has an initial step").dist)
    }
}

/// Recorded oracle call count of a navigation.
pub fn count_oracle_calls(trace: &NavTrace) -> u64 {
    trace.oracle_calls
}

/// `Σ_{j=0..m} Xʲ v`, with `X` applied through `apply`.
pub fn neumann_apply<F>(mut apply: F, v: &[f64], m: usize) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let mut total = v.to_vec();
    let mut term = v.to_vec();
    for _ in 0..m {
        term = apply(&term)?;
        numerics::axpy(&mut total, 1.0, &term);
    }
    Ok(total)
}

/// Surrogate gradient field `(I − ∂F/∂z)⁻¹ ∂F/∂c · target_delta` at `(z, c)`.
pub fn surrogate_field<M: ConditionalMap + ?Sized>(
    f: &M,
    z: &[f64],
    c: &[f64],
    target_delta: &[f64],
    cfg: &NavConfig,
) -> Result<Vec<f64>> {
    check_dim("surrogate_field latent", f.latent_dim(), z.len())?;
    check_dim("surrogate_field condition", f.condition_dim(), c.len())?;
    check_dim("surrogate_field target delta", f.condition_dim(), target_delta.len())?;
    let v0 = f.jvp_c(z, c, target_delta)?;
    match cfg.inverse_mode {
        InverseMode::Neumann => neumann_apply(|dir| f.jvp_z(z, c, dir), &v0, cfg.neumann_order),
        InverseMode::Exact => {
            let jac = f.jacobian_z(z, c)?;
            let d = f.latent_dim();
            let mut system = Matrix::identity(d);
            for (s, j) in system.as_mut_slice().iter_mut().zip(jac.as_slice()) {
                *s -= j;
            }
            let (x, condition) = numerics::lu_solve(&system, &v0)?;
            if !(condition <= SINGULAR_CONDITION) {
                return Err(Error::SingularField { condition });
            }
            Ok(x)
        }
    }
}

/// Steers `z0` toward the condition `c1` (forward Euler on the
/// surrogate field with a constant condition increment `δc = λ(c₁ − c₀)`).
pub fn navigate<M: ConditionalMap + ?Sized>(
    f: &M,
    oracle: &Oracle,
    z0: &[f64],
    c1: &[f64],
    cfg: &NavConfig,
) -> Result<NavTrace> {
    cfg.validate()?;
    check_dim("navigate map/oracle latent", oracle.d(), f.latent_dim())?;
    check_dim("navigate map/oracle condition", oracle.n_c(), f.condition_dim())?;
    check_dim("navigate z0", f.latent_dim(), z0.len())?;
    check_dim("navigate c1", f.condition_dim(), c1.len())?;

    let mut calls = 0u64;
    let mut query = |z: &[f64]| {
        calls += 1;
        oracle.eval(z)
    };
    let c0 = query(z0)?;
    let delta_c = numerics::scaled(&numerics::sub(c1, &c0), cfg.step_size);
    let dist = |c: &[f64]| numerics::norm_inf(&numerics::sub(c, c1));

    let mut steps = vec![NavStep {
        i: 0,
        z: z0.to_vec(),
        c: c0.clone(),
        dz: vec![0.0; z0.len()],
        dist: dist(&c0),
    }];
    let mut converged = steps[0].dist <= cfg.converge_tol;
    let mut z = z0.to_vec();
    let mut c = c0.clone();

    let mut i = 1;
    while !converged && i <= cfg.max_steps {
        let dz = surrogate_field(f, &z, &c, &delta_c, cfg)?;
        numerics::axpy(&mut z, 1.0, &dz);
        if !numerics::all_finite(&z) || numerics::norm(&z) > DIVERGENCE_NORM {
            steps.push(NavStep {
                i,
                z: z.clone(),
                c: c.clone(),
                dz,
                dist: f64::NAN,
            });
            return Err(Error::NavigationDiverged {
                trace: Box::new(NavTrace {
                    config: cfg.clone(),
                    c0,
                    c1: c1.to_vec(),
                    converged: false,
                    oracle_calls: calls,
                    steps,
                    verified_c: None,
                    verified_dist: None,
                }),
            });
        }
        c = if cfg.fast {
            let mut e = c0.clone();
            numerics::axpy(&mut e, i as f64, &delta_c);
            e
        } else {
            query(&z)?
        };
        let d = dist(&c);
        converged = d <= cfg.converge_tol;
        steps.push(NavStep {
            i,
            z: z.clone(),
            c: c.clone(),
            dz,
            dist: d,
        });
        i += 1;
    }

    let (mut verified_c, mut verified_dist) = (None, None);
    if cfg.fast && cfg.final_check {
        let vc = query(&z)?;
        let vd = dist(&vc);
        converged &= vd <= cfg.converge_tol;
        verified_c = Some(vc);
        verified_dist = Some(vd);
    }

    Ok(NavTrace {
        config: cfg.clone(),
        c0,
        c1: c1.to_vec(),
        converged,
        oracle_calls: calls,
        steps,
        verified_c,
        verified_dist,
    })
}
