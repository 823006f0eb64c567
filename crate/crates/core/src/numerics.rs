//! Dense linear algebra, seeded sampling, power iteration, Adam and finite
//! differences.
//!
//! Everything here works on `f64`. Vectors are plain slices / `Vec<f64>`;
//! matrices use the row-major [`Matrix`] type.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "matrix shape {rows}x{cols} has an empty side"
            )));
        }
        check_dim("Matrix::from_vec", rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            check_dim("Matrix::from_rows", cols, row.len())?;
            data.extend_from_slice(row);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    /// Matrix with i.i.d. `N(0, std²)` entries.
    pub fn gaussian(rows: usize, cols: usize, std: f64, rng: &mut RngState) -> Self {
        let data = (0..rows * cols).map(|_| std * rng.normal()).collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[f64]) {
        for (i, &v) in values.iter().enumerate() {
            self[(i, j)] = v;
        }
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    /// Scales every row to unit Euclidean norm. Zero rows are left alone.
    pub fn normalize_rows(&mut self) {
        for i in 0..self.rows {
            let row = self.row_mut(i);
            let n = norm(row);
            if n > 0.0 {
                row.iter_mut().for_each(|x| *x /= n);
            }
        }
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        check_dim("Matrix::matmul", self.cols, other.rows)?;
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                for (o, &b) in out.row_mut(i).iter_mut().zip(src) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub(crate) fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    /// `self · v` without shape checks; callers guarantee `v.len() == cols`.
    pub(crate) fn mul_vec_unchecked(&self, v: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `selfᵀ · v` without shape checks; callers guarantee `v.len() == rows`.
    pub(crate) fn tmul_vec_unchecked(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        out
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn matvec(m: &Matrix, v: &[f64]) -> Result<Vec<f64>> {
    check_dim("matvec", m.cols, v.len())?;
    Ok(m.mul_vec_unchecked(v))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scaled(v: &[f64], s: f64) -> Vec<f64> {
    v.iter().map(|x| x * s).collect()
}

/// `y += s · x`
pub fn axpy(y: &mut [f64], s: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

pub fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Seeded PRNG stream.
///
/// The generator is PCG64 (`Lcg128Xsl64`: 128-bit LCG state, XSL-RR 64-bit
/// output) seeded from a `u64` through `SeedableRng::seed_from_u64`. Normal
/// variates come from the Ziggurat sampler of `rand_distr::StandardNormal`.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    inner: Pcg64,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: Pcg64::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives an independent stream, e.g. one per evaluation sample.
    pub fn fork(&mut self, salt: u64) -> RngState {
        let s = self.next_u64() ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        RngState::new(s)
    }

    pub fn next_u64(&mut self) -> u64 {
        rand::Rng::next_u64(&mut self.inner)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform index in `0..n`; `n` must be positive.
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Lemire-style widening multiply; bias is below 2^-64 * n.
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn unit_vector(&mut self, dim: usize) -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| self.normal()).collect();
            let n = norm(&v);
            if n > 1e-12 {
                return scaled(&v, 1.0 / n);
            }
        }
    }
}

pub fn sample_gaussian(rng: &mut RngState, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 {
        return Err(Error::InvalidArgument("sample_gaussian: dim must be ≥ 1".into()));
    }
    Ok((0..dim).map(|_| rng.normal()).collect())
}

/// Power iteration for the largest singular value of `m`.
///
/// `u0` is a left-singular estimate (length `m.rows()`). Each iteration does
/// `v = Mᵀu / ‖Mᵀu‖`, `u = Mv / ‖Mv‖` and reports `σ = ‖Mv‖`. Returns the
/// final `σ` and the updated `u`, which callers persist between calls.
pub fn power_iteration(m: &Matrix, u0: &[f64], iters: usize) -> Result<(f64, Vec<f64>)> {
    check_dim("power_iteration", m.rows, u0.len())?;
    if iters == 0 {
        return Err(Error::InvalidArgument("power_iteration: iters must be ≥ 1".into()));
    }
    let n0 = norm(u0);
    if n0 == 0.0 || !n0.is_finite() {
        return Err(Error::InvalidArgument(
            "power_iteration: u0 must be a nonzero finite vector".into(),
        ));
    }
    let mut u = scaled(u0, 1.0 / n0);
    let mut sigma = 0.0;
    for _ in 0..iters {
        let v = m.tmul_vec_unchecked(&u);
        let nv = norm(&v);
        if nv == 0.0 {
            // u is orthogonal to the range of M (or M is zero).
            return Ok((0.0, u));
        }
        let v = scaled(&v, 1.0 / nv);
        let mv = m.mul_vec_unchecked(&v);
        sigma = norm(&mv);
        if sigma == 0.0 {
            return Ok((0.0, u));
        }
        u = scaled(&mv, 1.0 / sigma);
    }
    Ok((sigma, u))
}

/// Solves `a x = b` by LU with partial pivoting.
///
/// Returns the solution and the 1-norm condition number `‖A‖₁‖A⁻¹‖₁`
/// (infinite when `a` is singular).
pub fn lu_solve(a: &Matrix, b: &[f64]) -> Result<(Vec<f64>, f64)> {
    if a.rows != a.cols {
        return Err(Error::InvalidArgument(format!(
            "lu_solve needs a square matrix, got {}x{}",
            a.rows, a.cols
        )));
    }
    check_dim("lu_solve", a.rows, b.len())?;
    let lu = a.to_nalgebra().lu();
    let Some(inv) = lu.try_inverse() else {
        return Ok((vec![f64::NAN; b.len()], f64::INFINITY));
    };
    let x = &inv * DVector::from_column_slice(b);
    let cond = one_norm(&a.to_nalgebra()) * one_norm(&inv);
    Ok((x.iter().copied().collect(), cond))
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Adam optimizer state over a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    /// Betas (0.9, 0.999), eps 1e-8.
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one bias-corrected Adam update to `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        check_dim("adam_step params", self.m.len(), params.len())?;
        check_dim("adam_step grads", self.m.len(), grads.len())?;
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Default step for [`finite_diff_jvp`].
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Central difference `(f(x + h·dir) − f(x − h·dir)) / 2h`.
pub fn finite_diff_jvp<F>(f: F, x: &[f64], dir: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "finite_diff_jvp: step must be positive, got {h}"
        )));
    }
    check_dim("finite_diff_jvp", x.len(), dir.len())?;
    let mut plus = x.to_vec();
    axpy(&mut plus, h, dir);
    let mut minus = x.to_vec();
    axpy(&mut minus, -h, dir);
    let fp = f(&plus)?;
    let fm = f(&minus)?;
    Ok(fp
        .iter()
        .zip(&fm)
        .map(|(a, b)| (a - b) / (2.0 * h))
        .collect())
}
