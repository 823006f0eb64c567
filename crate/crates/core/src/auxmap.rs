//! The auxiliary mapping `F: Z × C → Z`.
//!
//! `F` is a stack of conditional linear blocks. Each block applies a
//! spectrally normalized fully-connected layer, then AdaIN whose scale and
//! shift are affine functions of the condition, then LeakyReLU. A final
//! spectrally normalized linear head maps back to the latent dimension.
//!
//! Besides the forward pass the map exposes forward-mode directional
//! derivatives in `z` and `c` (used by the navigator) and a reverse pass over
//! the raw parameters (used by the trainer).

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numerics::{self, Matrix, RngState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub d: usize,
    pub n_c: usize,
    pub n_blocks: usize,
    pub hidden: usize,
    pub leaky_slope: f64,
    pub adain_eps: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            d: 16,
            n_c: 4,
            n_blocks: 6,
            hidden: 64,
            leaky_slope: 0.2,
            adain_eps: 1e-5,
        }
    }
}

impl ArchConfig {
    pub fn new(d: usize, n_c: usize, n_blocks: usize, hidden: usize) -> Self {
        Self {
            d,
            n_c,
            n_blocks,
            hidden,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n_c == 0 || self.hidden == 0 {
            return Err(Error::InvalidArgument(format!(
                "architecture dims must be ≥ 1 (d={}, n_c={}, hidden={})",
                self.d, self.n_c, self.hidden
            )));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "leaky_slope must lie in (0,1), got {}",
                self.leaky_slope
            )));
        }
        if !(self.adain_eps > 0.0) {
            return Err(Error::InvalidArgument("adain_eps must be positive".into()));
        }
        Ok(())
    }
}

/// Fully-connected layer divided by a power-iteration estimate of its
/// largest singular value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnLinear {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    /// Persistent left-singular estimate, unit norm.
    pub sn_u: Vec<f64>,
    /// Cached singular value estimate from the last power step.
    pub sigma: f64,
}

impl SnLinear {
    fn init(out_dim: usize, in_dim: usize, rng: &mut RngState) -> Self {
        let weight = Matrix::gaussian(out_dim, in_dim, 1.0 / (in_dim as f64).sqrt(), rng);
        let mut layer = Self {
            weight,
            bias: vec![0.0; out_dim],
            sn_u: rng.unit_vector(out_dim),
            sigma: 1.0,
        };
        layer.power_step(20);
        layer
    }

    /// Runs `steps` power iterations, updating `sn_u` and `sigma`.
    pub fn power_step(&mut self, steps: usize) {
        if steps == 0 {
            return;
        }
        // sn_u is kept unit-norm and nonzero, so this cannot fail.
        if let Ok((sigma, u)) = numerics::power_iteration(&self.weight, &self.sn_u, steps) {
            self.sigma = sigma;
            self.sn_u = u;
        }
    }

    /// Multiplier applied to the raw weight.
    pub fn inv_sigma(&self) -> f64 {
        if self.sigma > 0.0 {
            1.0 / self.sigma
        } else {
            0.0
        }
    }

    pub fn normalized_weight(&self) -> Matrix {
        self.weight.scale(self.inv_sigma())
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let s = self.inv_sigma();
        let mut y = self.weight.mul_vec_unchecked(x);
        for (yi, b) in y.iter_mut().zip(&self.bias) {
            *yi = *yi * s + b;
        }
        y
    }

    fn apply_linear(&self, dx: &[f64]) -> Vec<f64> {
        numerics::scaled(&self.weight.mul_vec_unchecked(dx), self.inv_sigma())
    }

    fn apply_transpose(&self, g: &[f64]) -> Vec<f64> {
        numerics::scaled(&self.weight.tmul_vec_unchecked(g), self.inv_sigma())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockParams {
    pub linear: SnLinear,
    pub gamma_weight: Matrix,
    pub gamma_bias: Vec<f64>,
    pub beta_weight: Matrix,
    pub beta_bias: Vec<f64>,
}

impl BlockParams {
    pub fn gamma(&self, c: &[f64]) -> Vec<f64> {
        numerics::add(&self.gamma_weight.mul_vec_unchecked(c), &self.gamma_bias)
    }

    pub fn beta(&self, c: &[f64]) -> Vec<f64> {
        numerics::add(&self.beta_weight.mul_vec_unchecked(c), &self.beta_bias)
    }
}

/// Flat gradient vector laid out like [`AuxMap::params`].
pub type ParamGrads = Vec<f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxMap {
    pub arch: ArchConfig,
    pub blocks: Vec<BlockParams>,
    pub out: SnLinear,
}

/// AdaIN: `γ ⊙ (x − μ) / √(var + eps) + β`, statistics over the features.
pub fn adain(x: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Vec<f64> {
    let (n, _) = instance_normalize(x, eps);
    n.iter()
        .zip(gamma)
        .zip(beta)
        .map(|((ni, g), b)| g * ni + b)
        .collect()
}

/// Returns the normalized features and `√(var + eps)`.
pub fn instance_normalize(x: &[f64], eps: f64) -> (Vec<f64>, f64) {
    let len = x.len() as f64;
    let mean = x.iter().sum::<f64>() / len;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / len;
    let s = (var + eps).sqrt();
    (x.iter().map(|v| (v - mean) / s).collect(), s)
}

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

/// Derivative of LeakyReLU; at exactly zero the positive slope 1 is used.
pub fn leaky_relu_grad(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        slope
    }
}

struct BlockCache {
    input: Vec<f64>,
    normalized: Vec<f64>,
    std: f64,
    gamma: Vec<f64>,
    pre_act: Vec<f64>,
}

impl AuxMap {
    pub fn init(arch: ArchConfig, rng: &mut RngState) -> Result<Self> {
        arch.validate()?;
        let cond_std = 0.05 / (arch.n_c as f64).sqrt();
        let blocks = (0..arch.n_blocks)
            .map(|k| {
                let in_dim = if k == 0 { arch.d } else { arch.hidden };
                BlockParams {
                    linear: SnLinear::init(arch.hidden, in_dim, rng),
                    gamma_weight: Matrix::gaussian(arch.hidden, arch.n_c, cond_std, rng),
                    gamma_bias: vec![1.0; arch.hidden],
                    beta_weight: Matrix::gaussian(arch.hidden, arch.n_c, cond_std, rng),
                    beta_bias: vec![0.0; arch.hidden],
                }
            })
            .collect();
        let head_in = if arch.n_blocks == 0 { arch.d } else { arch.hidden };
        let out = SnLinear::init(arch.d, head_in, rng);
        Ok(Self { arch, blocks, out })
    }

    /// Width of the features entering the output head.
    pub fn head_input_dim(&self) -> usize {
        if self.blocks.is_empty() {
            self.arch.d
        } else {
            self.arch.hidden
        }
    }

    fn check_inputs(&self, z: &[f64], c: &[f64]) -> Result<()> {
        check_dim("AuxMap latent", self.arch.d, z.len())?;
        check_dim("AuxMap condition", self.arch.n_c, c.len())
    }

    pub fn forward(&self, z: &[f64], c: &[f64]) -> Result<Vec<f64>> {
        self.check_inputs(z, c)?;
        let (out, _) = self.forward_cached(z, c, false);
        Ok(out)
    }

    /// Smallest `|y|` over all LeakyReLU inputs at `(z, c)`; finite-difference
    /// checks with step `h` are only meaningful when this is well above `h`.
    pub fn kink_margin(&self, z: &[f64], c: &[f64]) -> Result<f64> {
        self.check_inputs(z, c)?;
        let (_, caches) = self.forward_cached(z, c, true);
        Ok(caches
            .iter()
            .flat_map(|k| k.pre_act.iter())
            .fold(f64::INFINITY, |m, y| m.min(y.abs())))
    }

    fn forward_cached(&self, z: &[f64], c: &[f64], keep: bool) -> (Vec<f64>, Vec<BlockCache>) {
        let slope = self.arch.leaky_slope;
        let mut caches = Vec::with_capacity(if keep { self.blocks.len() } else { 0 });
        let mut h = z.to_vec();
        for block in &self.blocks {
            let x = block.linear.apply(&h);
            let (normalized, std) = instance_normalize(&x, self.arch.adain_eps);
            let gamma = block.gamma(c);
            let beta = block.beta(c);
            let pre_act: Vec<f64> = normalized
                .iter()
                .zip(&gamma)
                .zip(&beta)
                .map(|((n, g), b)| g * n + b)
                .collect();
            let next = pre_act.iter().map(|&y| leaky_relu(y, slope)).collect();
            if keep {
                caches.push(BlockCache {
                    input: std::mem::replace(&mut h, next),
                    normalized,
                    std,
                    gamma,
                    pre_act,
                });
            } else {
                h = next;
            }
        }
        let out = self.out.apply(&h);
        if keep {
            caches.push(BlockCache {
                input: h,
                normalized: Vec::new(),
                std: 0.0,
                gamma: Vec::new(),
                pre_act: Vec::new(),
            });
        }
        (out, caches)
    }

    /// Joint directional derivative `∂F/∂z · dz + ∂F/∂c · dc`.
    pub fn jvp(&self, z: &[f64], c: &[f64], dz: &[f64], dc: &[f64]) -> Result<Vec<f64>> {
        self.check_inputs(z, c)?;
        check_dim("AuxMap jvp latent direction", self.arch.d, dz.len())?;
        check_dim("AuxMap jvp condition direction", self.arch.n_c, dc.len())?;
        let slope = self.arch.leaky_slope;
        let mut h = z.to_vec();
        let mut dh = dz.to_vec();
        for block in &self.blocks {
            let x = block.linear.apply(&h);
            let dx = block.linear.apply_linear(&dh);
            let len = x.len() as f64;
            let (n, s) = instance_normalize(&x, self.arch.adain_eps);
            let dmean = dx.iter().sum::<f64>() / len;
            // d var = 2·mean((x − μ)·dx); with n = (x − μ)/s this is 2·s·mean(n·dx)
            let n_dx = numerics::dot(&n, &dx) / len;
            let dn: Vec<f64> = dx
                .iter()
                .zip(&n)
                .map(|(dxi, ni)| (dxi - dmean) / s - ni * n_dx / s)
                .collect();
            let gamma = block.gamma(c);
            let beta = block.beta(c);
            let dgamma = block.gamma_weight.mul_vec_unchecked(dc);
            let dbeta = block.beta_weight.mul_vec_unchecked(dc);
            let mut next = Vec::with_capacity(n.len());
            let mut dnext = Vec::with_capacity(n.len());
            for i in 0..n.len() {
                let y = gamma[i] * n[i] + beta[i];
                let dy = dgamma[i] * n[i] + gamma[i] * dn[i] + dbeta[i];
                next.push(leaky_relu(y, slope));
                dnext.push(leaky_relu_grad(y, slope) * dy);
            }
            h = next;
            dh = dnext;
        }
        Ok(self.out.apply_linear(&dh))
    }

    /// `∂F/∂z (z, c) · dir`.
    pub fn jvp_z(&self, z: &[f64], c: &[f64], dir: &[f64]) -> Result<Vec<f64>> {
        self.jvp(z, c, dir, &vec![0.0; self.arch.n_c])
    }

    /// `∂F/∂c (z, c) · dir`.
    pub fn jvp_c(&self, z: &[f64], c: &[f64], dir: &[f64]) -> Result<Vec<f64>> {
        self.jvp(z, c, &vec![0.0; self.arch.d], dir)
    }

    /// `d × d` Jacobian in `z`, assembled column by column from [`Self::jvp_z`].
    pub fn jacobian_z(&self, z: &[f64], c: &[f64]) -> Result<Matrix> {
        let d = self.arch.d;
        let mut jac = Matrix::zeros(d, d);
        let mut e = vec![0.0; d];
        for k in 0..d {
            e[k] = 1.0;
            let col = self.jvp_z(z, c, &e)?;
            jac.set_column(k, &col);
            e[k] = 0.0;
        }
        Ok(jac)
    }

    /// Power-iteration estimate of `‖∂F/∂z‖₂`, an upper bound on the
    /// spectral radius of the z-Jacobian.
    pub fn spectral_radius_z(&self, z: &[f64], c: &[f64], iters: usize) -> Result<f64> {
        let jac = self.jacobian_z(z, c)?;
        let u0 = vec![1.0 / (self.arch.d as f64).sqrt(); self.arch.d];
        let (sigma, _) = numerics::power_iteration(&jac, &u0, iters)?;
        Ok(sigma)
    }

    /// Gradient of `⟨F(z, c), out_grad⟩` with respect to every raw parameter,
    /// in [`Self::params`] order. Spectral normalization enters as a constant
    /// `1/σ` scaling.
    pub fn backward(&self, z: &[f64], c: &[f64], out_grad: &[f64]) -> Result<ParamGrads> {
        self.check_inputs(z, c)?;
        check_dim("AuxMap backward out_grad", self.arch.d, out_grad.len())?;
        let mut grads = vec![0.0; self.n_params()];
        self.accumulate_backward(z, c, &mut grads, |_| out_grad.to_vec());
        Ok(grads)
    }

    /// Runs the forward pass, asks `out_grad_of` for the output cotangent
    /// given the output, and adds the resulting parameter gradient into
    /// `grads`. Returns the forward output. Shapes must already be validated.
    pub(crate) fn accumulate_backward<G>(
        &self,
        z: &[f64],
        c: &[f64],
        grads: &mut [f64],
        out_grad_of: G,
    ) -> Vec<f64>
    where
        G: FnOnce(&[f64]) -> Vec<f64>,
    {
        let slope = self.arch.leaky_slope;
        let (output, caches) = self.forward_cached(z, c, true);
        let out_grad = &out_grad_of(&output)[..];
        let offsets = self.block_offsets();
        let head = &caches[caches.len() - 1];

        // output head
        let mut off = offsets[self.blocks.len()];
        let head_in = head.input.len();
        accumulate_outer(
            &mut grads[off..off + self.arch.d * head_in],
            out_grad,
            &head.input,
            self.out.inv_sigma(),
        );
        off += self.arch.d * head_in;
        numerics::axpy(&mut grads[off..off + self.arch.d], 1.0, out_grad);
        let mut gh = self.out.apply_transpose(out_grad);

        for (k, block) in self.blocks.iter().enumerate().rev() {
            let cache = &caches[k];
            let hid = cache.normalized.len();
            let in_dim = cache.input.len();
            let gy: Vec<f64> = gh
                .iter()
                .zip(&cache.pre_act)
                .map(|(g, &y)| g * leaky_relu_grad(y, slope))
                .collect();
            let ggamma: Vec<f64> = gy.iter().zip(&cache.normalized).map(|(g, n)| g * n).collect();
            let gn: Vec<f64> = gy.iter().zip(&cache.gamma).map(|(g, gm)| g * gm).collect();
            let len = hid as f64;
            let mean_gn = gn.iter().sum::<f64>() / len;
            let mean_gn_n = numerics::dot(&gn, &cache.normalized) / len;
            let gx: Vec<f64> = gn
                .iter()
                .zip(&cache.normalized)
                .map(|(g, n)| (g - mean_gn - n * mean_gn_n) / cache.std)
                .collect();

            let mut o = offsets[k];
            accumulate_outer(
                &mut grads[o..o + hid * in_dim],
                &gx,
                &cache.input,
                block.linear.inv_sigma(),
            );
            o += hid * in_dim;
            numerics::axpy(&mut grads[o..o + hid], 1.0, &gx);
            o += hid;
            let n_c = self.arch.n_c;
            accumulate_outer(&mut grads[o..o + hid * n_c], &ggamma, c, 1.0);
            o += hid * n_c;
            numerics::axpy(&mut grads[o..o + hid], 1.0, &ggamma);
            o += hid;
            accumulate_outer(&mut grads[o..o + hid * n_c], &gy, c, 1.0);
            o += hid * n_c;
            numerics::axpy(&mut grads[o..o + hid], 1.0, &gy);

            if k > 0 {
                gh = block.linear.apply_transpose(&gx);
            }
        }
        output
    }

    /// Start offset of each block's parameters, plus the head's at the end.
    fn block_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.blocks.len() + 1);
        let mut acc = 0;
        for b in &self.blocks {
            offsets.push(acc);
            acc += b.linear.weight.as_slice().len()
                + b.linear.bias.len()
                + b.gamma_weight.as_slice().len()
                + b.gamma_bias.len()
                + b.beta_weight.as_slice().len()
                + b.beta_bias.len();
        }
        offsets.push(acc);
        offsets
    }

    /// Trainable parameter slices in canonical order: per block
    /// `weight, bias, gamma_weight, gamma_bias, beta_weight, beta_bias`,
    /// then the head's `weight, bias`.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(6 * self.blocks.len() + 2);
        for b in &self.blocks {
            out.push(b.linear.weight.as_slice());
            out.push(&b.linear.bias[..]);
            out.push(b.gamma_weight.as_slice());
            out.push(&b.gamma_bias[..]);
            out.push(b.beta_weight.as_slice());
            out.push(&b.beta_bias[..]);
        }
        out.push(self.out.weight.as_slice());
        out.push(&self.out.bias[..]);
        out
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(6 * self.blocks.len() + 2);
        for b in &mut self.blocks {
            out.push(b.linear.weight.as_mut_slice());
            out.push(&mut b.linear.bias[..]);
            out.push(b.gamma_weight.as_mut_slice());
            out.push(&mut b.gamma_bias[..]);
            out.push(b.beta_weight.as_mut_slice());
            out.push(&mut b.beta_bias[..]);
        }
        out.push(self.out.weight.as_mut_slice());
        out.push(&mut self.out.bias[..]);
        out
    }

    pub fn n_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        self.param_slices().concat()
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        check_dim("AuxMap::set_params", self.n_params(), flat.len())?;
        let mut rest = flat;
        for slice in self.param_slices_mut() {
            let (head, tail) = rest.split_at(slice.len());
            slice.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    /// Every spectrally normalized layer, blocks first then the head.
    pub fn sn_layers(&self) -> impl Iterator<Item = &SnLinear> {
        self.blocks.iter().map(|b| &b.linear).chain(std::iter::once(&self.out))
    }

    /// Advances the persistent power iteration of every FC layer by
    /// `power_steps` and refreshes the cached `σ`.
    pub fn spectral_normalize(&mut self, power_steps: usize) {
        for b in &mut self.blocks {
            b.linear.power_step(power_steps);
        }
        self.out.power_step(power_steps);
    }
}

fn accumulate_outer(dst: &mut [f64], a: &[f64], b: &[f64], scale: f64) {
    let cols = b.len();
    for (i, &ai) in a.iter().enumerate() {
        let s = ai * scale;
        if s == 0.0 {
            continue;
        }
        for (o, &bj) in dst[i * cols..(i + 1) * cols].iter_mut().zip(b) {
            *o += s * bj;
        }
    }
}
