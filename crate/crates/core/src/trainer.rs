//! Pair datasets, MSE training of the auxiliary map, and the binary dataset
//! and checkpoint formats.
//!
//! Dataset file (`SGFD`, little-endian):
//!
//! ```text
//! magic "SGFD" | u32 version=1 | u32 d | u32 n_c | u64 count | [u8; 32] oracle digest
//! count × (d × f64 latent, n_c × f64 condition)
//! ```
//!
//! Checkpoint file (`SGFC`, little-endian):
//!
//! ```text
//! magic "SGFC" | u32 version=1 | u32 json_len | json_len bytes of JSON metadata
//! per block: weight, bias, sn_u, sigma, gamma_weight, gamma_bias, beta_weight, beta_bias
//! head:      weight, bias, sn_u, sigma
//! ```
//!
//! Every tensor is a run of `f64` in row-major order; shapes follow from the
//! architecture recorded in the metadata. Trailing bytes are rejected.

use std::fs;
use std::io::{self, Read};
use std::path::Path;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::auxmap::{ArchConfig, AuxMap, SnLinear};
use crate::error::{check_dim, Error, Result};
use crate::numerics::{self, AdamState, Matrix, RngState};
use crate::oracle::Oracle;

pub const DATASET_MAGIC: &[u8; 4] = b"SGFD";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SGFC";
pub const FORMAT_VERSION: u32 = 1;

/// Probe means of `‖∂F/∂c · u‖` below this flag a map that ignores `c`.
pub const DEGENERATE_PROBE_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub z: Vec<f64>,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairDataset {
    pub d: usize,
    pub n_c: usize,
    pub pairs: Vec<Pair>,
    pub oracle_digest: [u8; 32],
}

impl PairDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Number of trailing pairs held out from training (5%).
    pub fn held_out_len(&self) -> usize {
        self.pairs.len() / 20
    }

    pub fn train_split(&self) -> &[Pair] {
        &self.pairs[..self.pairs.len() - self.held_out_len()]
    }

    /// The held-out tail; falls back to the whole set when it is too small
    /// to split.
    pub fn held_out(&self) -> &[Pair] {
        match self.held_out_len() {
            0 => &self.pairs,
            n => &self.pairs[self.pairs.len() - n..],
        }
    }

    /// SGFD encoding.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(52 + self.pairs.len() * (self.d + self.n_c) * 8);
        buf.extend_from_slice(DATASET_MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.d as u32).to_le_bytes());
        buf.extend_from_slice(&(self.n_c as u32).to_le_bytes());
        buf.extend_from_slice(&(self.pairs.len() as u64).to_le_bytes());
        buf.extend_from_slice(&self.oracle_digest);
        for p in &self.pairs {
            push_f64s(&mut buf, &p.z);
            push_f64s(&mut buf, &p.c);
        }
        buf
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let mut r = ByteReader::new(&bytes, Error::CorruptDataset);
        if r.take(4)? != DATASET_MAGIC {
            return Err(Error::CorruptDataset("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::CorruptDataset(format!("unsupported version {version}")));
        }
        let d = r.u32()? as usize;
        let n_c = r.u32()? as usize;
        let count = r.u64()? as usize;
        let mut oracle_digest = [0u8; 32];
        oracle_digest.copy_from_slice(r.take(32)?);
        let expected = count
            .checked_mul(d + n_c)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::CorruptDataset("record count overflows".into()))?;
        if r.remaining() != expected {
            return Err(Error::CorruptDataset(format!(
                "body has {} bytes, header implies {expected}",
                r.remaining()
            )));
        }
        let mut pairs = Vec::with_capacity(count);
        for _ in 0..count {
            let z = r.f64s(d)?;
            let c = r.f64s(n_c)?;
            pairs.push(Pair { z, c });
        }
        Ok(Self {
            d,
            n_c,
            pairs,
            oracle_digest,
        })
    }
}

/// Samples `count` latents from `N(0, I)` and labels them with the oracle.
pub fn build_dataset(oracle: &Oracle, count: usize, rng: &mut RngState) -> Result<PairDataset> {
    if count == 0 {
        return Err(Error::InvalidArgument("dataset count must be ≥ 1".into()));
    }
    const CHUNK: usize = 512;
    let d = oracle.d();
    let mut pairs = Vec::with_capacity(count);
    let mut remaining = count;
    while remaining > 0 {
        let n = remaining.min(CHUNK);
        let zs = (0..n)
            .map(|_| numerics::sample_gaussian(rng, d))
            .collect::<Result<Vec<_>>>()?;
        let cs = oracle.eval_batch(&zs)?;
        pairs.extend(zs.into_iter().zip(cs).map(|(z, c)| Pair { z, c }));
        remaining -= n;
    }
    Ok(PairDataset {
        d,
        n_c: oracle.n_c(),
        pairs,
        oracle_digest: oracle.spec().digest(),
    })
}

/// Mean over the batch of `‖F(z, c) − z‖²`.
pub fn mse_loss(f: &AuxMap, batch: &[Pair]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("mse_loss needs a nonempty batch".into()));
    }
    let mut total = 0.0;
    for p in batch {
        let out = f.forward(&p.z, &p.c)?;
        total += out.iter().zip(&p.z).map(|(o, z)| (o - z) * (o - z)).sum::<f64>();
    }
    Ok(total / batch.len() as f64)
}

/// Mean of `‖F(z, c) − z‖ / ‖z‖` over the pairs.
pub fn mean_relative_error(f: &AuxMap, pairs: &[Pair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("mean_relative_error needs pairs".into()));
    }
    let mut total = 0.0;
    for p in pairs {
        let out = f.forward(&p.z, &p.c)?;
        total += numerics::norm(&numerics::sub(&out, &p.z)) / numerics::norm(&p.z).max(1e-12);
    }
    Ok(total / pairs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub sn_power_steps_per_update: usize,
    pub diag_interval: usize,
    /// Held-out points used for the diagnostic probes.
    pub probe_points: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            batch_size: 8,
            lr: 2e-4,
            seed: 0,
            sn_power_steps_per_update: 1,
            diag_interval: 1_000,
            probe_points: 16,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.iterations == 0
            || self.batch_size == 0
            || self.sn_power_steps_per_update == 0
            || self.diag_interval == 0
            || self.probe_points == 0
        {
            return Err(Error::InvalidArgument("training counts must be ≥ 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagRecord {
    pub iteration: usize,
    /// Mean minibatch loss since the previous record.
    pub train_loss: f64,
    /// Mean `‖∂F/∂c · u‖` over unit probe directions `u`.
    pub probe_jvp_c: f64,
    /// Mean power-iteration estimate of `‖∂F/∂z‖₂` at the probe points.
    pub probe_spectral_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<DiagRecord>,
    pub initial_held_out_loss: f64,
    pub held_out_loss: f64,
    pub held_out_relative_error: f64,
    /// Set when the final condition probe falls below
    /// [`DEGENERATE_PROBE_THRESHOLD`].
    pub degenerate: bool,
}

struct Probes {
    points: Vec<Pair>,
    dirs: Vec<Vec<f64>>,
}

impl Probes {
    fn measure(&self, f: &AuxMap) -> Result<(f64, f64)> {
        let mut jvp_c = 0.0;
        let mut radius = 0.0;
        for (p, u) in self.points.iter().zip(&self.dirs) {
            jvp_c += numerics::norm(&f.jvp_c(&p.z, &p.c, u)?);
            radius += f.spectral_radius_z(&p.z, &p.c, 30)?;
        }
        let n = self.points.len() as f64;
        Ok((jvp_c / n, radius / n))
    }
}

/// Trains a fresh map on `dataset`.
///
/// Each update refreshes the spectral normalization with
/// `sn_power_steps_per_update` power steps per FC layer, draws a batch with
/// replacement from the training split, and applies Adam to the gradient of
/// the batch-mean squared reconstruction error.
pub fn train(dataset: &PairDataset, arch: ArchConfig, cfg: &TrainConfig) -> Result<(AuxMap, TrainReport)> {
    cfg.validate()?;
    arch.validate()?;
    check_dim("train dataset latent", arch.d, dataset.d)?;
    check_dim("train dataset condition", arch.n_c, dataset.n_c)?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("cannot train on an empty dataset".into()));
    }

    let mut rng = RngState::new(cfg.seed);
    let mut init_rng = rng.fork(1);
    let mut batch_rng = rng.fork(2);
    let mut probe_rng = rng.fork(3);

    let mut f = AuxMap::init(arch, &mut init_rng)?;
    let train_split = dataset.train_split();
    let held_out = dataset.held_out();
    let probes = Probes {
        points: held_out.iter().take(cfg.probe_points).cloned().collect(),
        dirs: (0..cfg.probe_points.min(held_out.len()))
            .map(|_| probe_rng.unit_vector(arch.n_c))
            .collect(),
    };
    let initial_held_out_loss = mse_loss(&f, held_out)?;

    let mut adam = AdamState::new(f.n_params(), cfg.lr);
    let mut params = f.params();
    let mut grads = vec![0.0; params.len()];
    let mut records = Vec::new();
    let mut interval_loss = 0.0;
    let mut interval_len = 0usize;
    let inv_batch = 1.0 / cfg.batch_size as f64;

    for it in 1..=cfg.iterations {
        f.spectral_normalize(cfg.sn_power_steps_per_update);
        grads.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for _ in 0..cfg.batch_size {
            let p = &train_split[batch_rng.index(train_split.len())];
            f.accumulate_backward(&p.z, &p.c, &mut grads, |out| {
                let r = numerics::sub(out, &p.z);
                loss += numerics::dot(&r, &r);
                numerics::scaled(&r, 2.0 * inv_batch)
            });
        }
        loss *= inv_batch;
        if !loss.is_finite() || !numerics::all_finite(&grads) {
            return Err(Error::TrainingDiverged {
                iteration: it,
                last_finite: it - 1,
            });
        }
        adam.step(&mut params, &grads)?;
        f.set_params(&params)?;
        interval_loss += loss;
        interval_len += 1;

        if it % cfg.diag_interval == 0 || it == cfg.iterations {
            let (probe_jvp_c, probe_spectral_radius) = probes.measure(&f)?;
            let rec = DiagRecord {
                iteration: it,
                train_loss: interval_loss / interval_len as f64,
                probe_jvp_c,
                probe_spectral_radius,
            };
            debug!(
                "iter {}: loss {:.5e} |dF/dc| {:.4} |dF/dz| {:.4}",
                rec.iteration, rec.train_loss, rec.probe_jvp_c, rec.probe_spectral_radius
            );
            records.push(rec);
            interval_loss = 0.0;
            interval_len = 0;
        }
    }

    let held_out_loss = mse_loss(&f, held_out)?;
    if !held_out_loss.is_finite() {
        return Err(Error::TrainingDiverged {
            iteration: cfg.iterations,
            last_finite: cfg.iterations - 1,
        });
    }
    let degenerate = records
        .last()
        .is_some_and(|r| r.probe_jvp_c < DEGENERATE_PROBE_THRESHOLD);
    let report = TrainReport {
        records,
        initial_held_out_loss,
        held_out_loss,
        held_out_relative_error: mean_relative_error(&f, held_out)?,
        degenerate,
    };
    Ok((f, report))
}

/// Metadata stored in a checkpoint's JSON header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub arch: ArchConfig,
    pub seed: u64,
    #[serde(default)]
    pub oracle: Option<String>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub held_out_loss: Option<f64>,
}

impl CheckpointMeta {
    pub fn new(arch: ArchConfig, seed: u64) -> Self {
        Self {
            arch,
            seed,
            oracle: None,
            train: None,
            held_out_loss: None,
        }
    }
}

pub fn save_checkpoint(f: &AuxMap, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    write_atomic(path, &checkpoint_bytes(f, meta)?)?;
    Ok(())
}

pub fn checkpoint_bytes(f: &AuxMap, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    if meta.arch != f.arch {
        return Err(Error::InvalidArgument(
            "checkpoint metadata architecture differs from the map".into(),
        ));
    }
    let json = serde_json::to_vec(meta)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    let push_sn = |buf: &mut Vec<u8>, l: &SnLinear| {
        push_f64s(buf, l.weight.as_slice());
        push_f64s(buf, &l.bias);
        push_f64s(buf, &l.sn_u);
        push_f64s(buf, &[l.sigma]);
    };
    for b in &f.blocks {
        push_sn(&mut buf, &b.linear);
        push_f64s(&mut buf, b.gamma_weight.as_slice());
        push_f64s(&mut buf, &b.gamma_bias);
        push_f64s(&mut buf, b.beta_weight.as_slice());
        push_f64s(&mut buf, &b.beta_bias);
    }
    push_sn(&mut buf, &f.out);
    Ok(buf)
}

pub fn load_checkpoint(path: &Path) -> Result<(AuxMap, CheckpointMeta)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    parse_checkpoint(&bytes)
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<(AuxMap, CheckpointMeta)> {
    let mut r = ByteReader::new(bytes, Error::CorruptCheckpoint);
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::CorruptCheckpoint(format!("unsupported version {version}")));
    }
    let json_len = r.u32()? as usize;
    let meta: CheckpointMeta = serde_json::from_slice(r.take(json_len)?)
        .map_err(|e| Error::CorruptCheckpoint(format!("metadata: {e}")))?;
    let arch = meta.arch;
    arch.validate()
        .map_err(|e| Error::CorruptCheckpoint(format!("architecture: {e}")))?;

    let read_sn = |r: &mut ByteReader<'_>, rows: usize, cols: usize| -> Result<SnLinear> {
        let weight = Matrix::from_vec(rows, cols, r.f64s(rows * cols)?)
            .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        Ok(SnLinear {
            weight,
            bias: r.f64s(rows)?,
            sn_u: r.f64s(rows)?,
            sigma: r.f64s(1)?[0],
        })
    };
    let mut blocks = Vec::with_capacity(arch.n_blocks);
    for k in 0..arch.n_blocks {
        let in_dim = if k == 0 { arch.d } else { arch.hidden };
        let linear = read_sn(&mut r, arch.hidden, in_dim)?;
        let mat = |r: &mut ByteReader<'_>| {
            Matrix::from_vec(arch.hidden, arch.n_c, r.f64s(arch.hidden * arch.n_c)?)
                .map_err(|e| Error::CorruptCheckpoint(e.to_string()))
        };
        let gamma_weight = mat(&mut r)?;
        let gamma_bias = r.f64s(arch.hidden)?;
        let beta_weight = mat(&mut r)?;
        let beta_bias = r.f64s(arch.hidden)?;
        blocks.push(crate::auxmap::BlockParams {
            linear,
            gamma_weight,
            gamma_bias,
            beta_weight,
            beta_bias,
        });
    }
    let head_in = if arch.n_blocks == 0 { arch.d } else { arch.hidden };
    let out = read_sn(&mut r, arch.d, head_in)?;
    if r.remaining() != 0 {
        return Err(Error::CorruptCheckpoint(format!(
            "{} trailing bytes",
            r.remaining()
        )));
    }
    Ok((AuxMap { arch, blocks, out }, meta))
}

fn push_f64s(buf: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    err: fn(String) -> Error,
}

impl<'a> ByteReader<'a> {
    fn new(bytes: &'a [u8], err: fn(String) -> Error) -> Self {
        Self { bytes, pos: 0, err }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err((self.err)(format!(
                "truncated: wanted {n} bytes at offset {}, {} left",
                self.pos,
                self.remaining()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect())
    }
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension(match path.extension() {
        Some(ext) => format!("{}.tmp", ext.to_string_lossy()),
        None => "tmp".to_string(),
    });
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::OracleSpec;

    #[test]
    fn linear_dataset_is_exact() {
        let o = Oracle::build(OracleSpec::linear(2, 2.0)).unwrap();
        let ds = build_dataset(&o, 3, &mut RngState::new(1)).unwrap();
        assert_eq!(ds.len(), 3);
        for p in &ds.pairs {
            assert_eq!(p.c, vec![2.0 * p.z[0], 2.0 * p.z[1]]);
        }
        assert!(build_dataset(&o, 0, &mut RngState::new(1)).is_err());
    }

    #[test]
    fn dataset_is_seeded() {
        let o = Oracle::build(OracleSpec::sigmoid_attrs(4, 2, 1)).unwrap();
        let a = build_dataset(&o, 10, &mut RngState::new(9)).unwrap();
        let b = build_dataset(&o, 10, &mut RngState::new(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mse_on_zero_map() {
        let mut f = AuxMap::init(ArchConfig::new(2, 1, 1, 4), &mut RngState::new(0)).unwrap();
        f.set_params(&vec![0.0; f.n_params()]).unwrap();
        let batch = [Pair {
            z: vec![3.0, 4.0],
            c: vec![0.0],
        }];
        assert_eq!(mse_loss(&f, &batch).unwrap(), 25.0);
        assert!(mse_loss(&f, &[]).is_err());
    }

    #[test]
    fn held_out_split() {
        let pairs = (0..40)
            .map(|i| Pair {
                z: vec![i as f64],
                c: vec![0.0],
            })
            .collect();
        let ds = PairDataset {
            d: 1,
            n_c: 1,
            pairs,
            oracle_digest: [0; 32],
        };
        assert_eq!(ds.train_split().len(), 38);
        assert_eq!(ds.held_out()[0].z, vec![38.0]);
    }

    #[test]
    fn single_iteration_reports() {
        let o = Oracle::build(OracleSpec::sigmoid_attrs(4, 2, 1)).unwrap();
        let ds = build_dataset(&o, 50, &mut RngState::new(2)).unwrap();
        let cfg = TrainConfig {
            iterations: 1,
            ..TrainConfig::default()
        };
        let (_, report) = train(&ds, ArchConfig::new(4, 2, 2, 8), &cfg).unwrap();
        assert_eq!(report.records.len(), 1);
        assert_eq!(report.records[0].iteration, 1);
    }
}
