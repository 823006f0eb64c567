//! Forward-only condition oracles `Φ: Z → C`.
//!
//! Synthetic worlds are analytic and seeded; they also expose their Jacobian
//! for the latent-optimization baseline. The external kind talks to a child
//! process over line-delimited JSON:
//!
//! ```text
//! child → parent (first line)  {"protocol":1,"d":<int>,"n_c":<int>}
//! parent → child               {"id":<int>,"z":[[f64,...],...]}
//! child → parent               {"id":<int>,"c":[[f64,...],...]}
//! ```
//!
//! The parent shuts the child down by closing its stdin.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_dim, Error, Result};
use crate::numerics::{self, Matrix, RngState};

pub const PROTOCOL_VERSION: u32 = 1;

/// Default sharpness of the sigmoid-attrs world. Keeps attribute scores off
/// the saturated tails for standard normal latents.
pub const DEFAULT_SIGMOID_SCALE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleKind {
    Linear,
    SigmoidAttrs,
    TanhMix,
    KeypointBumps,
    External,
}

impl OracleKind {
    pub fn name(self) -> &'static str {
        match self {
            OracleKind::Linear => "linear",
            OracleKind::SigmoidAttrs => "sigmoid-attrs",
            OracleKind::TanhMix => "tanh-mix",
            OracleKind::KeypointBumps => "keypoint-bumps",
            OracleKind::External => "external",
        }
    }
}

impl FromStr for OracleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "linear" => OracleKind::Linear,
            "sigmoid-attrs" => OracleKind::SigmoidAttrs,
            "tanh-mix" => OracleKind::TanhMix,
            "keypoint-bumps" => OracleKind::KeypointBumps,
            "external" => OracleKind::External,
            other => {
                return Err(Error::InvalidArgument(format!("unknown oracle kind `{other}`")))
            }
        })
    }
}

/// Everything needed to rebuild an oracle.
///
/// The string form is `kind:key=val,key=val`. For the external kind the
/// command follows `cmd=` verbatim and may contain commas, so it must be the
/// last key: `external:d=16,nc=4,cmd=python3 oracle.py`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSpec {
    pub kind: OracleKind,
    pub d: usize,
    pub n_c: usize,
    pub seed: u64,
    /// Kind-specific parameters (scales, offsets, `cmd`).
    pub params: BTreeMap<String, String>,
}

impl OracleSpec {
    pub fn new(kind: OracleKind, d: usize, n_c: usize, seed: u64) -> Self {
        Self {
            kind,
            d,
            n_c,
            seed,
            params: BTreeMap::new(),
        }
    }

    pub fn with_param(mut self, key: &str, value: impl ToString) -> Self {
        self.params.insert(key.to_string(), value.to_string());
        self
    }

    pub fn linear(d: usize, scale: f64) -> Self {
        Self::new(OracleKind::Linear, d, d, 0).with_param("scale", scale)
    }

    pub fn sigmoid_attrs(d: usize, n_c: usize, seed: u64) -> Self {
        Self::new(OracleKind::SigmoidAttrs, d, n_c, seed)
    }

    pub fn external(cmd: &str, d: usize, n_c: usize) -> Self {
        Self::new(OracleKind::External, d, n_c, 0).with_param("cmd", cmd)
    }

    fn param_f64(&self, key: &str, default: f64) -> Result<f64> {
        match self.params.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| {
                Error::InvalidArgument(format!("oracle parameter {key}={v} is not a number"))
            }),
        }
    }

    fn param_usize(&self, key: &str, default: usize) -> Result<usize> {
        match self.params.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| {
                Error::InvalidArgument(format!("oracle parameter {key}={v} is not a count"))
            }),
        }
    }

    /// SHA-256 of the canonical string form.
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.to_string().as_bytes()).into()
    }

    fn validate(&self) -> Result<()> {
        if self.kind != OracleKind::External && (self.d == 0 || self.n_c == 0) {
            return Err(Error::InvalidArgument(format!(
                "oracle dims must be ≥ 1 (d={}, n_c={})",
                self.d, self.n_c
            )));
        }
        if self.kind == OracleKind::Linear && self.n_c > self.d {
            return Err(Error::InvalidArgument(
                "linear oracle needs n_c ≤ d".to_string(),
            ));
        }
        Ok(())
    }
}

impl fmt::Display for OracleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:d={},nc={},seed={}", self.kind.name(), self.d, self.n_c, self.seed)?;
        for (k, v) in self.params.iter().filter(|(k, _)| k.as_str() != "cmd") {
            write!(f, ",{k}={v}")?;
        }
        if let Some(cmd) = self.params.get("cmd") {
            write!(f, ",cmd={cmd}")?;
        }
        Ok(())
    }
}

impl FromStr for OracleSpec {
    type Err = Error;

    /// Unspecified `d`, `nc` and `seed` default to 16, 4 and 0, except that a
    /// linear world defaults `nc` to `d`. External oracles default to 0 dims,
    /// i.e. whatever the process advertises.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let kind: OracleKind = kind.trim().parse()?;
        let (d, n_c) = if kind == OracleKind::External { (0, 0) } else { (16, 4) };
        let mut spec = OracleSpec::new(kind, d, n_c, 0);
        let mut nc_given = false;
        let (kv, cmd) = match rest.find("cmd=") {
            Some(pos) => (&rest[..pos], Some(&rest[pos + 4..])),
            None => (rest, None),
        };
        for item in kv.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (k, v) = item.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("oracle parameter `{item}` is not key=value"))
            })?;
            let bad = |_| Error::InvalidArgument(format!("bad value for oracle `{k}`: {v}"));
            match k {
                "d" => spec.d = v.parse().map_err(bad)?,
                "nc" | "n_c" => {
                    spec.n_c = v.parse().map_err(bad)?;
                    nc_given = true;
                }
                "seed" => spec.seed = v.parse().map_err(bad)?,
                _ => {
                    spec.params.insert(k.to_string(), v.to_string());
                }
            }
        }
        if kind == OracleKind::Linear && !nc_given {
            spec.n_c = spec.d;
        }
        if let Some(cmd) = cmd {
            spec.params.insert("cmd".into(), cmd.to_string());
        }
        if kind == OracleKind::External && !spec.params.contains_key("cmd") {
            return Err(Error::InvalidArgument("external oracle needs cmd=...".into()));
        }
        Ok(spec)
    }
}

enum World {
    Linear {
        gamma: Matrix,
    },
    SigmoidAttrs {
        a: Matrix,
        b: Vec<f64>,
    },
    TanhMix {
        inner: Matrix,
        outer: Matrix,
    },
    KeypointBumps {
        a: Matrix,
        b: Matrix,
        amp: f64,
    },
    External(Mutex<ExternalProcess>),
}

/// A built oracle plus its call counter.
///
/// Synthetic oracles are read-only after construction and may be shared
/// across threads. External oracles serialize access to their child process.
pub struct Oracle {
    spec: OracleSpec,
    calls: AtomicU64,
    world: World,
}

impl fmt::Debug for Oracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Oracle")
            .field("spec", &self.spec.to_string())
            .field("calls", &self.call_count())
            .finish()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn normalized_gaussian(rows: usize, cols: usize, scale: f64, rng: &mut RngState) -> Matrix {
    let mut m = Matrix::gaussian(rows, cols, 1.0, rng);
    m.normalize_rows();
    m.scale(scale)
}

impl Oracle {
    pub fn build(mut spec: OracleSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = RngState::new(spec.seed);
        let (d, n_c) = (spec.d, spec.n_c);
        let world = match spec.kind {
            OracleKind::Linear => {
                let scale = spec.param_f64("scale", 1.0)?;
                let mut gamma = Matrix::zeros(n_c, d);
                for i in 0..n_c {
                    gamma[(i, i)] = scale;
                }
                World::Linear { gamma }
            }
            OracleKind::SigmoidAttrs => {
                let scale = spec.param_f64("scale", DEFAULT_SIGMOID_SCALE)?;
                let bias = spec.param_f64("bias", 0.0)?;
                let a = normalized_gaussian(n_c, d, scale, &mut rng);
                let b = (0..n_c).map(|_| bias * rng.normal()).collect();
                World::SigmoidAttrs { a, b }
            }
            OracleKind::TanhMix => {
                let hidden = spec.param_usize("hidden", d)?;
                if hidden == 0 {
                    return Err(Error::InvalidArgument("tanh-mix hidden must be ≥ 1".into()));
                }
                let inner = normalized_gaussian(hidden, d, spec.param_f64("scale_in", 1.5)?, &mut rng);
                let outer =
                    normalized_gaussian(n_c, hidden, spec.param_f64("scale_out", 3.0)?, &mut rng);
                World::TanhMix { inner, outer }
            }
            OracleKind::KeypointBumps => {
                let a = normalized_gaussian(n_c, d, 1.0, &mut rng);
                let b = normalized_gaussian(n_c, d, spec.param_f64("freq", 1.0)?, &mut rng);
                World::KeypointBumps {
                    a,
                    b,
                    amp: spec.param_f64("amp", 0.5)?,
                }
            }
            OracleKind::External => {
                let cmd = spec.params.get("cmd").cloned().unwrap_or_default();
                let proc = ExternalProcess::spawn(&cmd, spec.d, spec.n_c)?;
                spec.d = proc.d;
                spec.n_c = proc.n_c;
                World::External(Mutex::new(proc))
            }
        };
        Ok(Self {
            spec,
            calls: AtomicU64::new(0),
            world,
        })
    }

    pub fn spec(&self) -> &OracleSpec {
        &self.spec
    }

    pub fn d(&self) -> usize {
        self.spec.d
    }

    pub fn n_c(&self) -> usize {
        self.spec.n_c
    }

    /// Total evaluations issued through this handle.
    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn supports_grad(&self) -> bool {
        self.spec.kind != OracleKind::External
    }

    /// Evaluates `Φ(z)`; counts one call.
    pub fn eval(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim("oracle eval", self.spec.d, z.len())?;
        self.calls.fetch_add(1, Ordering::Relaxed);
        match &self.world {
            World::External(proc) => {
                let mut rows = lock(proc)?.request(std::slice::from_ref(&z.to_vec()))?;
                Ok(rows.pop().unwrap_or_default())
            }
            world => Ok(eval_synthetic(world, z)),
        }
    }

    /// Evaluates a batch; counts one call per row. External oracles receive
    /// the whole batch in one request.
    pub fn eval_batch(&self, zs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        for z in zs {
            check_dim("oracle eval_batch", self.spec.d, z.len())?;
        }
        if zs.is_empty() {
            return Ok(Vec::new());
        }
        self.calls.fetch_add(zs.len() as u64, Ordering::Relaxed);
        match &self.world {
            World::External(proc) => lock(proc)?.request(zs),
            world => Ok(zs.iter().map(|z| eval_synthetic(world, z)).collect()),
        }
    }

    /// Analytic Jacobian `∂Φ/∂z` (`n_c × d`). Does not count as a call.
    pub fn eval_grad(&self, z: &[f64]) -> Result<Matrix> {
        check_dim("oracle eval_grad", self.spec.d, z.len())?;
        let jac = match &self.world {
            World::Linear { gamma } => gamma.clone(),
            World::SigmoidAttrs { a, b } => {
                let mut j = a.clone();
                for i in 0..a.rows() {
                    let s = sigmoid(numerics::dot(a.row(i), z) + b[i]);
                    j.row_mut(i).iter_mut().for_each(|x| *x *= s * (1.0 - s));
                }
                j
            }
            World::TanhMix { inner, outer } => {
                let pre = inner.mul_vec_unchecked(z);
                let t: Vec<f64> = pre.iter().map(|x| x.tanh()).collect();
                let mut mixed = outer.clone();
                for i in 0..outer.rows() {
                    let s = sigmoid(numerics::dot(outer.row(i), &t));
                    for (k, x) in mixed.row_mut(i).iter_mut().enumerate() {
                        *x *= s * (1.0 - s) * (1.0 - t[k] * t[k]);
                    }
                }
                mixed.matmul(inner)?
            }
            World::KeypointBumps { a, b, amp } => {
                let mut j = Matrix::zeros(a.rows(), a.cols());
                for i in 0..a.rows() {
                    let bz = numerics::dot(b.row(i), z);
                    let y = (numerics::dot(a.row(i), z) + amp * bz.sin()).tanh();
                    let outer = 1.0 - y * y;
                    let inner = amp * bz.cos();
                    for (k, x) in j.row_mut(i).iter_mut().enumerate() {
                        *x = outer * (a[(i, k)] + inner * b[(i, k)]);
                    }
                }
                j
            }
            World::External(_) => {
                return Err(Error::Unsupported(
                    "external oracles cannot be differentiated".into(),
                ))
            }
        };
        Ok(jac)
    }
}

fn eval_synthetic(world: &World, z: &[f64]) -> Vec<f64> {
    match world {
        World::Linear { gamma } => gamma.mul_vec_unchecked(z),
        World::SigmoidAttrs { a, b } => a
            .mul_vec_unchecked(z)
            .iter()
            .zip(b)
            .map(|(x, bi)| sigmoid(x + bi))
            .collect(),
        World::TanhMix { inner, outer } => {
            let t: Vec<f64> = inner.mul_vec_unchecked(z).iter().map(|x| x.tanh()).collect();
            outer.mul_vec_unchecked(&t).into_iter().map(sigmoid).collect()
        }
        World::KeypointBumps { a, b, amp } => a
            .mul_vec_unchecked(z)
            .iter()
            .zip(b.mul_vec_unchecked(z))
            .map(|(x, bz)| (x + amp * bz.sin()).tanh())
            .collect(),
        World::External(_) => unreachable!("external oracles are evaluated by their process"),
    }
}

fn lock(proc: &Mutex<ExternalProcess>) -> Result<std::sync::MutexGuard<'_, ExternalProcess>> {
    proc.lock()
        .map_err(|_| Error::OracleProtocol("external oracle lock poisoned".into()))
}

#[derive(Debug, Deserialize)]
struct Handshake {
    protocol: u32,
    d: usize,
    n_c: usize,
}

#[derive(Serialize)]
struct Request<'a> {
    id: u64,
    z: &'a [Vec<f64>],
}

#[derive(Deserialize)]
struct Response {
    id: u64,
    c: Vec<Vec<f64>>,
}

struct ExternalProcess {
    child: Child,
    writer: Option<BufWriter<ChildStdin>>,
    reader: BufReader<ChildStdout>,
    next_id: u64,
    d: usize,
    n_c: usize,
}

impl ExternalProcess {
    /// Spawns `sh -c cmd` and completes the handshake. `d`/`n_c` of zero
    /// accept whatever the child advertises.
    fn spawn(cmd: &str, d: usize, n_c: usize) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(cmd)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let writer = child.stdin.take().map(BufWriter::new);
        let reader = BufReader::new(child.stdout.take().ok_or_else(|| {
            Error::OracleProtocol("external oracle has no stdout".into())
        })?);
        let mut proc = Self {
            child,
            writer,
            reader,
            next_id: 0,
            d,
            n_c,
        };
        let line = proc.read_line()?;
        let hs: Handshake = serde_json::from_str(&line)
            .map_err(|e| Error::OracleProtocol(format!("bad handshake `{line}`: {e}")))?;
        if hs.protocol != PROTOCOL_VERSION {
            return Err(Error::OracleProtocol(format!(
                "unsupported protocol version {}",
                hs.protocol
            )));
        }
        if (d != 0 && hs.d != d) || (n_c != 0 && hs.n_c != n_c) {
            return Err(Error::OracleProtocol(format!(
                "child advertises d={}, n_c={} but d={d}, n_c={n_c} was requested",
                hs.d, hs.n_c
            )));
        }
        proc.d = hs.d;
        proc.n_c = hs.n_c;
        Ok(proc)
    }

    fn read_line(&mut self) -> Result<String> {
        let mut line = String::new();
        let n = self.reader.read_line(&mut line)?;
        if n == 0 {
            return Err(Error::OracleProtocol("external oracle closed its stdout".into()));
        }
        Ok(line.trim_end().to_string())
    }

    fn request(&mut self, zs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let id = self.next_id;
        self.next_id += 1;
        let writer = self
            .writer
            .as_mut()
            .ok_or_else(|| Error::OracleProtocol("external oracle stdin closed".into()))?;
        serde_json::to_writer(&mut *writer, &Request { id, z: zs })?;
        writer.write_all(b"\n")?;
        writer.flush()?;
        let line = self.read_line()?;
        let resp: Response = serde_json::from_str(&line)
            .map_err(|e| Error::OracleProtocol(format!("malformed response `{line}`: {e}")))?;
        if resp.id != id {
            return Err(Error::OracleProtocol(format!(
                "response id {} does not match request id {id}",
                resp.id
            )));
        }
        if resp.c.len() != zs.len() {
            return Err(Error::OracleProtocol(format!(
                "response has {} rows for a batch of {}",
                resp.c.len(),
                zs.len()
            )));
        }
        if let Some(row) = resp.c.iter().find(|r| r.len() != self.n_c) {
            return Err(Error::OracleProtocol(format!(
                "response row has {} entries, expected {}",
                row.len(),
                self.n_c
            )));
        }
        Ok(resp.c)
    }
}

impl Drop for ExternalProcess {
    fn drop(&mut self) {
        // closing stdin is the shutdown signal
        drop(self.writer.take());
        let _ = self.child.wait();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_world() {
        let o = Oracle::build(OracleSpec::linear(1, 2.0)).unwrap();
        assert_eq!(o.eval(&[1.0]).unwrap(), vec![2.0]);
        assert_eq!(o.eval_grad(&[5.0]).unwrap().as_slice(), &[2.0]);
        assert_eq!(o.call_count(), 1);
    }

    #[test]
    fn sigmoid_attrs_at_origin() {
        let o = Oracle::build(OracleSpec::sigmoid_attrs(6, 3, 11)).unwrap();
        assert_eq!(o.eval(&[0.0; 6]).unwrap(), vec![0.5; 3]);
        let j = o.eval_grad(&[0.0; 6]).unwrap();
        if let World::SigmoidAttrs { a, .. } = &o.world {
            for (x, y) in j.as_slice().iter().zip(a.as_slice()) {
                assert!((x - 0.25 * y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn same_seed_same_world() {
        let spec = OracleSpec::sigmoid_attrs(5, 2, 3).with_param("bias", 0.5);
        let a = Oracle::build(spec.clone()).unwrap();
        let b = Oracle::build(spec).unwrap();
        let z = [0.3, -0.1, 0.7, 1.2, -2.0];
        assert_eq!(a.eval(&z).unwrap(), b.eval(&z).unwrap());
        assert_eq!(a.eval_grad(&z).unwrap(), b.eval_grad(&z).unwrap());
    }

    #[test]
    fn spec_string_round_trip() {
        let s: OracleSpec = "sigmoid-attrs:d=16,nc=4,seed=7,scale=3".parse().unwrap();
        assert_eq!(s.kind, OracleKind::SigmoidAttrs);
        assert_eq!((s.d, s.n_c, s.seed), (16, 4, 7));
        assert_eq!(s.to_string().parse::<OracleSpec>().unwrap(), s);
        let e: OracleSpec = "external:d=2,nc=1,cmd=python3 -c 'a,b'".parse().unwrap();
        assert_eq!(e.params["cmd"], "python3 -c 'a,b'");
        assert_eq!(e.to_string().parse::<OracleSpec>().unwrap(), e);
        assert!("nope:d=1".parse::<OracleSpec>().is_err());
        assert!("external:d=1".parse::<OracleSpec>().is_err());
    }

    #[test]
    fn dimension_mismatch() {
        let o = Oracle::build(OracleSpec::sigmoid_attrs(4, 2, 0)).unwrap();
        assert!(o.eval(&[0.0; 3]).is_err());
        assert!(o.eval_grad(&[0.0; 5]).is_err());
        assert_eq!(o.call_count(), 0);
    }
}
