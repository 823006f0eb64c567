use std::fs;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sgf_core::navigator::{InverseMode, NavConfig};
use sgf_core::OracleSpec;

#[derive(Debug, Parser)]
#[command(name = "sgf", version, about = "Surrogate gradient field latent navigation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample (z, Φ(z)) pairs from an oracle into an SGFD dataset.
    GenData(GenDataArgs),
    /// Train an auxiliary map on a dataset and write an SGFC checkpoint.
    Train(TrainArgs),
    /// Navigate one latent toward a target condition.
    Navigate(NavigateArgs),
    /// Sweep step budgets over seeded samples and write an MDC CSV.
    Evaluate(EvaluateArgs),
    /// Score an MDC CSV.
    Mds(MdsArgs),
    /// Direct latent optimization through a differentiable oracle.
    Baseline(BaselineArgs),
    /// Compare a navigation path with the straight line between its endpoints.
    CompareLinear(CompareLinearArgs),
}

/// A vector flag: an inline JSON array or `@path` to a file holding one.
#[derive(Debug, Clone, Serialize)]
#[serde(transparent)]
pub struct VecArg(pub Vec<f64>);

impl FromStr for VecArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let text = match s.strip_prefix('@') {
            Some(path) => fs::read_to_string(path).map_err(|e| format!("{path}: {e}"))?,
            None => s.to_string(),
        };
        serde_json::from_str(text.trim())
            .map(VecArg)
            .map_err(|e| format!("expected a JSON array of numbers: {e}"))
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OracleArgs {
    /// Oracle spec, `kind[:key=val,...]` or `external:cmd=...`.
    #[arg(long)]
    pub oracle: Option<String>,
    /// Latent dimension (overrides the spec).
    #[arg(long)]
    pub d: Option<usize>,
    /// Condition dimension (overrides the spec).
    #[arg(long)]
    pub nc: Option<usize>,
}

impl OracleArgs {
    /// Parses the spec; `seed` fills in the world seed when the spec string
    /// does not name one.
    pub fn resolve(&self, seed: u64) -> Result<OracleSpec> {
        let Some(text) = &self.oracle else {
            bail!("--oracle is required");
        };
        let mut spec: OracleSpec = text.parse().with_context(|| format!("oracle spec `{text}`"))?;
        let head = text.split("cmd=").next().unwrap_or("");
        if !head.split([':', ',']).any(|kv| kv.trim().starts_with("seed=")) {
            spec.seed = seed;
        }
        if let Some(d) = self.d {
            spec.d = d;
        }
        if let Some(nc) = self.nc {
            spec.n_c = nc;
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum InverseArg {
    Neumann,
    Exact,
}

impl From<InverseArg> for InverseMode {
    fn from(a: InverseArg) -> Self {
        match a {
            InverseArg::Neumann => InverseMode::Neumann,
            InverseArg::Exact => InverseMode::Exact,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct NavFlags {
    /// λ
    #[arg(long, default_value_t = 0.2)]
    pub step_size: f64,
    /// Neumann series order m.
    #[arg(long, default_value_t = 1)]
    pub order: usize,
    /// ε, L∞ distance to the target condition.
    #[arg(long, default_value_t = 0.05)]
    pub tol: f64,
    /// Extrapolate conditions instead of querying the oracle each step.
    #[arg(long)]
    pub fast: bool,
    /// With --fast, skip the endpoint verification query.
    #[arg(long)]
    pub no_final_check: bool,
    #[arg(long, value_enum, default_value_t = InverseArg::Neumann)]
    pub inverse: InverseArg,
}

impl NavFlags {
    pub fn config(&self, max_steps: usize) -> NavConfig {
        NavConfig {
            step_size: self.step_size,
            neumann_order: self.order,
            max_steps,
            converge_tol: self.tol,
            fast: self.fast,
            final_check: self.fast && !self.no_final_check,
            inverse_mode: self.inverse.into(),
        }
    }
}

/// Starting latent and target condition of a single navigation.
#[derive(Debug, Clone, Args, Serialize)]
pub struct TargetArgs {
    /// Starting latent; sampled from N(0, I) with --seed when omitted.
    #[arg(long)]
    pub z0: Option<VecArg>,
    /// Full target condition.
    #[arg(long, conflicts_with_all = ["attr", "target"])]
    pub c1: Option<VecArg>,
    /// Attribute to change (target = start condition with this entry replaced).
    #[arg(long, requires = "target")]
    pub attr: Option<usize>,
    #[arg(long, requires = "attr")]
    pub target: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub oracle: OracleArgs,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    /// SGFD dataset.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Training report JSON (default: `<out>.report.json`).
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, default_value_t = 6)]
    pub blocks: usize,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    #[arg(long, default_value_t = 20_000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 2e-4)]
    pub lr: f64,
    /// Power-iteration steps per FC layer per update.
    #[arg(long, default_value_t = 1)]
    pub sn_steps: usize,
    #[arg(long, default_value_t = 1_000)]
    pub diag_interval: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct NavigateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub oracle: OracleArgs,
    #[command(flatten)]
    pub target: TargetArgs,
    #[command(flatten)]
    pub nav: NavFlags,
    /// n
    #[arg(long, default_value_t = 50)]
    pub max_steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Trace JSON.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub oracle: OracleArgs,
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub attr: usize,
    /// Requested target score; flipped for samples already on its side of 0.5.
    #[arg(long, default_value_t = 1.0)]
    pub target: f64,
    /// Step budgets of the sweep.
    #[arg(long, value_delimiter = ',', default_value = "5,10,15,20,25,30")]
    pub strengths: Vec<usize>,
    #[command(flatten)]
    pub nav: NavFlags,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// MDC CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Summary JSON (default: `<out>.summary.json`).
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MdsArgs {
    /// MDC CSV with header `strength,accuracy,disentanglement`.
    pub csv: PathBuf,
    /// Optional JSON result.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub oracle: OracleArgs,
    #[command(flatten)]
    pub target: TargetArgs,
    #[arg(long, default_value_t = 2e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 10_000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Keep every k-th iterate in the trace.
    #[arg(long, default_value_t = 1)]
    pub record_every: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// OptTrace JSON.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CompareLinearArgs {
    /// Existing trace JSON; otherwise a navigation is run from the flags below.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long, required_unless_present = "trace")]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub oracle: OracleArgs,
    #[command(flatten)]
    pub target: TargetArgs,
    #[command(flatten)]
    pub nav: NavFlags,
    #[arg(long, default_value_t = 50)]
    pub max_steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Optional JSON result.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
