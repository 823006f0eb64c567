//! Surrogate gradient field navigation.
//!
//! Given only forward access to a condition oracle `Φ: Z → C` (a classifier
//! composed with a generator), this crate learns an auxiliary map `F` with
//! `F(z, Φ(z)) ≈ z` and uses its partial derivatives to move latents toward
//! target conditions. It also ships the baselines and the accuracy /
//! disentanglement metrics used to compare manipulation methods.

pub mod auxmap;
pub mod baselines;
pub mod error;
pub mod evaluation;
pub mod metrics;
pub mod navigator;
pub mod numerics;
pub mod oracle;
pub mod trainer;

pub use auxmap::{ArchConfig, AuxMap};
pub use error::{Error, Result};
pub use navigator::{navigate, AffineMap, ConditionalMap, InverseMode, NavConfig, NavTrace};
pub use numerics::{Matrix, RngState};
pub use oracle::{Oracle, OracleKind, OracleSpec};
pub use trainer::{PairDataset, TrainConfig, TrainReport};
