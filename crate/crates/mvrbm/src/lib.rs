//! Mixed-variate Restricted Boltzmann Machine (Mv.RBM) for mixed-type tabular data,
//! used as a density-based outlier detector.
//!
//! The model couples type-specific visible units (binary, Gaussian, nominal, count)
//! to a shared binary hidden layer. Records are scored by free-energy: after the
//! hidden units are summed out analytically, `F(x)` equals the negative log-density
//! up to an additive constant, so high free-energy means low density. Records whose
//! score reaches a percentile-derived threshold are flagged as outliers.
//!
//! Crate layout:
//! - [`schema`]: typed column schemas, CSV ingestion, standardization, one-hot encoding
//! - [`model`]: energies, conditionals, free-energy, and brute-force enumeration oracles
//! - [`train`]: contrastive-divergence training with SGD / momentum / Adam
//! - [`detect`]: percentile thresholds and verdict reports
//! - [`synth`]: synthetic mixed-type benchmark generator (latent GMM + discretization)
//! - [`eval`]: contamination procedure, precision/recall/F, ROC AUC, experiment runner

pub mod config;
pub mod detect;
pub mod error;
pub mod eval;
pub mod hexfloat;
pub mod model;
pub mod numeric;
pub mod schema;
pub mod seed;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
