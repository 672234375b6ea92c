//! Decision-focused forecasting for time series: fixed-memory
//! autoregressive cost predictors trained directly against downstream
//! linear-optimization regret, a stationary dependent-data generator, and
//! numerical evaluators for the associated generalization and calibration
//! bounds.
//!
//! Modules:
//! - [`geometry`]: feasible regions, the exact linear oracle, and the
//!   geometric constants of the bounds.
//! - [`losses`]: decision regret, its convex surrogate with subgradients,
//!   and the pointwise baselines.
//! - [`armodel`]: the lagged predictor, dataset construction, and
//!   partial-autocorrelation lag selection.
//! - [`train`]: batch subgradient / Adam descent and the least-squares
//!   closed form.
//! - [`dynsys`]: seeded trajectory generation and stability/mixing
//!   diagnostics.
//! - [`analysis`]: block splitting, Rademacher complexity estimation, and
//!   the bound/calibration formulas.
//! - [`bench`]: the end-to-end experiment harness with degree and coupling
//!   sweeps.
//!
//! The `parallel` feature (on by default) runs trials, Monte Carlo draws,
//! and batch gradients on a rayon pool; disabling it falls back to
//! sequential loops with bit-identical results.

pub mod analysis;
pub mod armodel;
pub mod bench;
pub mod dynsys;
pub mod error;
pub mod exec;
pub mod fsio;
pub mod geometry;
pub mod losses;
pub mod train;

pub use error::{Error, Result};
