//! Matching-based estimation of the average treatment effect on the treated
//! (ATT) with variance estimation that stays valid when control units are
//! reused across matched sets.
//!
//! The crate is organised around a small pipeline:
//!
//! * [`data`] holds the tabular [`data::Dataset`] model and CSV I/O.
//! * [`matching`] builds per-treated-unit control clusters (fixed-M nearest
//!   neighbour, radius, synthetic-control reweighting, propensity score)
//!   together with weight aggregation and reuse diagnostics.
//! * [`estimators`] computes the matched ATT, an optional regression
//!   debiasing step with cross-fitting, and balancing-weight estimation.
//! * [`variance`] implements the pooled within-cluster variance, the
//!   effective-sample-size form of the noise variance, a total variance that
//!   accounts for effect heterogeneity, a matched-pair comparison estimator,
//!   Wald intervals and the wild bootstrap.
//! * [`simulation`] provides seeded data-generating processes and a coverage
//!   harness used by the integration tests and the CLI.
//!
//! All randomness flows through [`rng::Rng64`], so any seeded entry point is
//! bit-reproducible across runs and platforms.

pub mod data;
pub mod error;
pub mod estimators;
pub mod matching;
pub mod numfmt;
pub mod pipeline;
pub mod rng;
pub mod simulation;
pub mod stats;
pub mod variance;

mod linalg;
mod simplex;

pub use error::{Error, Result};
