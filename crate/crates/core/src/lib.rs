//! Student ability and skill difficulty estimation from graded response logs.
//!
//! The model is a unit-slope logistic model with one ability per student and
//! one difficulty per skill:
//!
//! ```text
//! P(correct | student s, skill k) = 1 / (1 + exp(-(theta_s - beta_k)))
//! ```
//!
//! Both parameter families carry independent Gaussian priors `N(0, sigma^2)`
//! and are estimated jointly by MAP with a limited-memory quasi-Newton
//! optimizer. A one-hot logistic regression (intercept + student + skill
//! indicators) is provided as the non-hierarchical comparison model.
//!
//! Module map:
//!
//! - [`ingest`]: delimited-text parsing, cleaning, label interning, seeded subsampling
//! - [`model`]: response probability, negative log-posterior, analytic gradient
//! - [`optim`]: L-BFGS with a strong-Wolfe line search
//! - [`fit`]: MAP fitting, baseline fitting, finite-difference gradient check
//! - [`metrics`]: AUC, log-loss, equal-count calibration bins
//! - [`analytics`]: cohort summaries, skill rankings, plot-ready series
//! - [`synth`]: synthetic response tables from known parameters
//! - [`pipeline`]: end-to-end run that writes every report file

pub mod analytics;
pub mod error;
pub mod fit;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
pub use fit::{fit_baseline, fit_map, BaselineModel, FitConfig, FitResult, Termination};
pub use ingest::{ColumnRef, ColumnSchema, InteractionTable, ResponseRecord};
pub use model::{ModelParams, PriorConfig};
