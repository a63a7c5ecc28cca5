//! Conditional means and variances of an equicorrelated multivariate normal
//! vector given a complete ranking of its components, with Monte Carlo
//! oracles, a mean-variance portfolio solver, and the batch studies built
//! on them.

pub mod cli;
pub mod error;
pub mod experiments;
pub mod gauss;
pub mod model;
pub mod oracle;
pub mod portfolio;
pub mod recursive;

pub use error::{Error, Result};
pub use model::{extract_ranking, ConditionalMoments, Ranking, UniformCorrelationModel};
pub use recursive::{conditional_moments, log_ranking_probability, QuadratureSpec};
