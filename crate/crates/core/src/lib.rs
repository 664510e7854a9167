//! Aggregated relational data: simulation, Bayesian model fitting and
//! fit evaluation.

pub mod crossval;
pub mod dataio;
pub mod diagnostics;
pub mod dists;
pub mod error;
pub mod modelcheck;
pub mod models;
pub mod rng;
pub mod sampler;
pub mod simgen;

pub use dataio::{ArdDataset, GroundTruth, Provenance, SubpopMeta};
pub use error::{Error, Result};
pub use models::{ArdModel, Layout, ModelKind, ModelOptions, ModelSpec, RescaleSpec};
pub use sampler::{Posterior, SamplerConfig};

/// Version of this library, recorded in output provenance.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
