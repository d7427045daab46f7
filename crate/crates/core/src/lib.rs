pub mod advdiff;
pub mod approximation;
pub mod error;
pub mod evolution;
pub mod kalman;
pub mod lq_riccati;
pub mod operators;
pub mod placement;

pub use error::{Error, Result};

/// Version of this library, recorded in experiment manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
