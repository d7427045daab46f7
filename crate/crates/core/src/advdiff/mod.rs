//! Three-dimensional advection-diffusion with an emission-extended state,
//! discretized by cell averages and Strang splitting, and the single-sensor
//! placement experiment built on it.

mod config;
mod experiment;
mod grid;
mod model;
mod prior;
mod schemes;

pub use config::{
    AdvDiffConfig, BasisKind, CandidateSpec, DiffusionProfile, EmissionBackground, Hotspot, ObservationSpec, PriorSpec,
    QuadratureRule,
};
pub use experiment::{candidate_locations, SingleSensorExperiment};
pub use grid::{cell_average_projection, Geometry};
pub use model::{build_model, AdvDiffModel, ExtendedState};
pub use prior::{prior_factor, smooth_block_basis};
pub use schemes::{
    courant, crank_nicolson_step, lax_wendroff_step, vertical_operator, Axis, CrankNicolson, ThomasFactor, Tridiagonal,
};
