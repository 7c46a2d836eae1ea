//! Particle Monte Carlo solvers that approximate the electric field
//! `E = -grad phi` directly from its own evolution equations, together with
//! a finite-difference comparator and replicate statistics.
//!
//! All numerical code is generic over [`Real`] (`f32` or `f64`); the aliases
//! at the crate root fix the scalar to `f64`.

pub mod error;
pub mod fd;
pub mod grid;
pub mod mcga;
pub mod problems;
pub mod scalar;
pub mod sources;
pub mod stats;
pub mod streams;
pub mod transport;

pub use error::{Error, Result};
pub use fd::{fd_gradient, solve_deterministic, stable_dt};
pub use grid::{estimate_field, locate_cell, relative_error, Cell};
pub use mcga::{
    field_norm, run_mcga, run_mcga_replicate, run_mcga_with_ensembles, solve_single, solve_single_with_ensemble,
};
pub use problems::{effective_drift, experiment1_problems, experiment2_problems, CouplingMode};
pub use scalar::Real;
pub use stats::{fit_loglog_slope, variance_study, welford_update};
pub use streams::FieldId;

pub type Point = scalar::Vec2<f64>;
pub type Grid = grid::GridSpec<f64>;
pub type Field = grid::ScalarField<f64>;
pub type Ensemble = transport::ParticleEnsemble<f64>;
pub type Problem = problems::ProblemSpec<f64>;
pub type Problems = problems::ProblemSet<f64>;
pub type Config = problems::RunConfig<f64>;
pub type Options = problems::SolverOptions<f64>;
pub type Welford = stats::WelfordAccumulator<f64>;
pub type FieldStats = stats::FieldStatistics<f64>;
pub type VarianceStudy = stats::VarianceStudyResult<f64>;
pub type Fields = mcga::McgaFields<f64>;
