use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("particle {index} at ({x}, {y}) lies outside the domain")]
    ParticleOutside { index: usize, x: f64, y: f64 },

    #[error("non-finite value in field at cell ({i}, {j})")]
    NonFiniteField { i: usize, j: usize },

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),

    #[error(
        "reaction step unstable at t = {time}: dt * max|c| = {product} (needs < 1, reduce dt below {suggested_dt})"
    )]
    UnstableReaction {
        time: f64,
        product: f64,
        suggested_dt: f64,
    },

    #[error("exact coupling requested but problem '{0}' provides no exact companion derivative")]
    MissingExactCoupling(String),

    #[error("problem '{0}' needs a companion potential estimate but none was supplied")]
    MissingCompanion(String),

    #[error("non-finite particle weight in field '{field}' at step {step}")]
    NonFiniteWeight { field: String, step: usize },

    #[error("CFL condition violated: dt = {dt} exceeds limit; use dt <= {suggested_dt}")]
    Cfl { dt: f64, suggested_dt: f64 },

    #[error("statistics: {0}")]
    Statistics(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
