use thiserror::Error;

/// Errors raised by the solver stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid too small: {nx}x{ny} (minimum 8x8)")]
    GridTooSmall { nx: usize, ny: usize },
    #[error("invalid grid geometry: {0}")]
    InvalidGrid(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("field shapes do not match")]
    ShapeMismatch,
    #[error("right-hand side not mean-zero: mean {mean:e}, rms {rms:e}")]
    CompatibilityViolated { mean: f64, rms: f64 },
    #[error("iterative solver stalled at relative residual {0:e}")]
    SolverDiverged(f64),
    #[error("parameter out of domain: {0}")]
    DomainError(String),
    #[error("density floor violated: min rho = {0}")]
    DensityFloorViolated(f64),
    #[error("viscosity non-positive: {0}")]
    ViscosityNonpositive(f64),
    #[error("phase-field coefficient 1/alpha - phi non-positive: {0}")]
    CoefficientSignError(f64),
    #[error("NaN produced during assembly")]
    AssemblyNaN,
    #[error("linear system is singular: {0}")]
    SingularSystem(String),
    #[error("|phi| exceeded the admissible bound: {0}")]
    PhaseBoundExceeded(f64),
    #[error("time step failed at t = {t} after {halvings} halvings")]
    StepFailed { t: f64, halvings: u32 },
    #[error("config error: {0}")]
    Config(String),
    #[error("snapshot format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
