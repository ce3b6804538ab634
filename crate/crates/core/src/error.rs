use thiserror::Error;

/// Errors raised by the simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum KpoError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("state is not stationary (residual {residual:e} > {tolerance:e})")]
    NotStationary { residual: f64, tolerance: f64 },

    #[error("time step {dt:e} exceeds stability bound {bound:e}")]
    StepTooLarge { dt: f64, bound: f64 },

    #[error("trajectory diverged at step {step} (t = {time:e})")]
    Diverged { step: usize, time: f64 },

    #[error("solver did not converge: {0}")]
    NonConvergence(String),

    #[error("steady state is not unique: {0}")]
    DegenerateSteadyState(String),

    #[error("Fock cutoff too small: {0}")]
    CutoffTooSmall(String),

    #[error("quadrature grid too small: {mass_outside:e} of the probability lies outside the grid")]
    GridTooSmall { mass_outside: f64 },
}

pub type Result<T> = std::result::Result<T, KpoError>;
