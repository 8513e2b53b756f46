use thiserror::Error;

/// Errors produced by the simulation and estimation layers.
#[derive(Debug, Error)]
pub enum Error {
    /// A constructor or operation received a parameter outside its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A kinetic function was evaluated outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// The state left the finite range during numerical integration.
    #[error("integration diverged at t = {t} h")]
    IntegrationDiverged { t: f64 },

    /// The innovation variance S = C P C' + R was not strictly positive.
    #[error("innovation variance is not positive (S = {s})")]
    SingularInnovation { s: f64 },

    #[error("Riccati iteration did not converge within {iters} iterations")]
    RiccatiDiverged { iters: usize },

    /// A filter produced non-finite estimates.
    #[error("filter diverged: {0}")]
    FilterDiverged(String),
}

pub type Result<T> = std::result::Result<T, Error>;
