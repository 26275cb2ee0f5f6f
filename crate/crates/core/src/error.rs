//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A parameter violated a documented precondition.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// An analytic shortcut was requested for a configuration it does not
    /// cover (e.g. collective-mode formulas on non-uniform qubit frequencies).
    #[error("analytic formula requires degenerate qubits")]
    NonUniformQubits,

    /// The resolvent (or another linear system) is too close to singular for
    /// the result to be trusted.
    #[error("linear system is ill-conditioned: condition estimate {estimate:.3e} exceeds {limit:.3e}")]
    IllConditioned { estimate: f64, limit: f64 },

    /// A Monte-Carlo ensemble aborted because one realization failed.
    #[error("realization {index} failed: {source}")]
    RealizationFailed {
        index: u64,
        #[source]
        source: Box<Error>,
    },

    /// Adaptive quadrature ran out of subdivisions before reaching the
    /// requested relative tolerance.
    #[error("quadrature did not converge: requested relative tolerance {requested:.3e}, achieved {achieved:.3e}")]
    QuadratureTolerance { requested: f64, achieved: f64 },

    /// An iterative fit hit its iteration cap. Carries the best parameters
    /// seen so far and the residual norm they achieve.
    #[error("fit did not converge after {iterations} iterations (residual norm {residual_norm:.6e}); best parameters so far: {params:?}")]
    FitDidNotConverge {
        iterations: usize,
        residual_norm: f64,
        params: Vec<f64>,
    },

    /// Paired inputs of different lengths.
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    /// A target value lies outside the attainable band of an invertible map.
    #[error("target {target} MHz outside attainable band [{lo}, {hi}] MHz")]
    OutOfBand { target: f64, lo: f64, hi: f64 },

    /// Any other numerical failure with no better category.
    #[error("{0}")]
    Numerical(String),
}
