//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by model evaluation, linear solves, and propagation.
#[derive(Debug, Clone, Error)]
pub enum CoreError {
    /// A model callback returned an object of the wrong shape.
    #[error("dimension mismatch in `{callback}`: {detail}")]
    Dimension {
        callback: &'static str,
        detail: String,
    },

    /// A model callback returned NaN or infinity.
    #[error("non-finite value returned by `{callback}` at t = {t}")]
    Evaluation { callback: &'static str, t: f64 },

    /// The (extended) mass matrix is singular or numerically unusable.
    #[error("singular or ill-conditioned mass matrix (condition estimate {cond:.3e})")]
    SingularMass { cond: f64 },

    /// The constraint Jacobian does not have full row rank.
    #[error("rank-deficient constraint Jacobian: estimated rank {estimated_rank}, need {required}")]
    RankDeficiency {
        estimated_rank: usize,
        required: usize,
    },

    /// The trajectory meets the event surface tangentially.
    #[error(
        "grazing contact at event {event_index}: |dr/dq . v| = {denominator:.3e} <= {tolerance:.3e}"
    )]
    Grazing {
        event_index: usize,
        denominator: f64,
        tolerance: f64,
    },

    /// Step-size underflow; the problem is too stiff for the explicit pair.
    #[error("step size underflow at t = {t:.9e} (h = {h:.3e})")]
    Stiffness { t: f64, h: f64 },

    /// Event count exceeded the configured limit.
    #[error("more than {max_events} events by t = {t:.9e}; Zeno behaviour suspected")]
    ZenoSuspected { max_events: usize, t: f64 },

    /// Twin perturbed runs saw different event sequences.
    #[error(
        "twin runs for parameter {param_index} disagree in event count: {plus_events} (+) vs {minus_events} (-)"
    )]
    TwinMismatch {
        param_index: usize,
        plus_events: usize,
        minus_events: usize,
    },

    /// A model or run configuration is invalid.
    #[error("invalid configuration: {0}")]
    Configuration(String),

    /// Initial conditions violate the active constraints.
    #[error("inconsistent initial state: {detail} (residual {residual:.3e})")]
    InconsistentInitialState { detail: String, residual: f64 },
}

pub type CoreResult<T> = Result<T, CoreError>;
