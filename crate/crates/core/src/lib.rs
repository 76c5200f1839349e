//! Direct-sensitivity engine for hybrid (piecewise-smooth) second-order
//! mechanical systems.
//!
//! The crate propagates positions, velocities, a quadrature cost variable,
//! and their parameter sensitivities through velocity jumps, constraint
//! changes, and equation-of-motion transitions, applying analytical jump
//! conditions at each localized event. Three smooth formulations are
//! supported (unconstrained ODE, index-1 DAE, penalty ODE), and independent
//! finite-difference and complex-step baselines are provided for validation.
//!
//! Entry points:
//! * [`integrator::propagate_hybrid`] — run a full hybrid propagation.
//! * [`oracle::central_fd_sensitivity`] / [`oracle::complex_step_sensitivity`]
//!   — independent baselines and [`oracle::compare_report`].
//! * [`model::validate_model`] — derivative-consistency checks of a model.
//! * [`models`] — built-in reference systems.

pub mod error;
pub mod events;
pub mod formulations;
pub mod integrator;
pub mod model;
pub mod models;
pub mod oracle;
pub mod partition;
pub mod tlm;

pub use error::{CoreError, CoreResult};
