//! Built-in reference models.
//!
//! * [`BouncingBall`] — one coordinate, closed-form impact maps, the primary
//!   desk-check for every jump condition.
//! * [`Pendulum`] — planar pendulum in Cartesian coordinates, the smallest
//!   constrained benchmark (`n = 2`, `m = 1`).
//! * [`FiveBar`] — the five-bar linkage with two degrees of freedom, natural
//!   coordinates, springs, gravity, and a ground impact on its middle point.

mod bouncing_ball;
mod five_bar;
mod pendulum;

pub use bouncing_ball::{BallCost, BouncingBall};
pub use five_bar::{FiveBar, FiveBarConfig, FiveBarCost, SpringAnchor};
pub use pendulum::Pendulum;
