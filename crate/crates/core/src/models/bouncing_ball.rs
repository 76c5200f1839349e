//! Point mass falling under constant gravity, bouncing on the ground with a
//! restitution coefficient. The single parameter is the initial height, so
//! every closed-form sensitivity is available for testing.

use nalgebra::{Complex, DMatrix, DVector, RowDVector};

use crate::model::complex::{C64, ComplexDynamics};
use crate::model::{
    CostEval, CrossingDirection, Dimensions, EventEval, EventSpec, ForceEval, JumpEval, JumpKind,
    Model, Regime,
};

/// Which running cost the model carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BallCost {
    #[default]
    None,
    /// `g = v` (integrates to the travelled distance).
    Velocity,
    /// `g = vdot`.
    Accel,
}

#[derive(Debug, Clone)]
pub struct BouncingBall {
    /// Nominal initial height \[m\]; the runtime parameter `rho[0]` overrides it.
    pub h0: f64,
    /// Gravity magnitude \[m/s^2\], acting downward.
    pub gravity: f64,
    /// Restitution coefficient of the bounce.
    pub restitution: f64,
    pub cost: BallCost,
}

impl BouncingBall {
    pub fn new(h0: f64, gravity: f64, restitution: f64) -> Self {
        assert!(h0 > 0.0 && gravity > 0.0 && restitution >= 0.0);
        Self {
            h0,
            gravity,
            restitution,
            cost: BallCost::None,
        }
    }

    pub fn with_cost(mut self, cost: BallCost) -> Self {
        self.cost = cost;
        self
    }

    pub fn nominal_parameters(&self) -> DVector<f64> {
        DVector::from_vec(vec![self.h0])
    }

    // Closed-form maps of the first impact, used as test oracles.

    /// `t_eve = sqrt(2 h0 / g)`.
    pub fn first_impact_time(&self, h0: f64) -> f64 {
        (2.0 * h0 / self.gravity).sqrt()
    }

    /// Impact speed `sqrt(2 g h0)` (velocity right before is its negative).
    pub fn impact_speed(&self, h0: f64) -> f64 {
        (2.0 * self.gravity * h0).sqrt()
    }

    /// `dt_eve/dh0 = 1 / sqrt(2 g h0)`.
    pub fn impact_time_sens(&self, h0: f64) -> f64 {
        1.0 / self.impact_speed(h0)
    }

    /// Position sensitivity right after the first bounce: `-e`.
    pub fn post_bounce_q_sens(&self) -> f64 {
        -self.restitution
    }

    /// Velocity sensitivity right after the first bounce:
    /// `(1 + e) g / sqrt(2 g h0)`.
    pub fn post_bounce_v_sens(&self, h0: f64) -> f64 {
        (1.0 + self.restitution) * self.gravity / self.impact_speed(h0)
    }
}

impl Model for BouncingBall {
    fn dims(&self) -> Dimensions {
        Dimensions {
            n: 1,
            m: 0,
            p: 1,
            e: 1,
        }
    }

    fn mass(&self, _t: f64, _q: &DVector<f64>, _rho: &DVector<f64>, _regime: Regime) -> DMatrix<f64> {
        DMatrix::identity(1, 1)
    }

    fn force(
        &self,
        _t: f64,
        _q: &DVector<f64>,
        _v: &DVector<f64>,
        _rho: &DVector<f64>,
        _regime: Regime,
    ) -> ForceEval {
        ForceEval {
            f: DVector::from_vec(vec![-self.gravity]),
            f_q: DMatrix::zeros(1, 1),
            f_v: DMatrix::zeros(1, 1),
            f_rho: DMatrix::zeros(1, 1),
        }
    }

    fn num_events(&self) -> usize {
        1
    }

    fn event(&self, _index: usize, q: &DVector<f64>) -> EventEval {
        EventEval {
            r: q[0],
            dr_dq: RowDVector::from_row_slice(&[1.0]),
        }
    }

    fn event_spec(&self, _index: usize) -> EventSpec {
        EventSpec {
            kind: JumpKind::VelocityJump,
            post_regime: Regime(0),
            direction: CrossingDirection::Falling,
        }
    }

    fn jump(
        &self,
        _index: usize,
        _t: f64,
        _q: &DVector<f64>,
        v_dof_minus: &DVector<f64>,
        _rho: &DVector<f64>,
    ) -> JumpEval {
        JumpEval {
            h: DVector::from_vec(vec![-self.restitution * v_dof_minus[0]]),
            h_t: DVector::zeros(1),
            h_q: DMatrix::zeros(1, 1),
            h_v: DMatrix::from_element(1, 1, -self.restitution),
            h_rho: DMatrix::zeros(1, 1),
        }
    }

    fn running_cost(
        &self,
        _t: f64,
        _q: &DVector<f64>,
        v: &DVector<f64>,
        vdot: &DVector<f64>,
        lambda: &DVector<f64>,
        _rho: &DVector<f64>,
    ) -> CostEval {
        let mut c = CostEval::zero(1, lambda.len(), 1);
        match self.cost {
            BallCost::None => {}
            BallCost::Velocity => {
                c.g = v[0];
                c.g_v[0] = 1.0;
            }
            BallCost::Accel => {
                c.g = vdot[0];
                c.g_vdot[0] = 1.0;
            }
        }
        c
    }

    fn initial_state(&self, rho: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (DVector::from_vec(vec![rho[0]]), DVector::zeros(1))
    }

    fn initial_sensitivity(&self, _rho: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        (DMatrix::from_element(1, 1, 1.0), DMatrix::zeros(1, 1))
    }
}

impl ComplexDynamics for BouncingBall {
    fn mass_c(&self, _t: f64, _q: &DVector<C64>, _rho: &DVector<C64>, _regime: Regime) -> DMatrix<C64> {
        DMatrix::identity(1, 1)
    }

    fn force_c(
        &self,
        _t: f64,
        _q: &DVector<C64>,
        _v: &DVector<C64>,
        _rho: &DVector<C64>,
        _regime: Regime,
    ) -> DVector<C64> {
        DVector::from_vec(vec![Complex::new(-self.gravity, 0.0)])
    }

    fn initial_state_c(&self, rho: &DVector<C64>) -> (DVector<C64>, DVector<C64>) {
        (DVector::from_vec(vec![rho[0]]), DVector::zeros(1))
    }
}
