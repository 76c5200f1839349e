//! Shared fixtures for the trajectory-level test suites: small hybrid models
//! exercising each event kind, and the twin-trajectory jump estimator used by
//! the convergence checks.

#![allow(dead_code)]

use hybrid_sens_core::formulations::Formulation;
use hybrid_sens_core::integrator::{propagate_hybrid, IntegratorConfig};
use hybrid_sens_core::model::{
    unpack_canonical, ConstraintEval, CrossingDirection, Dimensions, EventEval, EventSpec,
    ForceEval, JumpKind, Model, Regime,
};
use nalgebra::{DMatrix, DVector, RowDVector};

/// Point mass falling under gravity whose magnitude switches when the mass
/// crosses a fixed height: an acceleration-only event.
pub struct SwitchedGravityBall {
    pub h0: f64,
    pub gravity: [f64; 2],
    pub switch_height: f64,
}

impl Model for SwitchedGravityBall {
    fn dims(&self) -> Dimensions {
        Dimensions { n: 1, m: 0, p: 1, e: 1 }
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
        regime: Regime,
    ) -> ForceEval {
        ForceEval {
            f: DVector::from_vec(vec![-self.gravity[regime.0 as usize]]),
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
            r: q[0] - self.switch_height,
            dr_dq: RowDVector::from_row_slice(&[1.0]),
        }
    }

    fn event_spec(&self, _index: usize) -> EventSpec {
        EventSpec {
            kind: JumpKind::AccelChange,
            post_regime: Regime(1),
            direction: CrossingDirection::Falling,
        }
    }

    fn initial_state(&self, rho: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (DVector::from_vec(vec![rho[0]]), DVector::zeros(1))
    }

    fn initial_sensitivity(&self, _rho: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        (DMatrix::from_element(1, 1, 1.0), DMatrix::zeros(1, 1))
    }
}

/// Cartesian pendulum whose gravity switches when the bob crosses the
/// vertical through the pivot. Under the penalty formulation this is an
/// equation-of-motion transition: velocities stay continuous while the
/// right-hand side jumps.
pub struct SwitchedGravityPendulum {
    pub mass: f64,
    pub gravity: [f64; 2],
    pub length: f64,
    pub theta0: f64,
}

impl Model for SwitchedGravityPendulum {
    fn dims(&self) -> Dimensions {
        Dimensions { n: 2, m: 1, p: 1, e: 1 }
    }

    fn mass(&self, _t: f64, _q: &DVector<f64>, _rho: &DVector<f64>, _regime: Regime) -> DMatrix<f64> {
        DMatrix::identity(2, 2) * self.mass
    }

    fn force(
        &self,
        _t: f64,
        _q: &DVector<f64>,
        _v: &DVector<f64>,
        _rho: &DVector<f64>,
        regime: Regime,
    ) -> ForceEval {
        ForceEval {
            f: DVector::from_vec(vec![0.0, -self.mass * self.gravity[regime.0 as usize]]),
            f_q: DMatrix::zeros(2, 2),
            f_v: DMatrix::zeros(2, 2),
            f_rho: DMatrix::zeros(2, 1),
        }
    }

    fn constraints(
        &self,
        _t: f64,
        q: &DVector<f64>,
        rho: &DVector<f64>,
        _regime: Regime,
    ) -> ConstraintEval {
        let l = rho[0];
        let phi = DVector::from_vec(vec![q[0] * q[0] + q[1] * q[1] - l * l]);
        let phi_q = DMatrix::from_row_slice(1, 2, &[2.0 * q[0], 2.0 * q[1]]);
        let mut ce = ConstraintEval::scleronomic(phi, phi_q, 1);
        ce.phi_rho = DMatrix::from_element(1, 1, -2.0 * l);
        ce
    }

    fn phi_qq_mul(
        &self,
        _t: f64,
        _q: &DVector<f64>,
        _rho: &DVector<f64>,
        _regime: Regime,
        u: &DVector<f64>,
    ) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, 2, &[2.0 * u[0], 2.0 * u[1]])
    }

    fn phi_qq_tr_mul(
        &self,
        _t: f64,
        _q: &DVector<f64>,
        _rho: &DVector<f64>,
        _regime: Regime,
        w: &DVector<f64>,
    ) -> DMatrix<f64> {
        DMatrix::identity(2, 2) * (2.0 * w[0])
    }

    fn num_events(&self) -> usize {
        1
    }

    fn event(&self, _index: usize, q: &DVector<f64>) -> EventEval {
        EventEval {
            r: q[0],
            dr_dq: RowDVector::from_row_slice(&[1.0, 0.0]),
        }
    }

    fn event_spec(&self, _index: usize) -> EventSpec {
        EventSpec {
            kind: JumpKind::EomTransition,
            post_regime: Regime(1),
            direction: CrossingDirection::Falling,
        }
    }

    fn initial_state(&self, rho: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let l = rho[0];
        let (s, c) = (self.theta0.sin(), self.theta0.cos());
        (DVector::from_vec(vec![l * s, -l * c]), DVector::zeros(2))
    }

    fn initial_sensitivity(&self, _rho: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let (s, c) = (self.theta0.sin(), self.theta0.cos());
        (
            DMatrix::from_column_slice(2, 1, &[s, -c]),
            DMatrix::zeros(2, 1),
        )
    }
}

/// Free point mass captured onto a circular constraint when it reaches the
/// circle: an impulsive constraint change (`m` goes from 0 to 1) with no
/// external impulse. The parameter is the initial height.
pub struct FreeFlightCapture {
    pub gravity: f64,
    pub radius: f64,
    pub x0: f64,
    pub y0: f64,
    pub v0: [f64; 2],
}

impl FreeFlightCapture {
    pub fn standard() -> Self {
        Self {
            gravity: 9.81,
            radius: 1.0,
            x0: 0.3,
            y0: -0.5,
            v0: [0.4, 0.0],
        }
    }
}

impl Model for FreeFlightCapture {
    fn dims(&self) -> Dimensions {
        Dimensions { n: 2, m: 0, p: 1, e: 1 }
    }

    fn constraint_count(&self, regime: Regime) -> usize {
        if regime.0 == 0 {
            0
        } else {
            1
        }
    }

    fn mass(&self, _t: f64, _q: &DVector<f64>, _rho: &DVector<f64>, _regime: Regime) -> DMatrix<f64> {
        DMatrix::identity(2, 2)
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
            f: DVector::from_vec(vec![0.0, -self.gravity]),
            f_q: DMatrix::zeros(2, 2),
            f_v: DMatrix::zeros(2, 2),
            f_rho: DMatrix::zeros(2, 1),
        }
    }

    fn constraints(
        &self,
        _t: f64,
        q: &DVector<f64>,
        _rho: &DVector<f64>,
        regime: Regime,
    ) -> ConstraintEval {
        if regime.0 == 0 {
            return ConstraintEval::empty(2, 1);
        }
        let phi = DVector::from_vec(vec![q[0] * q[0] + q[1] * q[1] - self.radius * self.radius]);
        let phi_q = DMatrix::from_row_slice(1, 2, &[2.0 * q[0], 2.0 * q[1]]);
        ConstraintEval::scleronomic(phi, phi_q, 1)
    }

    fn phi_qq_mul(
        &self,
        _t: f64,
        _q: &DVector<f64>,
        _rho: &DVector<f64>,
        regime: Regime,
        u: &DVector<f64>,
    ) -> DMatrix<f64> {
        if regime.0 == 0 {
            return DMatrix::zeros(0, 2);
        }
        DMatrix::from_row_slice(1, 2, &[2.0 * u[0], 2.0 * u[1]])
    }

    fn phi_qq_tr_mul(
        &self,
        _t: f64,
        _q: &DVector<f64>,
        _rho: &DVector<f64>,
        regime: Regime,
        w: &DVector<f64>,
    ) -> DMatrix<f64> {
        if regime.0 == 0 {
            return DMatrix::zeros(2, 2);
        }
        DMatrix::identity(2, 2) * (2.0 * w[0])
    }

    fn num_events(&self) -> usize {
        1
    }

    fn event(&self, _index: usize, q: &DVector<f64>) -> EventEval {
        EventEval {
            r: q[0] * q[0] + q[1] * q[1] - self.radius * self.radius,
            dr_dq: RowDVector::from_row_slice(&[2.0 * q[0], 2.0 * q[1]]),
        }
    }

    fn event_spec(&self, _index: usize) -> EventSpec {
        EventSpec {
            kind: JumpKind::DaeImpulse,
            post_regime: Regime(1),
            direction: CrossingDirection::Rising,
        }
    }

    fn initial_state(&self, rho: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (
            DVector::from_vec(vec![self.x0, rho[0]]),
            DVector::from_vec(vec![self.v0[0], self.v0[1]]),
        )
    }

    fn initial_sensitivity(&self, _rho: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        (
            DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
            DMatrix::zeros(2, 1),
        )
    }
}

/// Which sensitivity block a twin-jump check compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JumpQuantity {
    Position,
    Velocity,
    Quadrature,
}

/// Twin-trajectory estimate of a sensitivity jump at the first event.
///
/// For each perturbation `delta`, two propagations at `rho +- delta/2` are
/// sampled just outside the window `|t - t_eve| <= w(delta)`; the
/// finite-difference sensitivity is formed at both sides and its change
/// across the event is compared with the analytic jump. Returns the observed
/// convergence order (least-squares slope of log error vs log delta) and the
/// per-delta errors.
#[allow(clippy::too_many_arguments)]
pub fn twin_jump_observed_order(
    model: &dyn Model,
    formulation: &Formulation,
    rho: &DVector<f64>,
    param: usize,
    t_f: f64,
    quantity: JumpQuantity,
    deltas: &[f64],
    rtol: f64,
) -> (f64, Vec<(f64, f64)>) {
    let base_cfg = IntegratorConfig {
        rtol,
        atol: rtol * 1e-2,
        dense_sample_dt: t_f,
        ..Default::default()
    };
    let reference = propagate_hybrid(model, formulation, &base_cfg, rho, 0.0, t_f)
        .expect("reference propagation");
    assert!(
        !reference.events.is_empty(),
        "twin-jump check needs at least one event in the span"
    );
    let ev = &reference.events[0];
    let t_eve = ev.t_eve;
    let tau = ev.dt_drho[param];

    let extract = |sens: &hybrid_sens_core::model::SensitivityBundle| -> DVector<f64> {
        match quantity {
            JumpQuantity::Position => sens.dq_drho.column(param).clone_owned(),
            JumpQuantity::Velocity => sens.dv_drho.column(param).clone_owned(),
            JumpQuantity::Quadrature => DVector::from_vec(vec![sens.dz_drho[param]]),
        }
    };
    let analytic_jump = extract(&ev.sens_post) - extract(&ev.sens_pre);

    let state_block = |y: &DVector<f64>, layout, t| -> DVector<f64> {
        let (state, _) = unpack_canonical(y, layout, t, Regime(0));
        match quantity {
            JumpQuantity::Position => state.q,
            JumpQuantity::Velocity => state.v,
            JumpQuantity::Quadrature => DVector::from_vec(vec![state.z]),
        }
    };

    let mut errors = Vec::new();
    for &delta in deltas {
        let w = 5.0 * delta * tau.abs().max(0.1);
        let t_a = t_eve - w;
        let t_b = t_eve + w;
        assert!(t_a > 0.0 && t_b < t_f, "window must fit inside the span");
        let mut cfg = base_cfg.clone();
        cfg.extra_sample_times = vec![t_a, t_b];

        let run = |sign: f64| {
            let mut r = rho.clone();
            r[param] += sign * delta / 2.0;
            propagate_hybrid(model, formulation, &cfg, &r, 0.0, t_f).expect("twin propagation")
        };
        let plus = run(1.0);
        let minus = run(-1.0);
        assert_eq!(
            plus.events.len(),
            minus.events.len(),
            "twins must see the same event sequence"
        );

        let value_at = |arch: &hybrid_sens_core::integrator::TrajectoryArchive,
                        t: f64|
         -> DVector<f64> {
            for (ts, _, y) in arch.all_samples() {
                if ts == t {
                    return state_block(y, arch.layout, ts);
                }
            }
            panic!("sample at t = {t} missing from the archive");
        };

        let fd_a = (value_at(&plus, t_a) - value_at(&minus, t_a)) / delta;
        let fd_b = (value_at(&plus, t_b) - value_at(&minus, t_b)) / delta;
        let fd_jump = fd_b - fd_a;
        errors.push((delta, (&fd_jump - &analytic_jump).amax()));
    }

    (observed_order(&errors), errors)
}

/// Least-squares slope of `log(err)` against `log(delta)`.
pub fn observed_order(errors: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = errors
        .iter()
        .filter(|(_, e)| *e > 0.0)
        .map(|(d, e)| (d.ln(), e.ln()))
        .collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::INFINITY; // errors at machine zero: better than any order
    }
    let sx: f64 = pts.iter().map(|(x, _)| x).sum();
    let sy: f64 = pts.iter().map(|(_, y)| y).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| x * x).sum();
    let sxy: f64 = pts.iter().map(|(x, y)| x * y).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}
