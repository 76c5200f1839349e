//! Five-bar linkage in natural (point) coordinates.
//!
//! The state is `q = [x1 y1 x2 y2 x3 y3]`, the coordinates of the three
//! moving revolute joints; points A and B are grounded. Four constant-length
//! bar constraints leave two degrees of freedom, carried by point 2. Two
//! linear springs (anchor-to-point) drive the mechanism together with
//! gravity; the parameters are the spring natural lengths. Point 2 bounces on
//! the ground: its vertical velocity reverses (scaled by the restitution)
//! while its horizontal velocity is kept, and the dependent velocities are
//! re-solved from the velocity constraints.
//!
//! Masses are lumped: each moving point carries half the mass of its two
//! adjacent bars. With the default geometry the initial configuration
//! `q1 = (-1.5, -1)`, `q2 = (0, -2)`, `q3 = (1.5, -1)` satisfies all four bar
//! constraints exactly, and both springs are at their natural length.

use nalgebra::{ComplexField, DMatrix, DVector, RowDVector};

use crate::error::{CoreError, CoreResult};
use crate::model::complex::{C64, ComplexConstraintEval, ComplexDynamics};
use crate::model::{
    ConstraintEval, CostEval, CrossingDirection, Dimensions, EventEval, EventSpec, ForceEval,
    JumpEval, JumpKind, Model, Regime,
};

/// Which grounded point a spring is anchored to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpringAnchor {
    A,
    B,
}

/// Running cost carried by the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FiveBarCost {
    #[default]
    None,
    /// `g = ydot_2` (vertical velocity of point 2).
    VerticalVelocityP2,
    /// `g = yddot_2` (vertical acceleration of point 2).
    VerticalAccelP2,
}

/// Geometry, inertia, and contact data of the mechanism.
#[derive(Debug, Clone)]
pub struct FiveBarConfig {
    /// Bar masses `[m1, m2, m3, m4]` \[kg\], ordered A-1, 1-2, 2-3, 3-B.
    pub masses: [f64; 4],
    /// Spring stiffnesses `[k1, k2]` \[N/m\].
    pub stiffness: [f64; 2],
    /// Spring natural lengths `[L01, L02]` \[m\]; these are the nominal parameters.
    pub natural_lengths: [f64; 2],
    /// Bar lengths `[LA1, L21, L32, LB3]` \[m\].
    pub bar_lengths: [f64; 4],
    pub anchor_a: [f64; 2],
    pub anchor_b: [f64; 2],
    /// Spring 1 attachment: anchor and moving point index (1..=3).
    pub spring_1: (SpringAnchor, usize),
    /// Spring 2 attachment.
    pub spring_2: (SpringAnchor, usize),
    /// Ground height hit by point 2 \[m\].
    pub ground_height: f64,
    /// Gravity magnitude \[m/s^2\], acting along `-y`.
    pub gravity: f64,
    /// Restitution of the vertical velocity of point 2 at impact.
    pub restitution: f64,
    pub initial_q: [f64; 6],
    pub initial_v: [f64; 6],
    pub cost: FiveBarCost,
}

impl Default for FiveBarConfig {
    fn default() -> Self {
        Self {
            masses: [1.0, 1.5, 1.5, 1.0],
            stiffness: [100.0, 100.0],
            // exact values; they round to the published 2.2360 / 2.0615
            natural_lengths: [5.0_f64.sqrt(), 4.25_f64.sqrt()],
            // sqrt(2), sqrt(3.25), sqrt(3.25), sqrt(2)
            bar_lengths: [
                2.0_f64.sqrt(),
                3.25_f64.sqrt(),
                3.25_f64.sqrt(),
                2.0_f64.sqrt(),
            ],
            anchor_a: [-0.5, 0.0],
            anchor_b: [0.5, 0.0],
            spring_1: (SpringAnchor::A, 3),
            spring_2: (SpringAnchor::B, 2),
            ground_height: -2.35,
            gravity: 9.81,
            restitution: 1.0,
            initial_q: [-1.5, -1.0, 0.0, -2.0, 1.5, -1.0],
            initial_v: [0.0; 6],
            cost: FiveBarCost::None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FiveBar {
    cfg: FiveBarConfig,
    /// Lumped point masses (one per moving point).
    point_masses: [f64; 3],
    /// When false, the bar constraints and the ground event are dropped and
    /// the three points move as free spring-loaded masses.
    constrained: bool,
}

impl FiveBar {
    pub fn new(cfg: FiveBarConfig) -> CoreResult<Self> {
        Self::build(cfg, true)
    }

    /// Variant without the bar constraints and the ground event; the spring
    /// and gravity forces are unchanged.
    pub fn unconstrained(cfg: FiveBarConfig) -> CoreResult<Self> {
        Self::build(cfg, false)
    }

    fn build(cfg: FiveBarConfig, constrained: bool) -> CoreResult<Self> {
        for v in cfg
            .masses
            .iter()
            .chain(cfg.stiffness.iter())
            .chain(cfg.natural_lengths.iter())
            .chain(cfg.bar_lengths.iter())
        {
            if !(*v > 0.0 && v.is_finite()) {
                return Err(CoreError::Configuration(
                    "five-bar masses, stiffnesses and lengths must be positive".into(),
                ));
            }
        }
        for spring in [cfg.spring_1, cfg.spring_2] {
            if !(1..=3).contains(&spring.1) {
                return Err(CoreError::Configuration(
                    "spring attachment point must be 1, 2 or 3".into(),
                ));
            }
        }
        let point_masses = [
            0.5 * (cfg.masses[0] + cfg.masses[1]),
            0.5 * (cfg.masses[1] + cfg.masses[2]),
            0.5 * (cfg.masses[2] + cfg.masses[3]),
        ];
        let model = Self {
            cfg,
            point_masses,
            constrained,
        };
        if constrained {
            let q0 = DVector::from_row_slice(&model.cfg.initial_q);
            let rho = model.nominal_parameters();
            let residual = model.constraints(0.0, &q0, &rho, Regime(0)).phi.amax();
            if residual > 1e-9 {
                return Err(CoreError::InconsistentInitialState {
                    detail: "five-bar initial configuration violates the bar constraints".into(),
                    residual,
                });
            }
            if model.cfg.initial_q[3] <= model.cfg.ground_height {
                return Err(CoreError::Configuration(
                    "five-bar initial configuration starts at or below the ground".into(),
                ));
            }
        }
        Ok(model)
    }

    pub fn config(&self) -> &FiveBarConfig {
        &self.cfg
    }

    pub fn nominal_parameters(&self) -> DVector<f64> {
        DVector::from_row_slice(&self.cfg.natural_lengths)
    }

    fn anchor(&self, which: SpringAnchor) -> [f64; 2] {
        match which {
            SpringAnchor::A => self.cfg.anchor_a,
            SpringAnchor::B => self.cfg.anchor_b,
        }
    }

    fn springs(&self) -> [(SpringAnchor, usize, f64); 2] {
        [
            (self.cfg.spring_1.0, self.cfg.spring_1.1, self.cfg.stiffness[0]),
            (self.cfg.spring_2.0, self.cfg.spring_2.1, self.cfg.stiffness[1]),
        ]
    }

    /// Generic force value; shared by the real and complex paths.
    fn force_value<T: ComplexField<RealField = f64> + Copy>(
        &self,
        q: &DVector<T>,
        rho: &DVector<T>,
    ) -> DVector<T> {
        let mut f = DVector::<T>::zeros(6);
        for (i, pm) in self.point_masses.iter().enumerate() {
            f[2 * i + 1] = T::from_real(-pm * self.cfg.gravity);
        }
        for (s, (anchor, point, k)) in self.springs().into_iter().enumerate() {
            let a = self.anchor(anchor);
            let j = 2 * (point - 1);
            let dx = q[j] - T::from_real(a[0]);
            let dy = q[j + 1] - T::from_real(a[1]);
            let len = (dx * dx + dy * dy).sqrt();
            let l0 = rho[s];
            // F = -k (len - L0) d / len
            let coeff = T::from_real(-k) * (T::one() - l0 / len);
            f[j] += coeff * dx;
            f[j + 1] += coeff * dy;
        }
        f
    }

    /// Generic constraint values and Jacobian.
    fn constraint_value<T: ComplexField<RealField = f64> + Copy>(
        &self,
        q: &DVector<T>,
    ) -> (DVector<T>, DMatrix<T>) {
        let lens = &self.cfg.bar_lengths;
        let a = self.cfg.anchor_a;
        let b = self.cfg.anchor_b;
        let p = |i: usize| (q[2 * i], q[2 * i + 1]);
        let (x1, y1) = p(0);
        let (x2, y2) = p(1);
        let (x3, y3) = p(2);
        let two = T::from_real(2.0);

        let d1 = (x1 - T::from_real(a[0]), y1 - T::from_real(a[1]));
        let d2 = (x2 - x1, y2 - y1);
        let d3 = (x3 - x2, y3 - y2);
        let d4 = (x3 - T::from_real(b[0]), y3 - T::from_real(b[1]));

        let sq = |d: (T, T)| d.0 * d.0 + d.1 * d.1;
        let phi = DVector::from_vec(vec![
            sq(d1) - T::from_real(lens[0] * lens[0]),
            sq(d2) - T::from_real(lens[1] * lens[1]),
            sq(d3) - T::from_real(lens[2] * lens[2]),
            sq(d4) - T::from_real(lens[3] * lens[3]),
        ]);

        let mut jac = DMatrix::<T>::zeros(4, 6);
        jac[(0, 0)] = two * d1.0;
        jac[(0, 1)] = two * d1.1;
        jac[(1, 0)] = -two * d2.0;
        jac[(1, 1)] = -two * d2.1;
        jac[(1, 2)] = two * d2.0;
        jac[(1, 3)] = two * d2.1;
        jac[(2, 2)] = -two * d3.0;
        jac[(2, 3)] = -two * d3.1;
        jac[(2, 4)] = two * d3.0;
        jac[(2, 5)] = two * d3.1;
        jac[(3, 4)] = two * d4.0;
        jac[(3, 5)] = two * d4.1;
        (phi, jac)
    }

    /// `d(Phi_q u)/dq`; for these quadratic constraints it is the constraint
    /// Jacobian pattern evaluated on `u` instead of `q` (anchors dropped).
    fn qq_mul_value<T: ComplexField<RealField = f64> + Copy>(u: &DVector<T>) -> DMatrix<T> {
        let two = T::from_real(2.0);
        let du2 = (u[2] - u[0], u[3] - u[1]);
        let du3 = (u[4] - u[2], u[5] - u[3]);
        let mut jac = DMatrix::<T>::zeros(4, 6);
        jac[(0, 0)] = two * u[0];
        jac[(0, 1)] = two * u[1];
        jac[(1, 0)] = -two * du2.0;
        jac[(1, 1)] = -two * du2.1;
        jac[(1, 2)] = two * du2.0;
        jac[(1, 3)] = two * du2.1;
        jac[(2, 2)] = -two * du3.0;
        jac[(2, 3)] = -two * du3.1;
        jac[(2, 4)] = two * du3.0;
        jac[(2, 5)] = two * du3.1;
        jac[(3, 4)] = two * u[4];
        jac[(3, 5)] = two * u[5];
        jac
    }

    /// Total mechanical energy (kinetic + gravity + spring).
    pub fn total_energy(&self, q: &DVector<f64>, v: &DVector<f64>, rho: &DVector<f64>) -> f64 {
        let mut e = 0.0;
        for (i, pm) in self.point_masses.iter().enumerate() {
            e += 0.5 * pm * (v[2 * i] * v[2 * i] + v[2 * i + 1] * v[2 * i + 1]);
            e += pm * self.cfg.gravity * q[2 * i + 1];
        }
        for (s, (anchor, point, k)) in self.springs().into_iter().enumerate() {
            let a = self.anchor(anchor);
            let j = 2 * (point - 1);
            let dx = q[j] - a[0];
            let dy = q[j + 1] - a[1];
            let stretch = (dx * dx + dy * dy).sqrt() - rho[s];
            e += 0.5 * k * stretch * stretch;
        }
        e
    }
}

impl Model for FiveBar {
    fn dims(&self) -> Dimensions {
        Dimensions {
            n: 6,
            m: if self.constrained { 4 } else { 0 },
            p: 2,
            e: if self.constrained { 1 } else { 0 },
        }
    }

    fn preferred_dof(&self, _regime: Regime) -> Option<Vec<usize>> {
        // point 2 carries the degrees of freedom
        Some(vec![2, 3])
    }

    fn mass(&self, _t: f64, _q: &DVector<f64>, _rho: &DVector<f64>, _regime: Regime) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(6, 6);
        for (i, pm) in self.point_masses.iter().enumerate() {
            m[(2 * i, 2 * i)] = *pm;
            m[(2 * i + 1, 2 * i + 1)] = *pm;
        }
        m
    }

    fn force(
        &self,
        _t: f64,
        q: &DVector<f64>,
        _v: &DVector<f64>,
        rho: &DVector<f64>,
        _regime: Regime,
    ) -> ForceEval {
        let f = self.force_value(q, rho);
        let mut f_q = DMatrix::zeros(6, 6);
        let mut f_rho = DMatrix::zeros(6, 2);
        for (s, (anchor, point, k)) in self.springs().into_iter().enumerate() {
            let a = self.anchor(anchor);
            let j = 2 * (point - 1);
            let dx = q[j] - a[0];
            let dy = q[j + 1] - a[1];
            let l2 = dx * dx + dy * dy;
            let len = l2.sqrt();
            let l0 = rho[s];
            // d/dd [ -k (1 - L0/len) d ] = -k (1 - L0/len) I - k L0 d d^T / len^3
            let c0 = -k * (1.0 - l0 / len);
            let c1 = -k * l0 / (len * l2);
            f_q[(j, j)] += c0 + c1 * dx * dx;
            f_q[(j, j + 1)] += c1 * dx * dy;
            f_q[(j + 1, j)] += c1 * dy * dx;
            f_q[(j + 1, j + 1)] += c0 + c1 * dy * dy;
            // d/dL0 [ -k (len - L0) d/len ] = k d / len
            f_rho[(j, s)] = k * dx / len;
            f_rho[(j + 1, s)] = k * dy / len;
        }
        ForceEval {
            f,
            f_q,
            f_v: DMatrix::zeros(6, 6),
            f_rho,
        }
    }

    fn constraints(
        &self,
        _t: f64,
        q: &DVector<f64>,
        _rho: &DVector<f64>,
        _regime: Regime,
    ) -> ConstraintEval {
        if !self.constrained {
            return ConstraintEval::empty(6, 2);
        }
        let (phi, phi_q) = self.constraint_value(q);
        ConstraintEval::scleronomic(phi, phi_q, 2)
    }

    fn phi_qq_mul(
        &self,
        _t: f64,
        _q: &DVector<f64>,
        _rho: &DVector<f64>,
        _regime: Regime,
        u: &DVector<f64>,
    ) -> DMatrix<f64> {
        if !self.constrained {
            return DMatrix::zeros(0, 6);
        }
        Self::qq_mul_value(u)
    }

    fn phi_qq_tr_mul(
        &self,
        _t: f64,
        _q: &DVector<f64>,
        _rho: &DVector<f64>,
        _regime: Regime,
        w: &DVector<f64>,
    ) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(6, 6);
        if !self.constrained {
            return h;
        }
        let block = |h: &mut DMatrix<f64>, i: usize, j: usize, c: f64| {
            h[(2 * i, 2 * j)] += c;
            h[(2 * i + 1, 2 * j + 1)] += c;
        };
        block(&mut h, 0, 0, 2.0 * (w[0] + w[1]));
        block(&mut h, 0, 1, -2.0 * w[1]);
        block(&mut h, 1, 0, -2.0 * w[1]);
        block(&mut h, 1, 1, 2.0 * (w[1] + w[2]));
        block(&mut h, 1, 2, -2.0 * w[2]);
        block(&mut h, 2, 1, -2.0 * w[2]);
        block(&mut h, 2, 2, 2.0 * (w[2] + w[3]));
        h
    }

    fn num_events(&self) -> usize {
        if self.constrained {
            1
        } else {
            0
        }
    }

    fn event(&self, _index: usize, q: &DVector<f64>) -> EventEval {
        let mut dr_dq = RowDVector::zeros(6);
        dr_dq[3] = 1.0;
        EventEval {
            r: q[3] - self.cfg.ground_height,
            dr_dq,
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
        // dof order is ascending coordinate index: (xdot_2, ydot_2)
        let e = self.cfg.restitution;
        JumpEval {
            h: DVector::from_vec(vec![v_dof_minus[0], -e * v_dof_minus[1]]),
            h_t: DVector::zeros(2),
            h_q: DMatrix::zeros(2, 6),
            h_v: DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -e])),
            h_rho: DMatrix::zeros(2, 2),
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
        let mut c = CostEval::zero(6, lambda.len(), 2);
        match self.cfg.cost {
            FiveBarCost::None => {}
            FiveBarCost::VerticalVelocityP2 => {
                c.g = v[3];
                c.g_v[3] = 1.0;
            }
            FiveBarCost::VerticalAccelP2 => {
                c.g = vdot[3];
                c.g_vdot[3] = 1.0;
            }
        }
        c
    }

    fn initial_state(&self, _rho: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (
            DVector::from_row_slice(&self.cfg.initial_q),
            DVector::from_row_slice(&self.cfg.initial_v),
        )
    }
}

impl ComplexDynamics for FiveBar {
    fn mass_c(&self, t: f64, _q: &DVector<C64>, _rho: &DVector<C64>, regime: Regime) -> DMatrix<C64> {
        crate::model::complex::promote_mat(&self.mass(t, &DVector::zeros(6), &DVector::zeros(2), regime))
    }

    fn force_c(
        &self,
        _t: f64,
        q: &DVector<C64>,
        _v: &DVector<C64>,
        rho: &DVector<C64>,
        _regime: Regime,
    ) -> DVector<C64> {
        self.force_value(q, rho)
    }

    fn constraints_c(
        &self,
        _t: f64,
        q: &DVector<C64>,
        _rho: &DVector<C64>,
        _regime: Regime,
    ) -> ComplexConstraintEval {
        if !self.constrained {
            return ComplexConstraintEval::empty(6);
        }
        let (phi, phi_q) = self.constraint_value(q);
        ComplexConstraintEval::scleronomic(phi, phi_q)
    }

    fn phi_qq_mul_c(
        &self,
        _t: f64,
        _q: &DVector<C64>,
        _rho: &DVector<C64>,
        _regime: Regime,
        u: &DVector<C64>,
    ) -> DMatrix<C64> {
        if !self.constrained {
            return DMatrix::zeros(0, 6);
        }
        Self::qq_mul_value(u)
    }

    fn initial_state_c(&self, _rho: &DVector<C64>) -> (DVector<C64>, DVector<C64>) {
        (
            crate::model::complex::promote_vec(&DVector::from_row_slice(&self.cfg.initial_q)),
            crate::model::complex::promote_vec(&DVector::from_row_slice(&self.cfg.initial_v)),
        )
    }
}
