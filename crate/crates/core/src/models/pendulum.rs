//! Planar pendulum in Cartesian coordinates `(x, y)` with the rod modelled as
//! the quadratic length constraint `x^2 + y^2 - L^2 = 0`. The single
//! parameter is the rod length, which enters both the constraint and the
//! initial conditions.

use nalgebra::{Complex, DMatrix, DVector};

use crate::model::complex::{C64, ComplexConstraintEval, ComplexDynamics};
use crate::model::{ConstraintEval, Dimensions, ForceEval, Model, Regime};

#[derive(Debug, Clone)]
pub struct Pendulum {
    /// Bob mass \[kg\].
    pub mass: f64,
    /// Gravity magnitude \[m/s^2\] acting along `-y`.
    pub gravity: f64,
    /// Nominal rod length \[m\]; the runtime parameter `rho[0]` overrides it.
    pub length: f64,
    /// Initial angle from the downward vertical \[rad\].
    pub theta0: f64,
    /// Initial angular rate \[rad/s\].
    pub omega0: f64,
}

impl Pendulum {
    pub fn new(mass: f64, gravity: f64, length: f64, theta0: f64, omega0: f64) -> Self {
        assert!(mass > 0.0 && gravity > 0.0 && length > 0.0);
        Self {
            mass,
            gravity,
            length,
            theta0,
            omega0,
        }
    }

    pub fn nominal_parameters(&self) -> DVector<f64> {
        DVector::from_vec(vec![self.length])
    }

    /// Rod tension for a state on the manifold: `m g cos(theta) + m L thetadot^2`,
    /// with `theta` measured from the downward vertical. Relates to the saddle
    /// multiplier by `tension = 2 L lambda`.
    pub fn rod_tension(&self, q: &DVector<f64>, v: &DVector<f64>) -> f64 {
        let l = (q[0] * q[0] + q[1] * q[1]).sqrt();
        let cos_theta = -q[1] / l;
        let thetadot = (q[0] * v[1] - q[1] * v[0]) / (l * l);
        self.mass * self.gravity * cos_theta + self.mass * l * thetadot * thetadot
    }
}

impl Model for Pendulum {
    fn dims(&self) -> Dimensions {
        Dimensions {
            n: 2,
            m: 1,
            p: 1,
            e: 0,
        }
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
        _regime: Regime,
    ) -> ForceEval {
        ForceEval {
            f: DVector::from_vec(vec![0.0, -self.mass * self.gravity]),
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

    fn initial_state(&self, rho: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let l = rho[0];
        let (s, c) = (self.theta0.sin(), self.theta0.cos());
        (
            DVector::from_vec(vec![l * s, -l * c]),
            DVector::from_vec(vec![l * self.omega0 * c, l * self.omega0 * s]),
        )
    }

    fn initial_sensitivity(&self, _rho: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let (s, c) = (self.theta0.sin(), self.theta0.cos());
        (
            DMatrix::from_column_slice(2, 1, &[s, -c]),
            DMatrix::from_column_slice(2, 1, &[self.omega0 * c, self.omega0 * s]),
        )
    }
}

impl ComplexDynamics for Pendulum {
    fn mass_c(&self, _t: f64, _q: &DVector<C64>, _rho: &DVector<C64>, _regime: Regime) -> DMatrix<C64> {
        DMatrix::identity(2, 2) * Complex::new(self.mass, 0.0)
    }

    fn force_c(
        &self,
        _t: f64,
        _q: &DVector<C64>,
        _v: &DVector<C64>,
        _rho: &DVector<C64>,
        _regime: Regime,
    ) -> DVector<C64> {
        DVector::from_vec(vec![
            Complex::new(0.0, 0.0),
            Complex::new(-self.mass * self.gravity, 0.0),
        ])
    }

    fn constraints_c(
        &self,
        _t: f64,
        q: &DVector<C64>,
        rho: &DVector<C64>,
        _regime: Regime,
    ) -> ComplexConstraintEval {
        let l = rho[0];
        let phi = DVector::from_vec(vec![q[0] * q[0] + q[1] * q[1] - l * l]);
        let two = Complex::new(2.0, 0.0);
        let phi_q = DMatrix::from_row_slice(1, 2, &[two * q[0], two * q[1]]);
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
        let two = Complex::new(2.0, 0.0);
        DMatrix::from_row_slice(1, 2, &[two * u[0], two * u[1]])
    }

    fn initial_state_c(&self, rho: &DVector<C64>) -> (DVector<C64>, DVector<C64>) {
        let l = rho[0];
        let s = Complex::new(self.theta0.sin(), 0.0);
        let c = Complex::new(self.theta0.cos(), 0.0);
        let w = Complex::new(self.omega0, 0.0);
        (
            DVector::from_vec(vec![l * s, -l * c]),
            DVector::from_vec(vec![l * w * c, l * w * s]),
        )
    }
}
