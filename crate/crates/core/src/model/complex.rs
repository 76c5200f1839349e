//! Complex promotion of model dynamics, used by the complex-step oracle.
//!
//! Only the quantities the smooth right-hand sides need are promoted: mass,
//! force, constraint values/first derivatives, and the directional second
//! derivative `d(Phi_q u)/dq`. Time stays real; the parameter vector carries
//! the imaginary perturbation.

use nalgebra::{Complex, DMatrix, DVector};

use super::{Model, Regime};

pub type C64 = Complex<f64>;

/// Constraint pieces needed by the complex-promoted right-hand sides.
#[derive(Debug, Clone)]
pub struct ComplexConstraintEval {
    pub phi: DVector<C64>,
    pub phi_q: DMatrix<C64>,
    pub phi_t: DVector<C64>,
    pub phi_tq: DMatrix<C64>,
    pub phi_tt: DVector<C64>,
}

impl ComplexConstraintEval {
    pub fn scleronomic(phi: DVector<C64>, phi_q: DMatrix<C64>) -> Self {
        let m = phi.len();
        let n = phi_q.ncols();
        Self {
            phi,
            phi_q,
            phi_t: DVector::zeros(m),
            phi_tq: DMatrix::zeros(m, n),
            phi_tt: DVector::zeros(m),
        }
    }

    pub fn empty(n: usize) -> Self {
        Self::scleronomic(DVector::zeros(0), DMatrix::zeros(0, n))
    }
}

/// Models whose dynamics evaluate on complex-promoted parameters and states.
pub trait ComplexDynamics: Model {
    fn mass_c(
        &self,
        t: f64,
        q: &DVector<C64>,
        rho: &DVector<C64>,
        regime: Regime,
    ) -> DMatrix<C64>;

    fn force_c(
        &self,
        t: f64,
        q: &DVector<C64>,
        v: &DVector<C64>,
        rho: &DVector<C64>,
        regime: Regime,
    ) -> DVector<C64>;

    fn constraints_c(
        &self,
        _t: f64,
        _q: &DVector<C64>,
        _rho: &DVector<C64>,
        _regime: Regime,
    ) -> ComplexConstraintEval {
        ComplexConstraintEval::empty(self.dims().n)
    }

    /// `d(Phi_q u)/dq`, complex-promoted.
    fn phi_qq_mul_c(
        &self,
        _t: f64,
        _q: &DVector<C64>,
        _rho: &DVector<C64>,
        regime: Regime,
        _u: &DVector<C64>,
    ) -> DMatrix<C64> {
        DMatrix::zeros(self.constraint_count(regime), self.dims().n)
    }

    fn initial_state_c(&self, rho: &DVector<C64>) -> (DVector<C64>, DVector<C64>);
}

/// Promote a real vector to complex.
pub fn promote_vec(x: &DVector<f64>) -> DVector<C64> {
    x.map(|v| C64::new(v, 0.0))
}

/// Promote a real matrix to complex.
pub fn promote_mat(x: &DMatrix<f64>) -> DMatrix<C64> {
    x.map(|v| C64::new(v, 0.0))
}
