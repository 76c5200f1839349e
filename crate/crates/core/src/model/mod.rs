//! Data model for hybrid mechanical systems.
//!
//! A system is described by a [`Model`] implementation supplying the mass
//! matrix, generalized forces, kinematic constraints, event guards, jump maps,
//! running/terminal costs, initial conditions, and all partial derivatives the
//! tangent-linear machinery needs. Derivatives of matrix-valued quantities are
//! supplied as directional contractions (e.g. `d(M u)/dq` for a fixed vector
//! `u`) instead of dense third-order tensors.

pub mod complex;
mod packing;
mod validate;

pub use packing::{pack_canonical, unpack_canonical, CanonicalLayout};
pub use validate::{validate_model, PartialCheck, ValidationOptions, ValidationReport};

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{CoreError, CoreResult};

/// Tag of the active constraint-set / equation-of-motion branch.
///
/// Regime 0 is the initial regime; events may switch it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Regime(pub u32);

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Problem dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dimensions {
    /// Number of generalized coordinates.
    pub n: usize,
    /// Number of position constraints in the initial regime (0 when unconstrained).
    pub m: usize,
    /// Number of parameters.
    pub p: usize,
    /// Number of event functions.
    pub e: usize,
}

impl Dimensions {
    pub fn new(n: usize, m: usize, p: usize, e: usize) -> CoreResult<Self> {
        let dims = Self { n, m, p, e };
        dims.validate()?;
        Ok(dims)
    }

    /// Degrees of freedom `f = n - m` in the initial regime.
    pub fn f(&self) -> usize {
        self.n - self.m
    }

    pub fn validate(&self) -> CoreResult<()> {
        if self.n < 1 {
            return Err(CoreError::Configuration("n must be >= 1".into()));
        }
        if self.m >= self.n {
            return Err(CoreError::Configuration(format!(
                "m = {} must satisfy 0 <= m < n = {}",
                self.m, self.n
            )));
        }
        if self.p < 1 {
            return Err(CoreError::Configuration("p must be >= 1".into()));
        }
        Ok(())
    }
}

/// Parameter vector `rho` (length `p`, model-specific units).
pub type ParameterVector = DVector<f64>;

/// Instantaneous state of the hybrid system.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridState {
    pub t: f64,
    /// Generalized positions, length `n`.
    pub q: DVector<f64>,
    /// Generalized velocities, length `n`.
    pub v: DVector<f64>,
    /// Quadrature (accumulated running cost).
    pub z: f64,
    /// Active constraint/EOM regime.
    pub regime: Regime,
}

impl HybridState {
    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.z.is_finite()
            && self.q.iter().all(|x| x.is_finite())
            && self.v.iter().all(|x| x.is_finite())
    }
}

/// Parameter sensitivities of the state.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityBundle {
    /// `dq/drho`, `n x p`.
    pub dq_drho: DMatrix<f64>,
    /// `dv/drho`, `n x p`.
    pub dv_drho: DMatrix<f64>,
    /// `dz/drho`, `1 x p`.
    pub dz_drho: RowDVector<f64>,
    /// `dlambda/drho` (exact or estimated multipliers), `m x p`;
    /// `None` for unconstrained runs.
    pub dlambda_drho: Option<DMatrix<f64>>,
}

impl SensitivityBundle {
    pub fn zeros(n: usize, p: usize) -> Self {
        Self {
            dq_drho: DMatrix::zeros(n, p),
            dv_drho: DMatrix::zeros(n, p),
            dz_drho: RowDVector::zeros(p),
            dlambda_drho: None,
        }
    }

    pub fn check_dims(&self, n: usize, p: usize) -> CoreResult<()> {
        if self.dq_drho.shape() != (n, p) || self.dv_drho.shape() != (n, p) {
            return Err(CoreError::Dimension {
                callback: "SensitivityBundle",
                detail: format!(
                    "expected {n}x{p} position/velocity sensitivities, got {:?} and {:?}",
                    self.dq_drho.shape(),
                    self.dv_drho.shape()
                ),
            });
        }
        if self.dz_drho.len() != p {
            return Err(CoreError::Dimension {
                callback: "SensitivityBundle",
                detail: format!("expected 1x{p} quadrature sensitivity, got {}", self.dz_drho.len()),
            });
        }
        Ok(())
    }
}

/// Record of one localized event with states and sensitivities on both sides.
#[derive(Debug, Clone)]
pub struct EventRecord {
    pub t_eve: f64,
    pub event_index: usize,
    pub state_pre: HybridState,
    pub state_post: HybridState,
    pub sens_pre: SensitivityBundle,
    pub sens_post: SensitivityBundle,
    /// Sensitivity of the event time, `1 x p`.
    pub dt_drho: RowDVector<f64>,
}

impl EventRecord {
    /// Positions and quadrature must be continuous across the event; the
    /// constructor rejects any pair violating that exactly.
    pub fn new(
        t_eve: f64,
        event_index: usize,
        state_pre: HybridState,
        state_post: HybridState,
        sens_pre: SensitivityBundle,
        sens_post: SensitivityBundle,
        dt_drho: RowDVector<f64>,
    ) -> CoreResult<Self> {
        if state_pre.q != state_post.q {
            return Err(CoreError::Configuration(format!(
                "event at t = {t_eve}: position changed across the event"
            )));
        }
        if state_pre.z != state_post.z {
            return Err(CoreError::Configuration(format!(
                "event at t = {t_eve}: quadrature changed across the event"
            )));
        }
        Ok(Self {
            t_eve,
            event_index,
            state_pre,
            state_post,
            sens_pre,
            sens_post,
            dt_drho,
        })
    }
}

/// Generalized force and its partials, all from one evaluation.
#[derive(Debug, Clone)]
pub struct ForceEval {
    /// `F`, length `n`.
    pub f: DVector<f64>,
    /// `dF/dq`, `n x n`.
    pub f_q: DMatrix<f64>,
    /// `dF/dv`, `n x n`.
    pub f_v: DMatrix<f64>,
    /// `dF/drho`, `n x p`.
    pub f_rho: DMatrix<f64>,
}

/// Position constraints and first/second time-parameter partials.
///
/// Second derivatives purely in `q` are exposed as directional contractions on
/// the [`Model`] trait, not here.
#[derive(Debug, Clone)]
pub struct ConstraintEval {
    /// `Phi`, length `m`.
    pub phi: DVector<f64>,
    /// `dPhi/dq`, `m x n`.
    pub phi_q: DMatrix<f64>,
    /// `dPhi/dt`, length `m`.
    pub phi_t: DVector<f64>,
    /// `dPhi/drho`, `m x p`.
    pub phi_rho: DMatrix<f64>,
    /// `d2Phi/dt dq`, `m x n`.
    pub phi_tq: DMatrix<f64>,
    /// `d2Phi/dt2`, length `m`.
    pub phi_tt: DVector<f64>,
    /// `d2Phi/dt drho`, `m x p`.
    pub phi_trho: DMatrix<f64>,
}

impl ConstraintEval {
    /// Constraints without explicit time or parameter dependence.
    pub fn scleronomic(phi: DVector<f64>, phi_q: DMatrix<f64>, p: usize) -> Self {
        let m = phi.len();
        let n = phi_q.ncols();
        Self {
            phi,
            phi_q,
            phi_t: DVector::zeros(m),
            phi_rho: DMatrix::zeros(m, p),
            phi_tq: DMatrix::zeros(m, n),
            phi_tt: DVector::zeros(m),
            phi_trho: DMatrix::zeros(m, p),
        }
    }

    /// Empty constraint set (unconstrained regime).
    pub fn empty(n: usize, p: usize) -> Self {
        Self::scleronomic(DVector::zeros(0), DMatrix::zeros(0, n), p)
    }

    pub fn m(&self) -> usize {
        self.phi.len()
    }
}

/// Scalar event guard `r(q)` and its gradient.
#[derive(Debug, Clone)]
pub struct EventEval {
    pub r: f64,
    /// `dr/dq`, `1 x n`.
    pub dr_dq: RowDVector<f64>,
}

/// Which zero crossings of the guard fire the event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CrossingDirection {
    /// Any sign change.
    #[default]
    Any,
    /// Only negative-to-positive crossings.
    Rising,
    /// Only positive-to-negative crossings.
    Falling,
}

/// What happens to the state at an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JumpKind {
    /// Explicit jump map `h` applied to the independent velocities.
    VelocityJump,
    /// Velocities continuous; the vector field switches (unconstrained form).
    AccelChange,
    /// Constraint set changes; post velocities from the impulsive saddle solve.
    DaeImpulse,
    /// Constraint/EOM change under the penalty formulation; velocities
    /// continuous, post-event constraint violation tolerated.
    EomTransition,
}

/// Static description of one event.
#[derive(Debug, Clone, Copy)]
pub struct EventSpec {
    pub kind: JumpKind,
    pub post_regime: Regime,
    pub direction: CrossingDirection,
}

/// Jump map `h` on the independent (dof) velocities and its partials.
///
/// Widths: `h` has length `f_post`; `h_v` is `f_post x f_pre`; `h_q` is
/// `f_post x n` (the position argument is the full coordinate vector).
#[derive(Debug, Clone)]
pub struct JumpEval {
    pub h: DVector<f64>,
    pub h_t: DVector<f64>,
    pub h_q: DMatrix<f64>,
    pub h_v: DMatrix<f64>,
    pub h_rho: DMatrix<f64>,
}

impl JumpEval {
    /// Identity jump (velocities pass through unchanged).
    pub fn identity(v_dof: &DVector<f64>, n: usize, p: usize) -> Self {
        let f = v_dof.len();
        Self {
            h: v_dof.clone(),
            h_t: DVector::zeros(f),
            h_q: DMatrix::zeros(f, n),
            h_v: DMatrix::identity(f, f),
            h_rho: DMatrix::zeros(f, p),
        }
    }
}

/// Running cost `g(t, q, v, vdot, lambda, rho)` and its partials.
#[derive(Debug, Clone)]
pub struct CostEval {
    pub g: f64,
    pub g_q: RowDVector<f64>,
    pub g_v: RowDVector<f64>,
    pub g_vdot: RowDVector<f64>,
    pub g_lambda: RowDVector<f64>,
    pub g_rho: RowDVector<f64>,
}

impl CostEval {
    pub fn zero(n: usize, m: usize, p: usize) -> Self {
        Self {
            g: 0.0,
            g_q: RowDVector::zeros(n),
            g_v: RowDVector::zeros(n),
            g_vdot: RowDVector::zeros(n),
            g_lambda: RowDVector::zeros(m),
            g_rho: RowDVector::zeros(p),
        }
    }
}

/// Terminal cost `w(t, q, v, rho)` and its partials.
#[derive(Debug, Clone)]
pub struct TerminalCostEval {
    pub w: f64,
    pub w_q: RowDVector<f64>,
    pub w_v: RowDVector<f64>,
    pub w_rho: RowDVector<f64>,
}

impl TerminalCostEval {
    pub fn zero(n: usize, p: usize) -> Self {
        Self {
            w: 0.0,
            w_q: RowDVector::zeros(n),
            w_v: RowDVector::zeros(n),
            w_rho: RowDVector::zeros(p),
        }
    }
}

/// Contract every user model must satisfy.
///
/// All methods are pure functions of their arguments; implementations must be
/// immutable after construction so a model can be shared across concurrent
/// propagations. The `regime` argument selects the active equation-of-motion
/// branch and constraint set; models whose dynamics never switch simply
/// ignore it. Derivative conventions:
///
/// * `mass_dq_mul(u)` returns `d(M u)/dq` (`n x n`) for a fixed `u`; likewise
///   `mass_drho_mul` (`n x p`). The mass matrix is assumed to have no explicit
///   time dependence.
/// * `phi_qq_mul(u)` returns `d(Phi_q u)/dq` (`m x n`); `phi_qq_tr_mul(w)`
///   returns `d(Phi_q^T w)/dq` (`n x n`); the `qrho` variants differentiate
///   with respect to `rho` instead.
/// * Third-order contractions (`phi_qq_mul_dq` and friends) default to zero,
///   which is exact whenever the constraints are at most quadratic in `q` and
///   at most linear in `t` (all built-in models). Models with higher-order
///   constraint nonlinearities must override them.
/// * For velocity-jump events, `jump` consumes the independent velocities in
///   the pre-event partition's ascending index order and produces the
///   post-event independent velocities in the post-event partition's order.
pub trait Model: Sync {
    fn dims(&self) -> Dimensions;

    /// Number of position constraints in `regime`.
    fn constraint_count(&self, _regime: Regime) -> usize {
        self.dims().m
    }

    /// Optional hint naming coordinates preferred as degrees of freedom.
    fn preferred_dof(&self, _regime: Regime) -> Option<Vec<usize>> {
        None
    }

    // --- mass -------------------------------------------------------------

    fn mass(&self, t: f64, q: &DVector<f64>, rho: &DVector<f64>, regime: Regime)
        -> DMatrix<f64>;

    /// `d(M u)/dq`, `n x n`.
    fn mass_dq_mul(
        &self,
        _t: f64,
        _q: &DVector<f64>,
        _rho: &DVector<f64>,
        _regime: Regime,
        _u: &DVector<f64>,
    ) -> DMatrix<f64> {
        let n = self.dims().n;
        DMatrix::zeros(n, n)
    }

    /// `d(M u)/drho`, `n x p`.
    fn mass_drho_mul(
        &self,
        _t: f64,
        _q: &DVector<f64>,
        _rho: &DVector<f64>,
        _regime: Regime,
        _u: &DVector<f64>,
    ) -> DMatrix<f64> {
        let d = self.dims();
        DMatrix::zeros(d.n, d.p)
    }

    // --- forces -----------------------------------------------------------

    fn force(
        &self,
        t: f64,
        q: &DVector<f64>,
        v: &DVector<f64>,
        rho: &DVector<f64>,
        regime: Regime,
    ) -> ForceEval;

    // --- constraints --------------------------------------------------------

    fn constraints(
        &self,
        _t: f64,
        _q: &DVector<f64>,
        _rho: &DVector<f64>,
        _regime: Regime,
    ) -> ConstraintEval {
        let d = self.dims();
        ConstraintEval::empty(d.n, d.p)
    }

    /// `d(Phi_q u)/dq`, `m x n`.
    fn phi_qq_mul(
        &self,
        _t: f64,
        _q: &DVector<f64>,
        _rho: &DVector<f64>,
        regime: Regime,
        _u: &DVector<f64>,
    ) -> DMatrix<f64> {
        DMatrix::zeros(self.constraint_count(regime), self.dims().n)
    }

    /// `d(Phi_q^T w)/dq`, `n x n`.
    fn phi_qq_tr_mul(
        &self,
        _t: f64,
        _q: &DVector<f64>,
        _rho: &DVector<f64>,
        _regime: Regime,
        _w: &DVector<f64>,
    ) -> DMatrix<f64> {
        let n = self.dims().n;
        DMatrix::zeros(n, n)
    }

    /// `d(Phi_q u)/drho`, `m x p`.
    fn phi_qrho_mul(
        &self,
        _t: f64,
        _q: &DVector<f64>,
        _rho: &DVector<f64>,
        regime: Regime,
        _u: &DVector<f64>,
    ) -> DMatrix<f64> {
        DMatrix::zeros(self.constraint_count(regime), self.dims().p)
    }

    /// `d(Phi_q^T w)/drho`, `n x p`.
    fn phi_qrho_tr_mul(
        &self,
        _t: f64,
        _q: &DVector<f64>,
        _rho: &DVector<f64>,
        _regime: Regime,
        _w: &DVector<f64>,
    ) -> DMatrix<f64> {
        let d = self.dims();
        DMatrix::zeros(d.n, d.p)
    }

    // --- third-order constraint contractions (default zero) ----------------

    /// `d/dq [ d(Phi_q u)/dq . u ]`, `m x n`.
    fn phi_qq_mul_dq(
        &self,
        _t: f64,
        _q: &DVector<f64>,
        _rho: &DVector<f64>,
        regime: Regime,
        _u: &DVector<f64>,
    ) -> DMatrix<f64> {
        DMatrix::zeros(self.constraint_count(regime), self.dims().n)
    }

    /// `d/dq [ Phi_tq u ]`, `m x n`.
    fn phi_tq_mul_dq(
        &self,
        _t: f64,
        _q: &DVector<f64>,
        _rho: &DVector<f64>,
        regime: Regime,
        _u: &DVector<f64>,
    ) -> DMatrix<f64> {
        DMatrix::zeros(self.constraint_count(regime), self.dims().n)
    }

    /// `d(Phi_tt)/dq`, `m x n`.
    fn phi_tt_dq(
        &self,
        _t: f64,
        _q: &DVector<f64>,
        _rho: &DVector<f64>,
        regime: Regime,
    ) -> DMatrix<f64> {
        DMatrix::zeros(self.constraint_count(regime), self.dims().n)
    }

    /// `d/drho [ d(Phi_q u)/dq . u ]`, `m x p`.
    fn phi_qq_mul_drho(
        &self,
        _t: f64,
        _q: &DVector<f64>,
        _rho: &DVector<f64>,
        regime: Regime,
        _u: &DVector<f64>,
    ) -> DMatrix<f64> {
        DMatrix::zeros(self.constraint_count(regime), self.dims().p)
    }

    /// `d/drho [ Phi_tq u ]`, `m x p`.
    fn phi_tq_mul_drho(
        &self,
        _t: f64,
        _q: &DVector<f64>,
        _rho: &DVector<f64>,
        regime: Regime,
        _u: &DVector<f64>,
    ) -> DMatrix<f64> {
        DMatrix::zeros(self.constraint_count(regime), self.dims().p)
    }

    /// `d(Phi_tt)/drho`, `m x p`.
    fn phi_tt_drho(
        &self,
        _t: f64,
        _q: &DVector<f64>,
        _rho: &DVector<f64>,
        regime: Regime,
    ) -> DMatrix<f64> {
        DMatrix::zeros(self.constraint_count(regime), self.dims().p)
    }

    // --- events -------------------------------------------------------------

    fn num_events(&self) -> usize {
        0
    }

    fn event(&self, _index: usize, _q: &DVector<f64>) -> EventEval {
        unimplemented!("model declares no events")
    }

    fn event_spec(&self, _index: usize) -> EventSpec {
        unimplemented!("model declares no events")
    }

    /// Jump map on the independent velocities; only consulted for
    /// [`JumpKind::VelocityJump`] events.
    fn jump(
        &self,
        _index: usize,
        _t: f64,
        _q: &DVector<f64>,
        v_dof_minus: &DVector<f64>,
        _rho: &DVector<f64>,
    ) -> JumpEval {
        let d = self.dims();
        JumpEval::identity(v_dof_minus, d.n, d.p)
    }

    // --- costs --------------------------------------------------------------

    fn running_cost(
        &self,
        _t: f64,
        _q: &DVector<f64>,
        _v: &DVector<f64>,
        _vdot: &DVector<f64>,
        lambda: &DVector<f64>,
        _rho: &DVector<f64>,
    ) -> CostEval {
        let d = self.dims();
        CostEval::zero(d.n, lambda.len(), d.p)
    }

    fn terminal_cost(
        &self,
        _t: f64,
        _q: &DVector<f64>,
        _v: &DVector<f64>,
        _rho: &DVector<f64>,
    ) -> TerminalCostEval {
        let d = self.dims();
        TerminalCostEval::zero(d.n, d.p)
    }

    // --- initial conditions --------------------------------------------------

    /// `(q0(rho), v0(rho))`.
    fn initial_state(&self, rho: &DVector<f64>) -> (DVector<f64>, DVector<f64>);

    /// `(dq0/drho, dv0/drho)`, each `n x p`.
    fn initial_sensitivity(&self, rho: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let d = self.dims();
        let _ = rho;
        (DMatrix::zeros(d.n, d.p), DMatrix::zeros(d.n, d.p))
    }
}
