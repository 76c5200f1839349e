//! Smooth dynamics assembly for the three formulations: the unconstrained
//! ODE, the index-1 DAE (acceleration-level constraints, saddle solve), and
//! the penalty ODE (constraints embedded as a stiff spring-damper correction
//! with estimated multipliers).
//!
//! Sign conventions: the equations of motion read `M vdot = F` when
//! unconstrained and `M vdot + Phi_q^T lambda = F`, `Phi_q vdot = C` when
//! constrained, with the acceleration-level right-hand side
//! `C = -( d(Phi_q v)/dq . v + 2 Phi_tq v + Phi_tt )`.

use nalgebra::linalg::LU;
use nalgebra::{DMatrix, DVector, Dyn};

use crate::error::{CoreError, CoreResult};
use crate::model::{ConstraintEval, ForceEval, Model, Regime};

/// Condition-number guard for dense factorizations.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Penalty matrix specification (`alpha`).
#[derive(Debug, Clone)]
pub enum AlphaSpec {
    /// `alpha = value * I`.
    Uniform(f64),
    /// Full symmetric positive definite `m x m` matrix.
    Matrix(DMatrix<f64>),
}

impl AlphaSpec {
    /// Apply `alpha` to the rows of an `m x k` matrix.
    pub fn mul_mat(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            AlphaSpec::Uniform(a) => x * *a,
            AlphaSpec::Matrix(a) => a * x,
        }
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            AlphaSpec::Uniform(a) => x * *a,
            AlphaSpec::Matrix(a) => a * x,
        }
    }

    pub fn validate(&self, m: usize) -> CoreResult<()> {
        match self {
            AlphaSpec::Uniform(a) => {
                if !a.is_finite() || *a <= 0.0 {
                    return Err(CoreError::Configuration(format!(
                        "penalty factor must be positive and finite, got {a}"
                    )));
                }
            }
            AlphaSpec::Matrix(a) => {
                if a.nrows() != m || a.ncols() != m {
                    return Err(CoreError::Configuration(format!(
                        "penalty matrix must be {m}x{m}, got {}x{}",
                        a.nrows(),
                        a.ncols()
                    )));
                }
                if (a - a.transpose()).amax() > 1e-10 * (1.0 + a.amax()) {
                    return Err(CoreError::Configuration(
                        "penalty matrix must be symmetric".into(),
                    ));
                }
                if a.clone().cholesky().is_none() {
                    return Err(CoreError::Configuration(
                        "penalty matrix must be positive definite".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Parameters of the penalty formulation.
#[derive(Debug, Clone)]
pub struct PenaltyConfig {
    pub alpha: AlphaSpec,
    /// Damping ratio (dimensionless).
    pub xi: f64,
    /// Natural frequency \[rad/s\].
    pub omega: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            alpha: AlphaSpec::Uniform(1e7),
            xi: 1.0,
            omega: 10.0,
        }
    }
}

impl PenaltyConfig {
    pub fn validate(&self, m: usize) -> CoreResult<()> {
        self.alpha.validate(m)?;
        if !(self.xi > 0.0 && self.xi.is_finite()) {
            return Err(CoreError::Configuration("xi must be positive".into()));
        }
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return Err(CoreError::Configuration("omega must be positive".into()));
        }
        Ok(())
    }
}

/// Which smooth dynamics model drives the propagation.
#[derive(Debug, Clone)]
pub enum Formulation {
    /// Unconstrained second-order ODE.
    Ode,
    /// Index-1 DAE with exact Lagrange multipliers.
    DaeIndex1,
    /// Penalty ODE with estimated multipliers.
    Penalty(PenaltyConfig),
}

impl Formulation {
    pub fn name(&self) -> &'static str {
        match self {
            Formulation::Ode => "ode",
            Formulation::DaeIndex1 => "dae1",
            Formulation::Penalty(_) => "penalty",
        }
    }
}

/// Acceleration and multipliers of the index-1 DAE.
#[derive(Debug, Clone)]
pub struct DaeSolution {
    pub vdot: DVector<f64>,
    pub lambda: DVector<f64>,
}

/// Partial derivatives of the equation-of-motion right-hand side
/// `f = M^{-1} F` (or the penalty analogue).
#[derive(Debug, Clone)]
pub struct EomPartials {
    pub f_q: DMatrix<f64>,
    pub f_v: DMatrix<f64>,
    pub f_rho: DMatrix<f64>,
}

/// Partial derivatives of the DAE solution map `(vdot, lambda)(t, q, v, rho)`.
#[derive(Debug, Clone)]
pub struct DaePartials {
    pub vdot_q: DMatrix<f64>,
    pub vdot_v: DMatrix<f64>,
    pub vdot_rho: DMatrix<f64>,
    pub lambda_q: DMatrix<f64>,
    pub lambda_v: DMatrix<f64>,
    pub lambda_rho: DMatrix<f64>,
}

/// Building blocks of the penalty tangent-linear model: partials of the
/// stabilized force and directional derivatives of the extended mass matrix.
#[derive(Debug, Clone)]
pub struct PenaltyPartials {
    /// `d(Fbar)/dq`, `n x n`.
    pub force_q: DMatrix<f64>,
    /// `d(Fbar)/dv`, `n x n`.
    pub force_v: DMatrix<f64>,
    /// `d(Fbar)/drho`, `n x p`.
    pub force_rho: DMatrix<f64>,
    /// `d(Mbar u)/dq` with `u = vdot`, `n x n`.
    pub mass_dq_vdot: DMatrix<f64>,
    /// `d(Mbar u)/drho` with `u = vdot`, `n x p`.
    pub mass_drho_vdot: DMatrix<f64>,
}

/// Partials of the estimated multipliers at frozen acceleration.
#[derive(Debug, Clone)]
pub struct MultiplierPartials {
    pub lambda_q: DMatrix<f64>,
    pub lambda_v: DMatrix<f64>,
    pub lambda_vdot: DMatrix<f64>,
    pub lambda_rho: DMatrix<f64>,
}

// ---------------------------------------------------------------------------
// guarded dense factorizations
// ---------------------------------------------------------------------------

fn norm1(a: &DMatrix<f64>) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub(crate) struct GuardedLu {
    pub lu: LU<f64, Dyn, Dyn>,
    pub cond: f64,
}

/// LU with partial pivoting plus a 1-norm condition estimate.
pub(crate) fn guarded_lu(mat: &DMatrix<f64>) -> CoreResult<GuardedLu> {
    let lu = mat.clone().lu();
    let inv = lu.try_inverse().ok_or(CoreError::SingularMass { cond: f64::INFINITY })?;
    let cond = norm1(mat) * norm1(&inv);
    if !cond.is_finite() || cond > CONDITION_LIMIT {
        return Err(CoreError::SingularMass { cond });
    }
    Ok(GuardedLu { lu, cond })
}

/// Factorized saddle matrix `[[M, Phi_q^T], [Phi_q, 0]]`.
pub(crate) struct SaddleLu {
    lu: LU<f64, Dyn, Dyn>,
    n: usize,
    m: usize,
}

impl SaddleLu {
    pub fn solve_mat(&self, top: &DMatrix<f64>, bot: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let k = top.ncols();
        let mut rhs = DMatrix::zeros(self.n + self.m, k);
        rhs.view_mut((0, 0), (self.n, k)).copy_from(top);
        rhs.view_mut((self.n, 0), (self.m, k)).copy_from(bot);
        self.lu.solve_mut(&mut rhs);
        (
            rhs.view((0, 0), (self.n, k)).into(),
            rhs.view((self.n, 0), (self.m, k)).into(),
        )
    }

    pub fn solve_vec(&self, top: &DVector<f64>, bot: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let (x, y) = self.solve_mat(
            &DMatrix::from_column_slice(self.n, 1, top.as_slice()),
            &DMatrix::from_column_slice(self.m, 1, bot.as_slice()),
        );
        (x.column(0).into(), y.column(0).into())
    }
}

pub(crate) fn saddle_lu(mass: &DMatrix<f64>, phi_q: &DMatrix<f64>) -> CoreResult<SaddleLu> {
    let n = mass.nrows();
    let m = phi_q.nrows();
    let mut k = DMatrix::zeros(n + m, n + m);
    k.view_mut((0, 0), (n, n)).copy_from(mass);
    k.view_mut((0, n), (n, m)).copy_from(&phi_q.transpose());
    k.view_mut((n, 0), (m, n)).copy_from(phi_q);
    let lu = k.clone().lu();
    let inv = match lu.try_inverse() {
        Some(inv) => inv,
        None => return Err(diagnose_saddle_failure(phi_q, f64::INFINITY)),
    };
    let cond = norm1(&k) * norm1(&inv);
    if !cond.is_finite() || cond > CONDITION_LIMIT {
        return Err(diagnose_saddle_failure(phi_q, cond));
    }
    Ok(SaddleLu { lu, n, m })
}

/// A failed saddle factorization is attributed to the constraint Jacobian
/// when it is rank deficient, otherwise to the mass matrix.
fn diagnose_saddle_failure(phi_q: &DMatrix<f64>, cond: f64) -> CoreError {
    let m = phi_q.nrows();
    if m > 0 {
        let sv = phi_q.clone().svd(false, false).singular_values;
        let smax = sv.max();
        let rank = sv.iter().filter(|&&s| s > 1e-12 * smax.max(1e-300)).count();
        if rank < m {
            return CoreError::RankDeficiency {
                estimated_rank: rank,
                required: m,
            };
        }
    }
    CoreError::SingularMass { cond }
}

// ---------------------------------------------------------------------------
// unconstrained ODE
// ---------------------------------------------------------------------------

/// `vdot = M^{-1} F`.
pub fn ode_accel(
    model: &dyn Model,
    t: f64,
    q: &DVector<f64>,
    v: &DVector<f64>,
    rho: &DVector<f64>,
    regime: Regime,
) -> CoreResult<DVector<f64>> {
    let mass = model.mass(t, q, rho, regime);
    let force = model.force(t, q, v, rho, regime);
    let glu = guarded_lu(&mass)?;
    let vdot = glu
        .lu
        .solve(&force.f)
        .ok_or(CoreError::SingularMass { cond: glu.cond })?;
    debug_assert!(
        (&mass * &vdot - &force.f).amax()
            <= 1e-10 * (1.0 + force.f.amax() + mass.amax() * vdot.amax()),
        "mass solve residual too large"
    );
    Ok(vdot)
}

/// Partials of `f = M^{-1} F`: each block solves `M f_z = F_z - d(M vdot)/dz`.
pub fn eom_partials(
    model: &dyn Model,
    t: f64,
    q: &DVector<f64>,
    v: &DVector<f64>,
    rho: &DVector<f64>,
    regime: Regime,
    vdot: &DVector<f64>,
) -> CoreResult<EomPartials> {
    let mass = model.mass(t, q, rho, regime);
    let force = model.force(t, q, v, rho, regime);
    let glu = guarded_lu(&mass)?;
    let solve = |rhs: DMatrix<f64>| -> DMatrix<f64> {
        let mut x = rhs;
        glu.lu.solve_mut(&mut x);
        x
    };
    Ok(EomPartials {
        f_q: solve(&force.f_q - model.mass_dq_mul(t, q, rho, regime, vdot)),
        f_v: solve(force.f_v.clone()),
        f_rho: solve(&force.f_rho - model.mass_drho_mul(t, q, rho, regime, vdot)),
    })
}

// ---------------------------------------------------------------------------
// acceleration-level constraint right-hand side
// ---------------------------------------------------------------------------

/// `C` and its partials with respect to `q`, `v`, `rho`.
pub(crate) struct AccelConstraintRhs {
    pub c: DVector<f64>,
    pub c_q: DMatrix<f64>,
    pub c_v: DMatrix<f64>,
    pub c_rho: DMatrix<f64>,
}

pub(crate) fn accel_constraint_rhs(
    model: &dyn Model,
    t: f64,
    q: &DVector<f64>,
    v: &DVector<f64>,
    rho: &DVector<f64>,
    regime: Regime,
    ce: &ConstraintEval,
) -> AccelConstraintRhs {
    let dphiqv_dq = model.phi_qq_mul(t, q, rho, regime, v);
    let c = -(&dphiqv_dq * v + &ce.phi_tq * v * 2.0 + &ce.phi_tt);
    let c_v = -(&dphiqv_dq + &ce.phi_tq) * 2.0;
    let c_q = -(model.phi_qq_mul_dq(t, q, rho, regime, v)
        + model.phi_tq_mul_dq(t, q, rho, regime, v) * 2.0
        + model.phi_tt_dq(t, q, rho, regime));
    let c_rho = -(model.phi_qq_mul_drho(t, q, rho, regime, v)
        + model.phi_tq_mul_drho(t, q, rho, regime, v) * 2.0
        + model.phi_tt_drho(t, q, rho, regime));
    AccelConstraintRhs { c, c_q, c_v, c_rho }
}

// ---------------------------------------------------------------------------
// index-1 DAE
// ---------------------------------------------------------------------------

/// Precomputed evaluations shared by the DAE solve and its tangent model.
pub(crate) struct DaeWorkspace {
    pub ce: ConstraintEval,
    pub force: ForceEval,
    pub crhs: AccelConstraintRhs,
    pub saddle: SaddleLu,
    pub sol: DaeSolution,
}

pub(crate) fn dae_workspace(
    model: &dyn Model,
    t: f64,
    q: &DVector<f64>,
    v: &DVector<f64>,
    rho: &DVector<f64>,
    regime: Regime,
) -> CoreResult<DaeWorkspace> {
    let ce = model.constraints(t, q, rho, regime);
    let force = model.force(t, q, v, rho, regime);
    let mass = model.mass(t, q, rho, regime);
    if ce.m() == 0 {
        let glu = guarded_lu(&mass)?;
        let vdot = glu
            .lu
            .solve(&force.f)
            .ok_or(CoreError::SingularMass { cond: glu.cond })?;
        let crhs = accel_constraint_rhs(model, t, q, v, rho, regime, &ce);
        let saddle = saddle_lu(&mass, &ce.phi_q)?;
        return Ok(DaeWorkspace {
            ce,
            force,
            crhs,
            saddle,
            sol: DaeSolution {
                vdot,
                lambda: DVector::zeros(0),
            },
        });
    }
    let crhs = accel_constraint_rhs(model, t, q, v, rho, regime, &ce);
    let saddle = saddle_lu(&mass, &ce.phi_q)?;
    let (vdot, lambda) = saddle.solve_vec(&force.f, &crhs.c);
    debug_assert!(
        (&ce.phi_q * &vdot - &crhs.c).amax() <= 1e-9 * (1.0 + crhs.c.amax() + vdot.amax()),
        "acceleration-level constraint residual too large"
    );
    Ok(DaeWorkspace {
        ce,
        force,
        crhs,
        saddle,
        sol: DaeSolution { vdot, lambda },
    })
}

/// Solve the index-1 saddle system `[M Phi_q^T; Phi_q 0] [vdot; lambda] = [F; C]`.
pub fn dae_index1_solve(
    model: &dyn Model,
    t: f64,
    q: &DVector<f64>,
    v: &DVector<f64>,
    rho: &DVector<f64>,
    regime: Regime,
) -> CoreResult<DaeSolution> {
    Ok(dae_workspace(model, t, q, v, rho, regime)?.sol)
}

pub(crate) fn dae_partials_from(
    model: &dyn Model,
    t: f64,
    q: &DVector<f64>,
    rho: &DVector<f64>,
    regime: Regime,
    ws: &DaeWorkspace,
) -> DaePartials {
    let vdot = &ws.sol.vdot;
    let lambda = &ws.sol.lambda;
    let top_q = &ws.force.f_q
        - model.mass_dq_mul(t, q, rho, regime, vdot)
        - model.phi_qq_tr_mul(t, q, rho, regime, lambda);
    let bot_q = &ws.crhs.c_q - model.phi_qq_mul(t, q, rho, regime, vdot);
    let (vdot_q, lambda_q) = ws.saddle.solve_mat(&top_q, &bot_q);

    let (vdot_v, lambda_v) = ws.saddle.solve_mat(&ws.force.f_v, &ws.crhs.c_v);

    let top_rho = &ws.force.f_rho
        - model.mass_drho_mul(t, q, rho, regime, vdot)
        - model.phi_qrho_tr_mul(t, q, rho, regime, lambda);
    let bot_rho = &ws.crhs.c_rho - model.phi_qrho_mul(t, q, rho, regime, vdot);
    let (vdot_rho, lambda_rho) = ws.saddle.solve_mat(&top_rho, &bot_rho);

    DaePartials {
        vdot_q,
        vdot_v,
        vdot_rho,
        lambda_q,
        lambda_v,
        lambda_rho,
    }
}

/// Partials of the index-1 solution map; `sol` must come from
/// [`dae_index1_solve`] at the same point.
pub fn dae_partials(
    model: &dyn Model,
    t: f64,
    q: &DVector<f64>,
    v: &DVector<f64>,
    rho: &DVector<f64>,
    regime: Regime,
) -> CoreResult<DaePartials> {
    let ws = dae_workspace(model, t, q, v, rho, regime)?;
    Ok(dae_partials_from(model, t, q, rho, regime, &ws))
}

// ---------------------------------------------------------------------------
// penalty ODE
// ---------------------------------------------------------------------------

/// Shared pieces of the penalty assembly at one evaluation point.
pub(crate) struct PenaltyWorkspace {
    pub ce: ConstraintEval,
    pub force: ForceEval,
    /// `d(Phi_q v)/dq`.
    pub dphiqv_dq: DMatrix<f64>,
    /// Stabilization vector `s = -C + 2 xi omega Phidot + omega^2 Phi`.
    pub s: DVector<f64>,
    pub crhs: AccelConstraintRhs,
    pub m_bar_lu: GuardedLu,
    pub vdot: DVector<f64>,
}

pub(crate) fn penalty_workspace(
    model: &dyn Model,
    cfg: &PenaltyConfig,
    t: f64,
    q: &DVector<f64>,
    v: &DVector<f64>,
    rho: &DVector<f64>,
    regime: Regime,
) -> CoreResult<PenaltyWorkspace> {
    let ce = model.constraints(t, q, rho, regime);
    let force = model.force(t, q, v, rho, regime);
    let mass = model.mass(t, q, rho, regime);
    let crhs = accel_constraint_rhs(model, t, q, v, rho, regime, &ce);
    let dphiqv_dq = model.phi_qq_mul(t, q, rho, regime, v);
    let phidot = &ce.phi_q * v + &ce.phi_t;
    let s: DVector<f64> =
        -&crhs.c + &phidot * (2.0 * cfg.xi * cfg.omega) + &ce.phi * (cfg.omega * cfg.omega);
    let m_bar = &mass + ce.phi_q.transpose() * cfg.alpha.mul_mat(&ce.phi_q);
    let f_bar = &force.f - ce.phi_q.transpose() * cfg.alpha.mul_vec(&s);
    let m_bar_lu = guarded_lu(&m_bar)?;
    let vdot = m_bar_lu
        .lu
        .solve(&f_bar)
        .ok_or(CoreError::SingularMass { cond: m_bar_lu.cond })?;
    // backward-error scale: with stiff penalties the product Mbar vdot has
    // large cancelling intermediates, so the residual is meaningful relative
    // to |Mbar| |vproject| rather than |Fbar| alone
    debug_assert!(
        (&m_bar * &vdot - &f_bar).amax()
            <= 1e-10 * (1.0 + f_bar.amax() + m_bar.amax() * vdot.amax()),
        "penalty mass solve residual too large"
    );
    Ok(PenaltyWorkspace {
        ce,
        force,
        dphiqv_dq,
        s,
        crhs,
        m_bar_lu,
        vdot,
    })
}

/// `vdot = Mbar^{-1} Fbar` with `Mbar = M + Phi_q^T alpha Phi_q` and
/// `Fbar = F - Phi_q^T alpha s`.
pub fn penalty_accel(
    model: &dyn Model,
    cfg: &PenaltyConfig,
    t: f64,
    q: &DVector<f64>,
    v: &DVector<f64>,
    rho: &DVector<f64>,
    regime: Regime,
) -> CoreResult<DVector<f64>> {
    Ok(penalty_workspace(model, cfg, t, q, v, rho, regime)?.vdot)
}

/// Value of the stabilized force `Fbar = F - Phi_q^T alpha s`.
pub fn penalty_force_value(
    model: &dyn Model,
    cfg: &PenaltyConfig,
    t: f64,
    q: &DVector<f64>,
    v: &DVector<f64>,
    rho: &DVector<f64>,
    regime: Regime,
) -> DVector<f64> {
    let ce = model.constraints(t, q, rho, regime);
    let crhs = accel_constraint_rhs(model, t, q, v, rho, regime, &ce);
    let phidot = &ce.phi_q * v + &ce.phi_t;
    let s: DVector<f64> =
        -&crhs.c + &phidot * (2.0 * cfg.xi * cfg.omega) + &ce.phi * (cfg.omega * cfg.omega);
    let force = model.force(t, q, v, rho, regime);
    &force.f - ce.phi_q.transpose() * cfg.alpha.mul_vec(&s)
}

/// Value of the extended mass matrix `Mbar = M + Phi_q^T alpha Phi_q`.
pub fn penalty_mass_value(
    model: &dyn Model,
    cfg: &PenaltyConfig,
    t: f64,
    q: &DVector<f64>,
    rho: &DVector<f64>,
    regime: Regime,
) -> DMatrix<f64> {
    let ce = model.constraints(t, q, rho, regime);
    model.mass(t, q, rho, regime) + ce.phi_q.transpose() * cfg.alpha.mul_mat(&ce.phi_q)
}

/// Estimated multipliers `lambda* = alpha (Phiddot + 2 xi omega Phidot + omega^2 Phi)`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_multipliers(
    model: &dyn Model,
    cfg: &PenaltyConfig,
    t: f64,
    q: &DVector<f64>,
    v: &DVector<f64>,
    vdot: &DVector<f64>,
    rho: &DVector<f64>,
    regime: Regime,
) -> DVector<f64> {
    let ce = model.constraints(t, q, rho, regime);
    let crhs = accel_constraint_rhs(model, t, q, v, rho, regime, &ce);
    let phidot = &ce.phi_q * v + &ce.phi_t;
    let s = -&crhs.c + &phidot * (2.0 * cfg.xi * cfg.omega) + &ce.phi * (cfg.omega * cfg.omega);
    cfg.alpha.mul_vec(&(&ce.phi_q * vdot + s))
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn penalty_partials_from(
    model: &dyn Model,
    cfg: &PenaltyConfig,
    t: f64,
    q: &DVector<f64>,
    v: &DVector<f64>,
    rho: &DVector<f64>,
    regime: Regime,
    ws: &PenaltyWorkspace,
    vdot: &DVector<f64>,
) -> PenaltyPartials {
    let two_xw = 2.0 * cfg.xi * cfg.omega;
    let w2 = cfg.omega * cfg.omega;
    let phidot_q = &ws.dphiqv_dq + &ws.ce.phi_tq;
    let dphiqv_drho = model.phi_qrho_mul(t, q, rho, regime, v);
    let phidot_rho = &dphiqv_drho + &ws.ce.phi_trho;

    let s_q = -&ws.crhs.c_q + &phidot_q * two_xw + &ws.ce.phi_q * w2;
    let s_v = -&ws.crhs.c_v + &ws.ce.phi_q * two_xw;
    let s_rho = -&ws.crhs.c_rho + &phidot_rho * two_xw + &ws.ce.phi_rho * w2;

    let alpha_s = cfg.alpha.mul_vec(&ws.s);
    let phi_q_tr = ws.ce.phi_q.transpose();

    let force_q = &ws.force.f_q
        - model.phi_qq_tr_mul(t, q, rho, regime, &alpha_s)
        - &phi_q_tr * cfg.alpha.mul_mat(&s_q);
    let force_v = &ws.force.f_v - &phi_q_tr * cfg.alpha.mul_mat(&s_v);
    let force_rho = &ws.force.f_rho
        - model.phi_qrho_tr_mul(t, q, rho, regime, &alpha_s)
        - &phi_q_tr * cfg.alpha.mul_mat(&s_rho);

    let alpha_phiq_vdot = cfg.alpha.mul_vec(&(&ws.ce.phi_q * vdot));
    let mass_dq_vdot = model.mass_dq_mul(t, q, rho, regime, vdot)
        + model.phi_qq_tr_mul(t, q, rho, regime, &alpha_phiq_vdot)
        + &phi_q_tr * cfg.alpha.mul_mat(&model.phi_qq_mul(t, q, rho, regime, vdot));
    let mass_drho_vdot = model.mass_drho_mul(t, q, rho, regime, vdot)
        + model.phi_qrho_tr_mul(t, q, rho, regime, &alpha_phiq_vdot)
        + &phi_q_tr * cfg.alpha.mul_mat(&model.phi_qrho_mul(t, q, rho, regime, vdot));

    PenaltyPartials {
        force_q,
        force_v,
        force_rho,
        mass_dq_vdot,
        mass_drho_vdot,
    }
}

/// Tangent-model blocks of the penalty formulation at `(t, q, v, rho)` and
/// acceleration `vdot`.
#[allow(clippy::too_many_arguments)]
pub fn penalty_partials(
    model: &dyn Model,
    cfg: &PenaltyConfig,
    t: f64,
    q: &DVector<f64>,
    v: &DVector<f64>,
    rho: &DVector<f64>,
    regime: Regime,
    vdot: &DVector<f64>,
) -> CoreResult<PenaltyPartials> {
    let ws = penalty_workspace(model, cfg, t, q, v, rho, regime)?;
    Ok(penalty_partials_from(model, cfg, t, q, v, rho, regime, &ws, vdot))
}

/// Partials of `lambda*` at frozen acceleration, plus the acceleration
/// direction `d(lambda*)/dvdot = alpha Phi_q`.
#[allow(clippy::too_many_arguments)]
pub fn penalty_multiplier_partials(
    model: &dyn Model,
    cfg: &PenaltyConfig,
    t: f64,
    q: &DVector<f64>,
    v: &DVector<f64>,
    rho: &DVector<f64>,
    regime: Regime,
    vdot: &DVector<f64>,
) -> MultiplierPartials {
    let ce = model.constraints(t, q, rho, regime);
    let crhs = accel_constraint_rhs(model, t, q, v, rho, regime, &ce);
    let two_xw = 2.0 * cfg.xi * cfg.omega;
    let w2 = cfg.omega * cfg.omega;
    let dphiqv_dq = model.phi_qq_mul(t, q, rho, regime, v);
    let dphiqv_drho = model.phi_qrho_mul(t, q, rho, regime, v);
    let phidot_q = &dphiqv_dq + &ce.phi_tq;
    let phidot_rho = &dphiqv_drho + &ce.phi_trho;

    let s_q = -&crhs.c_q + &phidot_q * two_xw + &ce.phi_q * w2;
    let s_v = -&crhs.c_v + &ce.phi_q * two_xw;
    let s_rho = -&crhs.c_rho + &phidot_rho * two_xw + &ce.phi_rho * w2;

    MultiplierPartials {
        lambda_q: cfg
            .alpha
            .mul_mat(&(model.phi_qq_mul(t, q, rho, regime, vdot) + s_q)),
        lambda_v: cfg.alpha.mul_mat(&s_v),
        lambda_vdot: cfg.alpha.mul_mat(&ce.phi_q),
        lambda_rho: cfg
            .alpha
            .mul_mat(&(model.phi_qrho_mul(t, q, rho, regime, vdot) + s_rho)),
    }
}

// ---------------------------------------------------------------------------
// formulation dispatch
// ---------------------------------------------------------------------------

/// Acceleration and multipliers under the given formulation. The multiplier
/// vector is empty for unconstrained regimes and for the plain ODE, exact
/// for the index-1 DAE, and estimated for the penalty formulation.
pub fn accel(
    model: &dyn Model,
    formulation: &Formulation,
    t: f64,
    q: &DVector<f64>,
    v: &DVector<f64>,
    rho: &DVector<f64>,
    regime: Regime,
) -> CoreResult<(DVector<f64>, DVector<f64>)> {
    let m = model.constraint_count(regime);
    match formulation {
        Formulation::Ode => {
            if m != 0 {
                return Err(CoreError::Configuration(
                    "plain ODE formulation requested for a constrained regime".into(),
                ));
            }
            Ok((ode_accel(model, t, q, v, rho, regime)?, DVector::zeros(0)))
        }
        Formulation::DaeIndex1 => {
            let sol = dae_index1_solve(model, t, q, v, rho, regime)?;
            Ok((sol.vdot, sol.lambda))
        }
        Formulation::Penalty(cfg) => {
            if m == 0 {
                return Ok((ode_accel(model, t, q, v, rho, regime)?, DVector::zeros(0)));
            }
            let ws = penalty_workspace(model, cfg, t, q, v, rho, regime)?;
            let lambda = cfg.alpha.mul_vec(&(&ws.ce.phi_q * &ws.vdot + &ws.s));
            Ok((ws.vdot, lambda))
        }
    }
}
