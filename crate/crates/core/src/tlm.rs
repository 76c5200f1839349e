//! Tangent-linear right-hand sides: sensitivity ODEs for all three
//! formulations, the quadrature-sensitivity equation, estimated-multiplier
//! sensitivities, and the terminal cost gradient.
//!
//! The velocity-sensitivity equations are solved in their mass-matrix form,
//! e.g. `M Vdot = (F_q - d(M vdot)/dq) Q + F_v V + F_rho - d(M vdot)/drho`
//! for the plain ODE, which needs one factorization for all `p` columns.

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{CoreError, CoreResult};
use crate::formulations::{
    self, guarded_lu, penalty_partials_from, penalty_workspace, Formulation, PenaltyConfig,
};
use crate::model::{CostEval, HybridState, Model, Regime, SensitivityBundle};

/// Time derivative of the sensitivity block, plus algebraic multiplier
/// sensitivities where the formulation defines them.
#[derive(Debug, Clone)]
pub struct TlmRhs {
    /// `d(Q)/dt = V`, `n x p`.
    pub q_sens_dot: DMatrix<f64>,
    /// `d(V)/dt`, `n x p`.
    pub v_sens_dot: DMatrix<f64>,
    /// `Lambda` (exact or estimated), `m x p`; algebraic, never integrated.
    pub multiplier_sens: Option<DMatrix<f64>>,
    /// Acceleration at the evaluation point.
    pub vdot: DVector<f64>,
    /// Multipliers at the evaluation point (empty when unconstrained).
    pub lambda: DVector<f64>,
}

/// Sensitivity ODE of the unconstrained formulation:
/// `Qdot = V`, `M Vdot = (F_q - d(M vdot)/dq) Q + F_v V + F_rho - d(M vdot)/drho`.
#[allow(clippy::too_many_arguments)]
pub fn tlm_rhs_ode(
    model: &dyn Model,
    t: f64,
    q: &DVector<f64>,
    v: &DVector<f64>,
    rho: &DVector<f64>,
    regime: Regime,
    sens: &SensitivityBundle,
) -> CoreResult<TlmRhs> {
    let mass = model.mass(t, q, rho, regime);
    let force = model.force(t, q, v, rho, regime);
    let glu = guarded_lu(&mass)?;
    let vdot = glu
        .lu
        .solve(&force.f)
        .ok_or(CoreError::SingularMass { cond: glu.cond })?;
    let rhs = (&force.f_q - model.mass_dq_mul(t, q, rho, regime, &vdot)) * &sens.dq_drho
        + &force.f_v * &sens.dv_drho
        + &force.f_rho
        - model.mass_drho_mul(t, q, rho, regime, &vdot);
    let mut v_sens_dot = rhs;
    glu.lu.solve_mut(&mut v_sens_dot);
    Ok(TlmRhs {
        q_sens_dot: sens.dv_drho.clone(),
        v_sens_dot,
        multiplier_sens: None,
        vdot,
        lambda: DVector::zeros(0),
    })
}

/// Sensitivity DAE of the index-1 formulation. One saddle solve yields all
/// `p` columns of `(Vdot, Lambda)`; `Lambda` is an algebraic output.
#[allow(clippy::too_many_arguments)]
pub fn tlm_rhs_dae_index1(
    model: &dyn Model,
    t: f64,
    q: &DVector<f64>,
    v: &DVector<f64>,
    rho: &DVector<f64>,
    regime: Regime,
    sens: &SensitivityBundle,
) -> CoreResult<TlmRhs> {
    let ws = formulations::dae_workspace(model, t, q, v, rho, regime)?;
    if ws.ce.m() == 0 {
        return tlm_rhs_ode(model, t, q, v, rho, regime, sens);
    }
    let vdot = &ws.sol.vdot;
    let lambda = &ws.sol.lambda;

    let top = &ws.force.f_v * &sens.dv_drho
        - (model.mass_dq_mul(t, q, rho, regime, vdot)
            + model.phi_qq_tr_mul(t, q, rho, regime, lambda)
            - &ws.force.f_q)
            * &sens.dq_drho
        + &ws.force.f_rho
        - model.mass_drho_mul(t, q, rho, regime, vdot)
        - model.phi_qrho_tr_mul(t, q, rho, regime, lambda);
    let bot = &ws.crhs.c_v * &sens.dv_drho
        - (model.phi_qq_mul(t, q, rho, regime, vdot) - &ws.crhs.c_q) * &sens.dq_drho
        + &ws.crhs.c_rho
        - model.phi_qrho_mul(t, q, rho, regime, vdot);
    let (v_sens_dot, multiplier_sens) = ws.saddle.solve_mat(&top, &bot);

    Ok(TlmRhs {
        q_sens_dot: sens.dv_drho.clone(),
        v_sens_dot,
        multiplier_sens: Some(multiplier_sens),
        vdot: ws.sol.vdot.clone(),
        lambda: ws.sol.lambda,
    })
}

/// Sensitivity ODE of the penalty formulation:
/// `Mbar Vdot = (Fbar_q - d(Mbar vdot)/dq) Q + Fbar_v V + Fbar_rho - d(Mbar vdot)/drho`.
///
/// The returned multiplier sensitivities are those of the estimated
/// multipliers, composed through the acceleration chain.
#[allow(clippy::too_many_arguments)]
pub fn tlm_rhs_penalty(
    model: &dyn Model,
    cfg: &PenaltyConfig,
    t: f64,
    q: &DVector<f64>,
    v: &DVector<f64>,
    rho: &DVector<f64>,
    regime: Regime,
    sens: &SensitivityBundle,
) -> CoreResult<TlmRhs> {
    if model.constraint_count(regime) == 0 {
        return tlm_rhs_ode(model, t, q, v, rho, regime, sens);
    }
    let ws = penalty_workspace(model, cfg, t, q, v, rho, regime)?;
    let blocks = penalty_partials_from(model, cfg, t, q, v, rho, regime, &ws, &ws.vdot);
    let rhs = (&blocks.force_q - &blocks.mass_dq_vdot) * &sens.dq_drho
        + &blocks.force_v * &sens.dv_drho
        + &blocks.force_rho
        - &blocks.mass_drho_vdot;
    let mut v_sens_dot = rhs;
    ws.m_bar_lu.lu.solve_mut(&mut v_sens_dot);

    let lambda = cfg.alpha.mul_vec(&(&ws.ce.phi_q * &ws.vdot + &ws.s));
    let mult = multiplier_estimate_sens_with(model, cfg, t, q, v, rho, regime, &ws.vdot, sens, &v_sens_dot);

    Ok(TlmRhs {
        q_sens_dot: sens.dv_drho.clone(),
        v_sens_dot,
        multiplier_sens: Some(mult),
        vdot: ws.vdot,
        lambda,
    })
}

/// Estimated-multiplier sensitivities given the already-computed
/// acceleration-sensitivity columns:
/// `Lambda* = lam_q Q + lam_v V + lam_vdot Vdot + lam_rho`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn multiplier_estimate_sens_with(
    model: &dyn Model,
    cfg: &PenaltyConfig,
    t: f64,
    q: &DVector<f64>,
    v: &DVector<f64>,
    rho: &DVector<f64>,
    regime: Regime,
    vdot: &DVector<f64>,
    sens: &SensitivityBundle,
    v_sens_dot: &DMatrix<f64>,
) -> DMatrix<f64> {
    let parts = formulations::penalty_multiplier_partials(model, cfg, t, q, v, rho, regime, vdot);
    &parts.lambda_q * &sens.dq_drho
        + &parts.lambda_v * &sens.dv_drho
        + &parts.lambda_vdot * v_sens_dot
        + parts.lambda_rho
}

/// Estimated-multiplier sensitivities `Lambda*` as a derived output.
#[allow(clippy::too_many_arguments)]
pub fn multiplier_estimate_sens(
    model: &dyn Model,
    cfg: &PenaltyConfig,
    t: f64,
    q: &DVector<f64>,
    v: &DVector<f64>,
    rho: &DVector<f64>,
    regime: Regime,
    sens: &SensitivityBundle,
) -> CoreResult<DMatrix<f64>> {
    let rhs = tlm_rhs_penalty(model, cfg, t, q, v, rho, regime, sens)?;
    rhs.multiplier_sens.ok_or_else(|| {
        CoreError::Configuration("estimated multipliers requested for an unconstrained regime".into())
    })
}

/// Quadrature-sensitivity row:
/// `Zdot = g_q Q + g_v V + g_vdot Vdot + g_lambda Lambda + g_rho`.
pub fn quadrature_sens_rhs(
    cost: &CostEval,
    sens: &SensitivityBundle,
    v_sens_dot: &DMatrix<f64>,
    multiplier_sens: Option<&DMatrix<f64>>,
) -> RowDVector<f64> {
    let mut zdot = &cost.g_q * &sens.dq_drho + &cost.g_v * &sens.dv_drho + &cost.g_vdot * v_sens_dot
        + &cost.g_rho;
    if let Some(mult) = multiplier_sens {
        if cost.g_lambda.len() == mult.nrows() {
            zdot += &cost.g_lambda * mult;
        }
    }
    zdot
}

/// Gradient of the total cost at the final time:
/// `dpsi/drho = Z(t_F) + w_q Q + w_v V + w_rho`.
pub fn cost_gradient(
    model: &dyn Model,
    final_state: &HybridState,
    sens_final: &SensitivityBundle,
    rho: &DVector<f64>,
) -> RowDVector<f64> {
    let w = model.terminal_cost(final_state.t, &final_state.q, &final_state.v, rho);
    &sens_final.dz_drho + &w.w_q * &sens_final.dq_drho + &w.w_v * &sens_final.dv_drho + &w.w_rho
}

/// Dispatch to the formulation-specific tangent-linear model.
#[allow(clippy::too_many_arguments)]
pub fn tlm_rhs(
    model: &dyn Model,
    formulation: &Formulation,
    t: f64,
    q: &DVector<f64>,
    v: &DVector<f64>,
    rho: &DVector<f64>,
    regime: Regime,
    sens: &SensitivityBundle,
) -> CoreResult<TlmRhs> {
    match formulation {
        Formulation::Ode => tlm_rhs_ode(model, t, q, v, rho, regime, sens),
        Formulation::DaeIndex1 => tlm_rhs_dae_index1(model, t, q, v, rho, regime, sens),
        Formulation::Penalty(cfg) => tlm_rhs_penalty(model, cfg, t, q, v, rho, regime, sens),
    }
}

/// Evaluate the running cost at a point, resolving acceleration and
/// multipliers through the active formulation.
#[allow(clippy::too_many_arguments)]
pub fn running_cost_at(
    model: &dyn Model,
    formulation: &Formulation,
    t: f64,
    q: &DVector<f64>,
    v: &DVector<f64>,
    rho: &DVector<f64>,
    regime: Regime,
) -> CoreResult<CostEval> {
    let (vdot, lambda) = formulations::accel(model, formulation, t, q, v, rho, regime)?;
    Ok(model.running_cost(t, q, v, &vdot, &lambda, rho))
}

/// Consistency residual of the differentiated velocity-level constraint,
/// used as an integration monitor:
/// `Phi_q Qdot + (d(Phi_q v)/dq + Phi_tq) Q + d(Phi_q v)/drho + Phi_trho`
/// with `Qdot = V`.
#[allow(clippy::too_many_arguments)]
pub fn velocity_constraint_sens_residual(
    model: &dyn Model,
    t: f64,
    q: &DVector<f64>,
    v: &DVector<f64>,
    rho: &DVector<f64>,
    regime: Regime,
    sens: &SensitivityBundle,
) -> DMatrix<f64> {
    let ce = model.constraints(t, q, rho, regime);
    let dphiqv_dq = model.phi_qq_mul(t, q, rho, regime, v);
    let dphiqv_drho = model.phi_qrho_mul(t, q, rho, regime, v);
    &ce.phi_q * &sens.dv_drho + (dphiqv_dq + &ce.phi_tq) * &sens.dq_drho + dphiqv_drho + &ce.phi_trho
}

// The canonical packed right-hand side used by the integrator lives here so
// that all sensitivity assembly stays in one module.

use crate::model::{pack_canonical, unpack_canonical, CanonicalLayout};

/// Evaluate the packed canonical derivative
/// `[qdot; vdot; zdot; vec(Qdot); vec(Vdot); Zdot^T]` at `(t, y)`.
pub fn canonical_rhs(
    model: &dyn Model,
    formulation: &Formulation,
    regime: Regime,
    rho: &DVector<f64>,
    layout: CanonicalLayout,
    t: f64,
    y: &DVector<f64>,
) -> CoreResult<DVector<f64>> {
    let (state, sens) = unpack_canonical(y, layout, t, regime);
    let rhs = tlm_rhs(model, formulation, t, &state.q, &state.v, rho, regime, &sens)?;
    let cost = model.running_cost(t, &state.q, &state.v, &rhs.vdot, &rhs.lambda, rho);
    let zdot_sens = quadrature_sens_rhs(&cost, &sens, &rhs.v_sens_dot, rhs.multiplier_sens.as_ref());

    let dstate = HybridState {
        t,
        q: state.v.clone(),
        v: rhs.vdot.clone(),
        z: cost.g,
        regime,
    };
    let dsens = SensitivityBundle {
        dq_drho: rhs.q_sens_dot,
        dv_drho: rhs.v_sens_dot,
        dz_drho: zdot_sens,
        dlambda_drho: None,
    };
    let dy = pack_canonical(&dstate, &dsens);
    if dy.iter().any(|x| !x.is_finite()) {
        return Err(CoreError::Evaluation {
            callback: "canonical_rhs",
            t,
        });
    }
    Ok(dy)
}
