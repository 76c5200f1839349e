//! Jump conditions at localized events: event-time sensitivity, state jumps,
//! sensitivity jumps for unconstrained and constrained systems, impulsive
//! constraint changes, and equation-of-motion transitions.
//!
//! Conventions for velocity-jump events: the jump map `h` consumes the
//! independent velocities ordered by the pre-event partition (ascending
//! coordinate index) and produces the post-event independent velocities
//! ordered by the post-event partition. Dependent components are always
//! re-solved from the (differentiated) post-event constraints.

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{CoreError, CoreResult};
use crate::formulations::{self, saddle_lu, Formulation};
use crate::model::{
    ConstraintEval, EventRecord, EventSpec, HybridState, JumpEval, JumpKind, Model,
    SensitivityBundle,
};
use crate::partition::{
    partition_coordinates, resolve_dependent_position_sens, resolve_dependent_velocity_sens,
    CoordinatePartition, DEFAULT_PIVOT_TOL,
};
use crate::tlm;

/// Threshold below which `|dr/dq . v|` counts as a grazing contact.
pub fn grazing_tolerance(v_minus: &DVector<f64>) -> f64 {
    1e-8 * (1.0 + v_minus.norm())
}

/// Sensitivity of the event time:
/// `dt/drho = -(r_q Q-) / (r_q v-)`.
pub fn event_time_sensitivity(
    dr_dq: &RowDVector<f64>,
    q_sens_minus: &DMatrix<f64>,
    v_minus: &DVector<f64>,
    event_index: usize,
) -> CoreResult<RowDVector<f64>> {
    let denominator = (dr_dq * v_minus)[0];
    let tolerance = grazing_tolerance(v_minus);
    if denominator.abs() <= tolerance {
        return Err(CoreError::Grazing {
            event_index,
            denominator,
            tolerance,
        });
    }
    Ok(-(dr_dq * q_sens_minus) / denominator)
}

/// Everything computed while applying the state jump that the sensitivity
/// jumps reuse.
#[derive(Debug)]
pub struct JumpOutcome {
    pub spec: EventSpec,
    pub event_index: usize,
    pub state_post: HybridState,
    pub part_pre: Option<CoordinatePartition>,
    pub part_post: Option<CoordinatePartition>,
    pub ce_post: Option<ConstraintEval>,
    pub jump_eval: Option<JumpEval>,
    /// Impulsive multipliers of the saddle solve (constraint-change events).
    pub impulse_dlambda: Option<DVector<f64>>,
}

/// Apply the state-level jump at a localized event. Positions, quadrature and
/// time are continuous by construction; the velocity map depends on the kind.
pub fn jump_state(
    model: &dyn Model,
    event_index: usize,
    state_minus: &HybridState,
    rho: &DVector<f64>,
    pivot_tol: f64,
) -> CoreResult<JumpOutcome> {
    let spec = model.event_spec(event_index);
    let t = state_minus.t;
    let q = &state_minus.q;
    let m_pre = model.constraint_count(state_minus.regime);
    let m_post = model.constraint_count(spec.post_regime);

    let part_pre = if m_pre > 0 {
        let ce = model.constraints(t, q, rho, state_minus.regime);
        Some(partition_coordinates(
            &ce.phi_q,
            pivot_tol,
            model.preferred_dof(state_minus.regime).as_deref(),
        )?)
    } else {
        None
    };
    let ce_post = if m_post > 0 {
        Some(model.constraints(t, q, rho, spec.post_regime))
    } else {
        None
    };
    let part_post = match &ce_post {
        Some(ce) => Some(partition_coordinates(
            &ce.phi_q,
            pivot_tol,
            model.preferred_dof(spec.post_regime).as_deref(),
        )?),
        None => None,
    };

    let mut jump_eval = None;
    let mut impulse_dlambda = None;
    let v_plus = match spec.kind {
        JumpKind::VelocityJump => {
            let v_dof_minus = match &part_pre {
                Some(p) => p.gather_dof_vec(&state_minus.v),
                None => state_minus.v.clone(),
            };
            let je = model.jump(event_index, t, q, &v_dof_minus, rho);
            let f_post = model.dims().n - m_post;
            if je.h.len() != f_post {
                return Err(CoreError::Dimension {
                    callback: "jump",
                    detail: format!("expected h of length {f_post}, got {}", je.h.len()),
                });
            }
            let v_plus = match (&part_post, &ce_post) {
                (Some(part), Some(ce)) => part.assemble_velocity(&je.h, &ce.phi_t),
                _ => je.h.clone(),
            };
            jump_eval = Some(je);
            v_plus
        }
        JumpKind::AccelChange | JumpKind::EomTransition => state_minus.v.clone(),
        JumpKind::DaeImpulse => {
            let ce = ce_post.as_ref().ok_or_else(|| {
                CoreError::Configuration(
                    "impulsive constraint-change event requires constraints in the post regime"
                        .into(),
                )
            })?;
            let mass = model.mass(t, q, rho, spec.post_regime);
            let saddle = saddle_lu(&mass, &ce.phi_q)?;
            let (v_plus, dlambda) = saddle.solve_vec(&(&mass * &state_minus.v), &(-&ce.phi_t));
            debug_assert!(
                (&ce.phi_q * &v_plus + &ce.phi_t).amax()
                    <= 1e-10 * (1.0 + v_plus.amax() + ce.phi_t.amax()),
                "post-impulse velocity violates the velocity constraint"
            );
            impulse_dlambda = Some(dlambda);
            v_plus
        }
    };

    let state_post = HybridState {
        t,
        q: q.clone(),
        v: v_plus,
        z: state_minus.z,
        regime: spec.post_regime,
    };
    Ok(JumpOutcome {
        spec,
        event_index,
        state_post,
        part_pre,
        part_post,
        ce_post,
        jump_eval,
        impulse_dlambda,
    })
}

/// Jump of the position sensitivities:
/// `Q+ = Q- - (v+ - v-) dt/drho`, with the dependent rows re-solved from the
/// post-event constraints when present.
pub fn jump_position_sens(
    v_plus: &DVector<f64>,
    v_minus: &DVector<f64>,
    q_sens_minus: &DMatrix<f64>,
    dt_drho: &RowDVector<f64>,
    post: Option<(&CoordinatePartition, &DMatrix<f64>)>,
) -> DMatrix<f64> {
    let mut q_sens_plus = q_sens_minus - (v_plus - v_minus) * dt_drho;
    if let Some((part, phi_rho_post)) = post {
        let dof = part.gather_dof(&q_sens_plus);
        let dep = resolve_dependent_position_sens(part, phi_rho_post, &dof);
        part.scatter_dep(&mut q_sens_plus, &dep);
    }
    q_sens_plus
}

/// Inputs of the velocity-sensitivity jump.
pub struct VelocitySensJumpInputs<'a> {
    pub model: &'a dyn Model,
    pub outcome: &'a JumpOutcome,
    pub state_minus: &'a HybridState,
    pub sens_minus: &'a SensitivityBundle,
    /// Post-event position sensitivities (already jumped).
    pub q_sens_plus: &'a DMatrix<f64>,
    pub dt_drho: &'a RowDVector<f64>,
    /// Acceleration right before the event, pre regime.
    pub accel_minus: &'a DVector<f64>,
    /// Acceleration right after the event, post regime and post velocities.
    pub accel_plus: &'a DVector<f64>,
    pub rho: &'a DVector<f64>,
}

/// Jump of the velocity sensitivities; dispatches on the event kind.
pub fn jump_velocity_sens(inp: &VelocitySensJumpInputs<'_>) -> CoreResult<DMatrix<f64>> {
    let model = inp.model;
    let out = inp.outcome;
    let t = inp.state_minus.t;
    let q = &inp.state_minus.q;
    let v_minus = &inp.state_minus.v;
    let v_plus = &out.state_post.v;
    let post_regime = out.spec.post_regime;

    match out.spec.kind {
        JumpKind::VelocityJump => {
            let je = out.jump_eval.as_ref().expect("velocity jump carries its map");
            let (v_sens_dof_minus, accel_dof_minus) = match &out.part_pre {
                Some(p) => (
                    p.gather_dof(&inp.sens_minus.dv_drho),
                    p.gather_dof_vec(inp.accel_minus),
                ),
                None => (inp.sens_minus.dv_drho.clone(), inp.accel_minus.clone()),
            };
            let accel_dof_plus = match &out.part_post {
                Some(p) => p.gather_dof_vec(inp.accel_plus),
                None => inp.accel_plus.clone(),
            };
            let drift =
                &je.h_q * v_minus - accel_dof_plus + &je.h_v * accel_dof_minus + &je.h_t;
            let v_sens_dof_plus = &je.h_q * &inp.sens_minus.dq_drho
                + &je.h_v * v_sens_dof_minus
                + drift * inp.dt_drho
                + &je.h_rho;
            match &out.part_post {
                Some(part) => {
                    let mut full = DMatrix::zeros(v_plus.len(), v_sens_dof_plus.ncols());
                    part.scatter_dof(&mut full, &v_sens_dof_plus);
                    let dep = resolve_dependent_velocity_sens(
                        part,
                        model,
                        t,
                        q,
                        v_plus,
                        inp.rho,
                        post_regime,
                        inp.q_sens_plus,
                        &v_sens_dof_plus,
                    );
                    part.scatter_dep(&mut full, &dep);
                    Ok(full)
                }
                None => Ok(v_sens_dof_plus),
            }
        }
        JumpKind::AccelChange => {
            Ok(&inp.sens_minus.dv_drho - (inp.accel_plus - inp.accel_minus) * inp.dt_drho)
        }
        JumpKind::EomTransition => {
            let mut v_sens_plus = inp.sens_minus.dv_drho.clone();
            if let Some(pre) = &out.part_pre {
                // dof rows in the pre-event partition take the
                // acceleration-switch jump
                let dof_minus = pre.gather_dof(&inp.sens_minus.dv_drho);
                let accel_diff =
                    pre.gather_dof_vec(inp.accel_minus) - pre.gather_dof_vec(inp.accel_plus);
                let dof_plus = dof_minus + accel_diff * inp.dt_drho;
                pre.scatter_dof(&mut v_sens_plus, &dof_plus);
            } else {
                v_sens_plus -= (inp.accel_plus - inp.accel_minus) * inp.dt_drho;
            }
            if let Some(part) = &out.part_post {
                let dof = part.gather_dof(&v_sens_plus);
                let dep = resolve_dependent_velocity_sens(
                    part,
                    model,
                    t,
                    q,
                    v_plus,
                    inp.rho,
                    post_regime,
                    inp.q_sens_plus,
                    &dof,
                );
                part.scatter_dep(&mut v_sens_plus, &dep);
            }
            Ok(v_sens_plus)
        }
        JumpKind::DaeImpulse => {
            let ce = out
                .ce_post
                .as_ref()
                .expect("impulsive jump carries post constraints");
            let dlambda = out
                .impulse_dlambda
                .as_ref()
                .expect("impulsive jump carries its multipliers");
            let mass = model.mass(t, q, inp.rho, post_regime);
            let saddle = saddle_lu(&mass, &ce.phi_q)?;
            let tau = inp.dt_drho;
            // total derivative of the event point: dq_eve/drho = Q- + v- tau
            let xi = &inp.sens_minus.dq_drho + v_minus * tau;
            let dv = v_plus - v_minus;

            let top = &mass * &inp.sens_minus.dv_drho
                + (&mass * (inp.accel_minus - inp.accel_plus)) * tau
                - (model.mass_dq_mul(t, q, inp.rho, post_regime, &dv) * &xi
                    + model.mass_drho_mul(t, q, inp.rho, post_regime, &dv))
                - (model.phi_qq_tr_mul(t, q, inp.rho, post_regime, dlambda) * &xi
                    + (ce.phi_tq.transpose() * dlambda) * tau
                    + model.phi_qrho_tr_mul(t, q, inp.rho, post_regime, dlambda));
            let bot = -(model.phi_qq_mul(t, q, inp.rho, post_regime, v_plus) * &xi
                + (&ce.phi_tq * v_plus) * tau
                + model.phi_qrho_mul(t, q, inp.rho, post_regime, v_plus))
                - (&ce.phi_q * inp.accel_plus) * tau
                - (&ce.phi_tq * &xi + &ce.phi_tt * tau + &ce.phi_trho);

            let (v_sens_plus, _dlambda_sens) = saddle.solve_mat(&top, &bot);
            Ok(v_sens_plus)
        }
    }
}

/// Jump of the quadrature sensitivity:
/// `Z+ = Z- - (g+ - g-) dt/drho`.
pub fn jump_quadrature_sens(
    g_plus: f64,
    g_minus: f64,
    z_sens_minus: &RowDVector<f64>,
    dt_drho: &RowDVector<f64>,
) -> RowDVector<f64> {
    z_sens_minus - dt_drho * (g_plus - g_minus)
}

/// Multiplier sensitivities right after the event, recomputed algebraically in
/// the post regime from the post-event state and sensitivities.
pub fn jump_multiplier_sens(
    model: &dyn Model,
    formulation: &Formulation,
    state: &HybridState,
    sens: &SensitivityBundle,
    rho: &DVector<f64>,
) -> CoreResult<Option<DMatrix<f64>>> {
    if model.constraint_count(state.regime) == 0 {
        return Ok(None);
    }
    match formulation {
        Formulation::Ode => Ok(None),
        Formulation::DaeIndex1 => {
            let rhs = tlm::tlm_rhs_dae_index1(model, state.t, &state.q, &state.v, rho, state.regime, sens)?;
            Ok(rhs.multiplier_sens)
        }
        Formulation::Penalty(cfg) => {
            let rhs = tlm::tlm_rhs_penalty(model, cfg, state.t, &state.q, &state.v, rho, state.regime, sens)?;
            Ok(rhs.multiplier_sens)
        }
    }
}

/// Apply a complete event: event-time sensitivity, state jump, and all
/// sensitivity jumps, under the active formulation.
pub fn apply_event(
    model: &dyn Model,
    formulation: &Formulation,
    event_index: usize,
    state_minus: &HybridState,
    sens_minus: &SensitivityBundle,
    rho: &DVector<f64>,
) -> CoreResult<EventRecord> {
    let t = state_minus.t;
    let q = &state_minus.q;

    let ee = model.event(event_index, q);
    let dt_drho = event_time_sensitivity(&ee.dr_dq, &sens_minus.dq_drho, &state_minus.v, event_index)?;

    let (accel_minus, lambda_minus) = formulations::accel(
        model,
        formulation,
        t,
        q,
        &state_minus.v,
        rho,
        state_minus.regime,
    )?;
    let outcome = jump_state(model, event_index, state_minus, rho, DEFAULT_PIVOT_TOL)?;
    let (accel_plus, lambda_plus) = formulations::accel(
        model,
        formulation,
        t,
        q,
        &outcome.state_post.v,
        rho,
        outcome.spec.post_regime,
    )?;

    let q_sens_plus = jump_position_sens(
        &outcome.state_post.v,
        &state_minus.v,
        &sens_minus.dq_drho,
        &dt_drho,
        outcome
            .part_post
            .as_ref()
            .zip(outcome.ce_post.as_ref())
            .map(|(p, ce)| (p, &ce.phi_rho)),
    );
    let v_sens_plus = jump_velocity_sens(&VelocitySensJumpInputs {
        model,
        outcome: &outcome,
        state_minus,
        sens_minus,
        q_sens_plus: &q_sens_plus,
        dt_drho: &dt_drho,
        accel_minus: &accel_minus,
        accel_plus: &accel_plus,
        rho,
    })?;

    let g_minus = model
        .running_cost(t, q, &state_minus.v, &accel_minus, &lambda_minus, rho)
        .g;
    let g_plus = model
        .running_cost(t, q, &outcome.state_post.v, &accel_plus, &lambda_plus, rho)
        .g;
    let z_sens_plus = jump_quadrature_sens(g_plus, g_minus, &sens_minus.dz_drho, &dt_drho);

    let mut sens_pre = sens_minus.clone();
    sens_pre.dlambda_drho =
        jump_multiplier_sens(model, formulation, state_minus, sens_minus, rho)?;
    let mut sens_post = SensitivityBundle {
        dq_drho: q_sens_plus,
        dv_drho: v_sens_plus,
        dz_drho: z_sens_plus,
        dlambda_drho: None,
    };
    sens_post.dlambda_drho =
        jump_multiplier_sens(model, formulation, &outcome.state_post, &sens_post, rho)?;

    EventRecord::new(
        t,
        event_index,
        state_minus.clone(),
        outcome.state_post,
        sens_pre,
        sens_post,
        dt_drho,
    )
}
