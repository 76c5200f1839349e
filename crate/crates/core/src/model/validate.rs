//! Dimensional and derivative-consistency validation of a model: every
//! supplied analytic partial is compared entry-wise against a central finite
//! difference at a probe point.

use nalgebra::{DMatrix, DVector};

use crate::error::{CoreError, CoreResult};
use super::{HybridState, Model};

/// Options of the validation run.
#[derive(Debug, Clone)]
pub struct ValidationOptions {
    /// Base finite-difference step; per-coordinate steps are
    /// `fd_eps * (1 + |x_j|)`.
    pub fd_eps: f64,
    /// Maximum accepted relative error per partial.
    pub tol: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            fd_eps: 1e-6,
            tol: 1e-5,
        }
    }
}

/// Outcome of one partial-derivative check.
#[derive(Debug, Clone)]
pub struct PartialCheck {
    pub name: String,
    pub max_abs_err: f64,
    /// `max(|analytic|, |fd|)` over all entries.
    pub scale: f64,
    pub rel_err: f64,
    pub pass: bool,
}

/// Full validation outcome.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub tol: f64,
    pub checks: Vec<PartialCheck>,
}

impl ValidationReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> Vec<&PartialCheck> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }

    pub fn max_rel_err(&self) -> f64 {
        self.checks.iter().map(|c| c.rel_err).fold(0.0, f64::max)
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "  {} {:<22} rel_err = {:.3e} (abs {:.3e}, scale {:.3e})",
                if c.pass { "ok  " } else { "FAIL" },
                c.name,
                c.rel_err,
                c.max_abs_err,
                c.scale
            )?;
        }
        write!(
            f,
            "validation {} (tol {:.1e}, worst rel err {:.3e})",
            if self.pass() { "passed" } else { "FAILED" },
            self.tol,
            self.max_rel_err()
        )
    }
}

struct Checker {
    tol: f64,
    checks: Vec<PartialCheck>,
}

impl Checker {
    fn record(&mut self, name: &str, analytic: &DMatrix<f64>, fd: &DMatrix<f64>) {
        let max_abs_err = (analytic - fd).amax();
        let scale = analytic.amax().max(fd.amax());
        let rel_err = if scale < 1e-10 {
            max_abs_err
        } else {
            max_abs_err / scale
        };
        self.checks.push(PartialCheck {
            name: name.to_string(),
            max_abs_err,
            scale,
            rel_err,
            pass: rel_err <= self.tol,
        });
    }
}

fn ensure_finite(name: &'static str, t: f64, values: &[f64]) -> CoreResult<()> {
    if values.iter().any(|x| !x.is_finite()) {
        return Err(CoreError::Evaluation { callback: name, t });
    }
    Ok(())
}

fn ensure_shape(
    name: &'static str,
    got: (usize, usize),
    expected: (usize, usize),
) -> CoreResult<()> {
    if got != expected {
        return Err(CoreError::Dimension {
            callback: name,
            detail: format!("expected {}x{}, got {}x{}", expected.0, expected.1, got.0, got.1),
        });
    }
    Ok(())
}

/// Central finite-difference Jacobian of a vector function with per-coordinate
/// steps `eps (1 + |x_j|)`.
fn fd_jacobian(
    f: &mut dyn FnMut(&DVector<f64>) -> DVector<f64>,
    x0: &DVector<f64>,
    eps: f64,
) -> DMatrix<f64> {
    let fx = f(x0);
    let mut jac = DMatrix::zeros(fx.len(), x0.len());
    for j in 0..x0.len() {
        let h = eps * (1.0 + x0[j].abs());
        let mut xp = x0.clone();
        xp[j] += h;
        let mut xm = x0.clone();
        xm[j] -= h;
        let diff = (f(&xp) - f(&xm)) / (2.0 * h);
        jac.set_column(j, &diff);
    }
    jac
}

/// Central finite difference of a vector function of scalar time.
fn fd_time(f: &mut dyn FnMut(f64) -> DVector<f64>, t0: f64, eps: f64) -> DVector<f64> {
    let h = eps * (1.0 + t0.abs());
    (f(t0 + h) - f(t0 - h)) / (2.0 * h)
}

fn col(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

fn row(v: &nalgebra::RowDVector<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(1, v.len(), v.as_slice())
}

/// Deterministic probe direction of length `len`.
fn probe_direction(len: usize, seed: usize) -> DVector<f64> {
    DVector::from_fn(len, |i, _| {
        let x = ((i + 1) * (seed + 2)) as f64;
        ((x * 0.7391).sin() + 0.3).clamp(-1.5, 1.5)
    })
}

/// Validate every analytic partial of `model` at the probe state against
/// central finite differences.
pub fn validate_model(
    model: &dyn Model,
    probe: &HybridState,
    rho: &DVector<f64>,
    opts: &ValidationOptions,
) -> CoreResult<ValidationReport> {
    let dims = model.dims();
    dims.validate()?;
    let (n, p) = (dims.n, dims.p);
    let regime = probe.regime;
    let m = model.constraint_count(regime);
    let t = probe.t;
    let q = &probe.q;
    let v = &probe.v;
    let eps = opts.fd_eps;
    if q.len() != n || v.len() != n || rho.len() != p {
        return Err(CoreError::Dimension {
            callback: "validate_model",
            detail: "probe state or parameter vector does not match the model dimensions".into(),
        });
    }

    let mut ck = Checker {
        tol: opts.tol,
        checks: Vec::new(),
    };

    // --- mass ---------------------------------------------------------------
    let mass = model.mass(t, q, rho, regime);
    ensure_shape("mass", mass.shape(), (n, n))?;
    ensure_finite("mass", t, mass.as_slice())?;
    if (&mass - mass.transpose()).amax() > 1e-10 * (1.0 + mass.amax()) {
        return Err(CoreError::Configuration(
            "mass matrix must be symmetric at the probe state".into(),
        ));
    }
    if mass.clone().cholesky().is_none() {
        return Err(CoreError::Configuration(
            "mass matrix must be positive definite at the probe state".into(),
        ));
    }
    for (label, u) in [("u1", probe_direction(n, 0)), ("u2", v.clone())] {
        let analytic = model.mass_dq_mul(t, q, rho, regime, &u);
        ensure_shape("mass_dq_mul", analytic.shape(), (n, n))?;
        let fd = fd_jacobian(&mut |qq| model.mass(t, qq, rho, regime) * &u, q, eps);
        ck.record(&format!("mass_dq_mul[{label}]"), &analytic, &fd);

        let analytic = model.mass_drho_mul(t, q, rho, regime, &u);
        ensure_shape("mass_drho_mul", analytic.shape(), (n, p))?;
        let fd = fd_jacobian(&mut |rr| model.mass(t, q, rr, regime) * &u, rho, eps);
        ck.record(&format!("mass_drho_mul[{label}]"), &analytic, &fd);
    }

    // --- force --------------------------------------------------------------
    let force = model.force(t, q, v, rho, regime);
    ensure_shape("force.f", (force.f.len(), 1), (n, 1))?;
    ensure_shape("force.f_q", force.f_q.shape(), (n, n))?;
    ensure_shape("force.f_v", force.f_v.shape(), (n, n))?;
    ensure_shape("force.f_rho", force.f_rho.shape(), (n, p))?;
    ensure_finite("force", t, force.f.as_slice())?;
    let fd = fd_jacobian(&mut |qq| model.force(t, qq, v, rho, regime).f, q, eps);
    ck.record("force.f_q", &force.f_q, &fd);
    let fd = fd_jacobian(&mut |vv| model.force(t, q, vv, rho, regime).f, v, eps);
    ck.record("force.f_v", &force.f_v, &fd);
    let fd = fd_jacobian(&mut |rr| model.force(t, q, v, rr, regime).f, rho, eps);
    ck.record("force.f_rho", &force.f_rho, &fd);

    // --- constraints ----------------------------------------------------------
    if m > 0 {
        let ce = model.constraints(t, q, rho, regime);
        ensure_shape("constraints.phi", (ce.phi.len(), 1), (m, 1))?;
        ensure_shape("constraints.phi_q", ce.phi_q.shape(), (m, n))?;
        ensure_shape("constraints.phi_rho", ce.phi_rho.shape(), (m, p))?;
        ensure_shape("constraints.phi_tq", ce.phi_tq.shape(), (m, n))?;
        ensure_shape("constraints.phi_trho", ce.phi_trho.shape(), (m, p))?;
        ensure_finite("constraints", t, ce.phi.as_slice())?;

        let fd = fd_jacobian(&mut |qq| model.constraints(t, qq, rho, regime).phi, q, eps);
        ck.record("phi_q", &ce.phi_q, &fd);
        let fd = fd_time(&mut |tt| model.constraints(tt, q, rho, regime).phi, t, eps);
        ck.record("phi_t", &col(&ce.phi_t), &col(&fd));
        let fd = fd_jacobian(&mut |rr| model.constraints(t, q, rr, regime).phi, rho, eps);
        ck.record("phi_rho", &ce.phi_rho, &fd);
        let fd = fd_time(&mut |tt| model.constraints(tt, q, rho, regime).phi_t, t, eps);
        ck.record("phi_tt", &col(&ce.phi_tt), &col(&fd));
        // mixed partial via the time derivative of the Jacobian rows
        let fd = {
            let h = eps * (1.0 + t.abs());
            (model.constraints(t + h, q, rho, regime).phi_q
                - model.constraints(t - h, q, rho, regime).phi_q)
                / (2.0 * h)
        };
        ck.record("phi_tq", &ce.phi_tq, &fd);
        let fd = {
            let h = eps * (1.0 + t.abs());
            (model.constraints(t + h, q, rho, regime).phi_rho
                - model.constraints(t - h, q, rho, regime).phi_rho)
                / (2.0 * h)
        };
        ck.record("phi_trho", &ce.phi_trho, &fd);

        let u = probe_direction(n, 3);
        let w = probe_direction(m, 4);
        let analytic = model.phi_qq_mul(t, q, rho, regime, &u);
        ensure_shape("phi_qq_mul", analytic.shape(), (m, n))?;
        let fd = fd_jacobian(&mut |qq| model.constraints(t, qq, rho, regime).phi_q * &u, q, eps);
        ck.record("phi_qq_mul", &analytic, &fd);

        let analytic = model.phi_qq_tr_mul(t, q, rho, regime, &w);
        ensure_shape("phi_qq_tr_mul", analytic.shape(), (n, n))?;
        let fd = fd_jacobian(
            &mut |qq| model.constraints(t, qq, rho, regime).phi_q.transpose() * &w,
            q,
            eps,
        );
        ck.record("phi_qq_tr_mul", &analytic, &fd);

        let analytic = model.phi_qrho_mul(t, q, rho, regime, &u);
        ensure_shape("phi_qrho_mul", analytic.shape(), (m, p))?;
        let fd = fd_jacobian(&mut |rr| model.constraints(t, q, rr, regime).phi_q * &u, rho, eps);
        ck.record("phi_qrho_mul", &analytic, &fd);

        let analytic = model.phi_qrho_tr_mul(t, q, rho, regime, &w);
        ensure_shape("phi_qrho_tr_mul", analytic.shape(), (n, p))?;
        let fd = fd_jacobian(
            &mut |rr| model.constraints(t, q, rr, regime).phi_q.transpose() * &w,
            rho,
            eps,
        );
        ck.record("phi_qrho_tr_mul", &analytic, &fd);

        // third-order contractions
        let fd = fd_jacobian(&mut |qq| model.phi_qq_mul(t, qq, rho, regime, &u) * &u, q, eps);
        ck.record("phi_qq_mul_dq", &model.phi_qq_mul_dq(t, q, rho, regime, &u), &fd);
        let fd = fd_jacobian(&mut |qq| model.constraints(t, qq, rho, regime).phi_tq * &u, q, eps);
        ck.record("phi_tq_mul_dq", &model.phi_tq_mul_dq(t, q, rho, regime, &u), &fd);
        let fd = fd_jacobian(&mut |qq| model.constraints(t, qq, rho, regime).phi_tt, q, eps);
        ck.record("phi_tt_dq", &model.phi_tt_dq(t, q, rho, regime), &fd);
        let fd =
            fd_jacobian(&mut |rr| model.phi_qq_mul(t, q, rr, regime, &u) * &u, rho, eps);
        ck.record("phi_qq_mul_drho", &model.phi_qq_mul_drho(t, q, rho, regime, &u), &fd);
        let fd = fd_jacobian(&mut |rr| model.constraints(t, q, rr, regime).phi_tq * &u, rho, eps);
        ck.record("phi_tq_mul_drho", &model.phi_tq_mul_drho(t, q, rho, regime, &u), &fd);
        let fd = fd_jacobian(&mut |rr| model.constraints(t, q, rr, regime).phi_tt, rho, eps);
        ck.record("phi_tt_drho", &model.phi_tt_drho(t, q, rho, regime), &fd);
    }

    // --- running and terminal costs -------------------------------------------
    let vdot_probe = probe_direction(n, 7);
    let lambda_probe = probe_direction(m, 8);
    let cost = model.running_cost(t, q, v, &vdot_probe, &lambda_probe, rho);
    if cost.g_q.len() != n
        || cost.g_v.len() != n
        || cost.g_vdot.len() != n
        || cost.g_lambda.len() != m
        || cost.g_rho.len() != p
    {
        return Err(CoreError::Dimension {
            callback: "running_cost",
            detail: "cost gradient rows do not match the model dimensions".into(),
        });
    }
    let scalar = |x: f64| DVector::from_vec(vec![x]);
    let fd = fd_jacobian(
        &mut |qq| scalar(model.running_cost(t, qq, v, &vdot_probe, &lambda_probe, rho).g),
        q,
        eps,
    );
    ck.record("running_cost.g_q", &row(&cost.g_q), &fd);
    let fd = fd_jacobian(
        &mut |vv| scalar(model.running_cost(t, q, vv, &vdot_probe, &lambda_probe, rho).g),
        v,
        eps,
    );
    ck.record("running_cost.g_v", &row(&cost.g_v), &fd);
    let fd = fd_jacobian(
        &mut |aa| scalar(model.running_cost(t, q, v, aa, &lambda_probe, rho).g),
        &vdot_probe,
        eps,
    );
    ck.record("running_cost.g_vdot", &row(&cost.g_vdot), &fd);
    if m > 0 {
        let fd = fd_jacobian(
            &mut |ll| scalar(model.running_cost(t, q, v, &vdot_probe, ll, rho).g),
            &lambda_probe,
            eps,
        );
        ck.record("running_cost.g_lambda", &row(&cost.g_lambda), &fd);
    }
    let fd = fd_jacobian(
        &mut |rr| scalar(model.running_cost(t, q, v, &vdot_probe, &lambda_probe, rr).g),
        rho,
        eps,
    );
    ck.record("running_cost.g_rho", &row(&cost.g_rho), &fd);

    let w = model.terminal_cost(t, q, v, rho);
    let fd = fd_jacobian(&mut |qq| scalar(model.terminal_cost(t, qq, v, rho).w), q, eps);
    ck.record("terminal_cost.w_q", &row(&w.w_q), &fd);
    let fd = fd_jacobian(&mut |vv| scalar(model.terminal_cost(t, q, vv, rho).w), v, eps);
    ck.record("terminal_cost.w_v", &row(&w.w_v), &fd);
    let fd = fd_jacobian(&mut |rr| scalar(model.terminal_cost(t, q, v, rr).w), rho, eps);
    ck.record("terminal_cost.w_rho", &row(&w.w_rho), &fd);

    // --- events and jumps --------------------------------------------------
    if model.num_events() != dims.e {
        return Err(CoreError::Dimension {
            callback: "num_events",
            detail: format!("model declares e = {} but exposes {} events", dims.e, model.num_events()),
        });
    }
    for idx in 0..model.num_events() {
        let ee = model.event(idx, q);
        if ee.dr_dq.len() != n {
            return Err(CoreError::Dimension {
                callback: "event",
                detail: format!("event {idx} gradient has length {}", ee.dr_dq.len()),
            });
        }
        let fd = fd_jacobian(&mut |qq| scalar(model.event(idx, qq).r), q, eps);
        ck.record(&format!("event[{idx}].dr_dq"), &row(&ee.dr_dq), &fd);

        let spec = model.event_spec(idx);
        let m_post = model.constraint_count(spec.post_regime);
        let f_pre = n - m;
        let f_post = n - m_post;
        if spec.kind == crate::model::JumpKind::VelocityJump {
            let v_dof = probe_direction(f_pre, 11 + idx);
            let je = model.jump(idx, t, q, &v_dof, rho);
            if je.h.len() != f_post || je.h_v.shape() != (f_post, f_pre) || je.h_q.shape() != (f_post, n)
            {
                return Err(CoreError::Dimension {
                    callback: "jump",
                    detail: format!("jump {idx} blocks have inconsistent shapes"),
                });
            }
            let fd = fd_jacobian(&mut |qq| model.jump(idx, t, qq, &v_dof, rho).h, q, eps);
            ck.record(&format!("jump[{idx}].h_q"), &je.h_q, &fd);
            let fd = fd_jacobian(&mut |vv| model.jump(idx, t, q, vv, rho).h, &v_dof, eps);
            ck.record(&format!("jump[{idx}].h_v"), &je.h_v, &fd);
            let fd = fd_jacobian(&mut |rr| model.jump(idx, t, q, &v_dof, rr).h, rho, eps);
            ck.record(&format!("jump[{idx}].h_rho"), &je.h_rho, &fd);
            let fd = fd_time(&mut |tt| model.jump(idx, tt, q, &v_dof, rho).h, t, eps);
            ck.record(&format!("jump[{idx}].h_t"), &col(&je.h_t), &col(&fd));
        }
    }

    // --- initial conditions --------------------------------------------------
    let (dq0, dv0) = model.initial_sensitivity(rho);
    ensure_shape("initial_sensitivity.dq0", dq0.shape(), (n, p))?;
    ensure_shape("initial_sensitivity.dv0", dv0.shape(), (n, p))?;
    let fd = fd_jacobian(&mut |rr| model.initial_state(rr).0, rho, eps);
    ck.record("initial_state.dq0_drho", &dq0, &fd);
    let fd = fd_jacobian(&mut |rr| model.initial_state(rr).1, rho, eps);
    ck.record("initial_state.dv0_drho", &dv0, &fd);

    Ok(ValidationReport {
        tol: opts.tol,
        checks: ck.checks,
    })
}
