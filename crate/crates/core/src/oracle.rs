//! Independent sensitivity baselines: central finite differences over full
//! hybrid trajectories, complex-step differentiation over smooth spans, and
//! the comparison report between a baseline and the analytic propagation.

use nalgebra::{DMatrix, DVector};

use crate::error::{CoreError, CoreResult};
use crate::formulations::Formulation;
use crate::integrator::{self, IntegratorConfig, TrajectoryArchive};
use crate::model::complex::{promote_vec, C64, ComplexDynamics};
use crate::model::Regime;
use crate::model::{unpack_canonical, Model};

/// One-parameter sensitivity time series from an independent method.
#[derive(Debug, Clone)]
pub struct BaselineSeries {
    pub label: String,
    pub param_index: usize,
    pub times: Vec<f64>,
    /// `dq/drho_i` per sample, length `n`.
    pub dq: Vec<DVector<f64>>,
    /// `dv/drho_i` per sample.
    pub dv: Vec<DVector<f64>>,
    /// `dz/drho_i` per sample; absent for methods that skip the quadrature.
    pub dz: Option<Vec<f64>>,
}

/// Central finite differences of twin perturbed propagations
/// `(x(rho + eps e_i) - x(rho - eps e_i)) / (2 eps)`, sampled on the shared
/// absolute output grid.
#[allow(clippy::too_many_arguments)]
pub fn central_fd_sensitivity(
    model: &dyn Model,
    formulation: &Formulation,
    cfg: &IntegratorConfig,
    rho: &DVector<f64>,
    eps: f64,
    param_index: usize,
    t0: f64,
    t_f: f64,
) -> CoreResult<BaselineSeries> {
    if eps.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(CoreError::Configuration("fd step must be positive".into()));
    }
    let mut rho_plus = rho.clone();
    rho_plus[param_index] += eps;
    let mut rho_minus = rho.clone();
    rho_minus[param_index] -= eps;

    // the twins are independent propagations of a shared immutable model
    let (run_plus, run_minus) = std::thread::scope(|scope| {
        let plus = scope.spawn(|| {
            integrator::propagate_hybrid(model, formulation, cfg, &rho_plus, t0, t_f)
        });
        let minus = integrator::propagate_hybrid(model, formulation, cfg, &rho_minus, t0, t_f);
        (plus.join().expect("twin propagation thread"), minus)
    });
    let (run_plus, run_minus) = (run_plus?, run_minus?);
    if run_plus.events.len() != run_minus.events.len() {
        return Err(CoreError::TwinMismatch {
            param_index,
            plus_events: run_plus.events.len(),
            minus_events: run_minus.events.len(),
        });
    }

    let plus = run_plus.grid_samples();
    let minus = run_minus.grid_samples();
    debug_assert_eq!(plus.len(), minus.len(), "twin runs sample identical grids");

    let layout = run_plus.layout;
    let n = layout.n;
    let inv = 1.0 / (2.0 * eps);
    let mut times = Vec::with_capacity(plus.len());
    let mut dq = Vec::with_capacity(plus.len());
    let mut dv = Vec::with_capacity(plus.len());
    let mut dz = Vec::with_capacity(plus.len());
    for ((tp, _, yp), (tm, _, ym)) in plus.iter().zip(minus.iter()) {
        debug_assert_eq!(tp, tm, "twin runs sample identical grid times");
        times.push(*tp);
        let diff = *yp - *ym;
        dq.push(DVector::from(diff.rows(0, n).clone_owned()) * inv);
        dv.push(DVector::from(diff.rows(n, n).clone_owned()) * inv);
        dz.push(diff[layout.z_index()] * inv);
    }

    Ok(BaselineSeries {
        label: format!("central-fd(eps={eps:.3e})"),
        param_index,
        times,
        dq,
        dv,
        dz: Some(dz),
    })
}

#[allow(clippy::too_many_arguments)]
fn complex_rhs(
    model: &dyn ComplexDynamics,
    formulation: &Formulation,
    t: f64,
    y: &DVector<C64>,
    rho_c: &DVector<C64>,
    regime: Regime,
) -> CoreResult<DVector<C64>> {
    let n = model.dims().n;
    let q = DVector::from(y.rows(0, n).clone_owned());
    let v = DVector::from(y.rows(n, n).clone_owned());
    let mass = model.mass_c(t, &q, rho_c, regime);
    let force = model.force_c(t, &q, &v, rho_c, regime);
    let m = model.constraint_count(regime);

    let vdot: DVector<C64> = if m == 0 || matches!(formulation, Formulation::Ode) {
        mass.lu()
            .solve(&force)
            .ok_or(CoreError::SingularMass { cond: f64::INFINITY })?
    } else {
        let ce = model.constraints_c(t, &q, rho_c, regime);
        let dphiqv_dq = model.phi_qq_mul_c(t, &q, rho_c, regime, &v);
        let two = C64::new(2.0, 0.0);
        let c_rhs = -(&dphiqv_dq * &v + &ce.phi_tq * &v * two + &ce.phi_tt);
        match formulation {
            Formulation::DaeIndex1 => {
                let mut k = DMatrix::<C64>::zeros(n + m, n + m);
                k.view_mut((0, 0), (n, n)).copy_from(&mass);
                k.view_mut((0, n), (n, m)).copy_from(&ce.phi_q.transpose());
                k.view_mut((n, 0), (m, n)).copy_from(&ce.phi_q);
                let mut rhs = DVector::<C64>::zeros(n + m);
                rhs.rows_mut(0, n).copy_from(&force);
                rhs.rows_mut(n, m).copy_from(&c_rhs);
                let sol = k
                    .lu()
                    .solve(&rhs)
                    .ok_or(CoreError::SingularMass { cond: f64::INFINITY })?;
                DVector::from(sol.rows(0, n).clone_owned())
            }
            Formulation::Penalty(cfg) => {
                let phidot = &ce.phi_q * &v + &ce.phi_t;
                let two_xw = C64::new(2.0 * cfg.xi * cfg.omega, 0.0);
                let w2 = C64::new(cfg.omega * cfg.omega, 0.0);
                let s = -c_rhs + phidot * two_xw + &ce.phi * w2;
                let alpha = |x: &DMatrix<C64>| -> DMatrix<C64> {
                    match &cfg.alpha {
                        crate::formulations::AlphaSpec::Uniform(a) => x * C64::new(*a, 0.0),
                        crate::formulations::AlphaSpec::Matrix(a) => {
                            crate::model::complex::promote_mat(a) * x
                        }
                    }
                };
                let alpha_phi_q = alpha(&ce.phi_q);
                let m_bar = &mass + ce.phi_q.transpose() * &alpha_phi_q;
                let s_mat = DMatrix::from_column_slice(s.len(), 1, s.as_slice());
                let f_bar = &force - ce.phi_q.transpose() * alpha(&s_mat).column(0);
                m_bar
                    .lu()
                    .solve(&f_bar)
                    .ok_or(CoreError::SingularMass { cond: f64::INFINITY })?
            }
            Formulation::Ode => unreachable!(),
        }
    };

    let mut dy = DVector::<C64>::zeros(2 * n);
    dy.rows_mut(0, n).copy_from(&v);
    dy.rows_mut(n, n).copy_from(&vdot);
    Ok(dy)
}

/// Complex-step sensitivities on a smooth span: propagate `[q; v]` with
/// `rho_i -> rho_i + i eps` and read `imag(.) / eps`. The span must contain
/// no events; the caller restricts `t_f` accordingly.
#[allow(clippy::too_many_arguments)]
pub fn complex_step_sensitivity(
    model: &dyn ComplexDynamics,
    formulation: &Formulation,
    cfg: &IntegratorConfig,
    rho: &DVector<f64>,
    eps: f64,
    param_index: usize,
    t0: f64,
    t_f: f64,
) -> CoreResult<BaselineSeries> {
    if eps.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(CoreError::Configuration("complex step must be positive".into()));
    }
    let mut rho_c = promote_vec(rho);
    rho_c[param_index] += C64::new(0.0, eps);

    let (q0, v0) = model.initial_state_c(&rho_c);
    let n = model.dims().n;
    let mut y0 = DVector::<C64>::zeros(2 * n);
    y0.rows_mut(0, n).copy_from(&q0);
    y0.rows_mut(n, n).copy_from(&v0);

    let regime = Regime(0);
    let rhs =
        |t: f64, y: &DVector<C64>| complex_rhs(model, formulation, t, y, &rho_c, regime);
    let grid = integrator::build_sample_grid(cfg, t0, t_f);
    let (y_end, mut samples) = integrator::integrate_smooth(rhs, &y0, t0, t_f, cfg, &grid)?;
    if samples.last().is_none_or(|(t, _)| *t < t_f) {
        samples.push((t_f, y_end));
    }

    let inv = 1.0 / eps;
    let mut times = Vec::with_capacity(samples.len());
    let mut dq = Vec::with_capacity(samples.len());
    let mut dv = Vec::with_capacity(samples.len());
    for (t, y) in samples {
        times.push(t);
        dq.push(DVector::from_fn(n, |i, _| y[i].im * inv));
        dv.push(DVector::from_fn(n, |i, _| y[n + i].im * inv));
    }

    Ok(BaselineSeries {
        label: format!("complex-step(eps={eps:.3e})"),
        param_index,
        times,
        dq,
        dv,
        dz: None,
    })
}

/// Time windows around each event inside which a finite-difference baseline
/// is invalid: half-width `scale * eps * |dt_eve/drho_i|`.
pub fn event_exclusion_windows(
    archive: &TrajectoryArchive,
    eps: f64,
    param_index: usize,
    scale: f64,
) -> Vec<(f64, f64)> {
    archive
        .events
        .iter()
        .map(|ev| {
            let w = scale * eps * ev.dt_drho[param_index].abs();
            (ev.t_eve - w, ev.t_eve + w)
        })
        .collect()
}

/// Error of one compared quantity.
#[derive(Debug, Clone)]
pub struct QuantityReport {
    pub name: String,
    pub max_abs_err: f64,
    /// Trajectory scale (max |analytic| over compared samples).
    pub scale: f64,
    /// `max_abs_err / max(scale, floor)`.
    pub rel_err: f64,
    pub worst_t: f64,
}

/// Comparison between an analytic archive and a baseline series.
#[derive(Debug, Clone)]
pub struct CompareReport {
    pub label: String,
    pub threshold: f64,
    pub compared_samples: usize,
    pub excluded_samples: usize,
    pub quantities: Vec<QuantityReport>,
    pub max_rel_err: f64,
}

impl CompareReport {
    pub fn pass(&self) -> bool {
        self.max_rel_err <= self.threshold
    }
}

impl std::fmt::Display for CompareReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "comparison vs {} ({} samples compared, {} excluded near events)",
            self.label, self.compared_samples, self.excluded_samples
        )?;
        for q in &self.quantities {
            writeln!(
                f,
                "  {:<14} max_abs_err = {:.3e}  scale = {:.3e}  rel_err = {:.3e}  worst_t = {:.6}",
                q.name, q.max_abs_err, q.scale, q.rel_err, q.worst_t
            )?;
        }
        write!(
            f,
            "RESULT {} max_rel_err={:.6e}",
            if self.pass() { "pass" } else { "fail" },
            self.max_rel_err
        )
    }
}

/// Compare the analytic sensitivities of `archive` (for the baseline's
/// parameter) against the baseline series, outside the exclusion windows.
///
/// Relative errors are trajectory-scaled: per quantity, the worst absolute
/// deviation is divided by the largest analytic magnitude seen over the
/// compared samples (with a small floor for identically-zero quantities).
pub fn compare_report(
    archive: &TrajectoryArchive,
    baseline: &BaselineSeries,
    exclusion_windows: &[(f64, f64)],
    threshold: f64,
) -> CompareReport {
    let layout = archive.layout;
    let n = layout.n;
    let j = baseline.param_index;

    // index analytic grid samples by time
    let mut analytic: std::collections::BTreeMap<u64, &DVector<f64>> = Default::default();
    for (t, _, y) in archive.grid_samples() {
        analytic.insert(t.to_bits(), y);
    }

    let track_z = baseline.dz.is_some();
    let mut names: Vec<String> = Vec::new();
    for i in 0..n {
        names.push(format!("dq[{i}]/drho[{j}]"));
    }
    for i in 0..n {
        names.push(format!("dv[{i}]/drho[{j}]"));
    }
    if track_z {
        names.push(format!("dz/drho[{j}]"));
    }
    let count = names.len();
    let mut max_abs = vec![0.0f64; count];
    let mut scale = vec![0.0f64; count];
    let mut worst_t = vec![f64::NAN; count];
    let mut compared = 0usize;
    let mut excluded = 0usize;

    for (k, &t) in baseline.times.iter().enumerate() {
        if exclusion_windows.iter().any(|&(a, b)| t >= a && t <= b) {
            excluded += 1;
            continue;
        }
        let Some(y) = analytic.get(&t.to_bits()) else {
            continue;
        };
        compared += 1;
        let (_, sens) = unpack_canonical(y, layout, t, Regime(0));
        for i in 0..n {
            let a = sens.dq_drho[(i, j)];
            let b = baseline.dq[k][i];
            scale[i] = scale[i].max(a.abs());
            if (a - b).abs() > max_abs[i] {
                max_abs[i] = (a - b).abs();
                worst_t[i] = t;
            }
            let a = sens.dv_drho[(i, j)];
            let b = baseline.dv[k][i];
            scale[n + i] = scale[n + i].max(a.abs());
            if (a - b).abs() > max_abs[n + i] {
                max_abs[n + i] = (a - b).abs();
                worst_t[n + i] = t;
            }
        }
        if let Some(dz) = &baseline.dz {
            let a = sens.dz_drho[j];
            let b = dz[k];
            scale[2 * n] = scale[2 * n].max(a.abs());
            if (a - b).abs() > max_abs[2 * n] {
                max_abs[2 * n] = (a - b).abs();
                worst_t[2 * n] = t;
            }
        }
    }
    let mut quantities = Vec::with_capacity(count);
    let mut max_rel: f64 = 0.0;
    for i in 0..count {
        let rel = max_abs[i] / scale[i].max(1e-12);
        max_rel = max_rel.max(rel);
        quantities.push(QuantityReport {
            name: names[i].clone(),
            max_abs_err: max_abs[i],
            scale: scale[i],
            rel_err: rel,
            worst_t: worst_t[i],
        });
    }

    CompareReport {
        label: baseline.label.clone(),
        threshold,
        compared_samples: compared,
        excluded_samples: excluded,
        quantities,
        max_rel_err: max_rel,
    }
}

/// Analytic sensitivity series of one parameter extracted from an archive's
/// grid samples, aligned with baseline comparisons and convergence studies.
pub fn analytic_series(archive: &TrajectoryArchive, param_index: usize) -> BaselineSeries {
    let layout = archive.layout;
    let mut times = Vec::new();
    let mut dq = Vec::new();
    let mut dv = Vec::new();
    let mut dz = Vec::new();
    for (t, regime, y) in archive.grid_samples() {
        let (_, sens) = unpack_canonical(y, layout, t, regime);
        times.push(t);
        dq.push(DVector::from(sens.dq_drho.column(param_index).clone_owned()));
        dv.push(DVector::from(sens.dv_drho.column(param_index).clone_owned()));
        dz.push(sens.dz_drho[param_index]);
    }
    BaselineSeries {
        label: "analytic".into(),
        param_index,
        times,
        dq,
        dv,
        dz: Some(dz),
    }
}

#[cfg(test)]
mod tests {
    #[test]
    fn complex_step_scalar_sanity() {
        // f(rho) = rho^2 at rho = 3 with eps = 1e-20: imag(f)/eps = 6
        let rho = nalgebra::Complex::new(3.0, 1e-20);
        let f = rho * rho;
        let d: f64 = f.im / 1e-20;
        assert!((d - 6.0).abs() < 1e-12, "complex-step derivative {d}");
    }
}
