//! Adaptive explicit time integration with dense output and sign-change event
//! localization, plus the hybrid propagation loop that orchestrates jumps.
//!
//! The stepper is an embedded Dormand-Prince 5(4) pair with its classical
//! fourth-order interpolant. It is generic over the scalar so the same core
//! drives both real propagation and complex-promoted smooth runs.

mod rk;

pub use rk::DenseStep;

use nalgebra::{ComplexField, DVector};

use crate::error::{CoreError, CoreResult};
use crate::events;
use crate::formulations::Formulation;
use crate::model::{
    pack_canonical, unpack_canonical, CanonicalLayout, CrossingDirection, EventRecord,
    HybridState, Model, Regime, SensitivityBundle,
};
use crate::tlm;

/// Controls for the adaptive integrator and the hybrid propagation loop.
#[derive(Debug, Clone)]
pub struct IntegratorConfig {
    pub rtol: f64,
    pub atol: f64,
    /// Upper bound on the step size \[s\].
    pub max_step: f64,
    /// Time-localization tolerance for event roots \[s\].
    pub event_tol: f64,
    /// Uniform output sampling interval \[s\] (absolute grid `t0 + k dt`).
    pub dense_sample_dt: f64,
    /// Abort threshold on the number of events.
    pub max_events: usize,
    /// Additional absolute sample times merged into the output grid.
    pub extra_sample_times: Vec<f64>,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            max_step: f64::INFINITY,
            event_tol: 1e-10,
            dense_sample_dt: 0.01,
            max_events: 10_000,
            extra_sample_times: Vec::new(),
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> CoreResult<()> {
        let ok = self.rtol > 0.0
            && self.atol > 0.0
            && self.max_step > 0.0
            && self.event_tol > 0.0
            && self.dense_sample_dt > 0.0
            && self.max_events > 0;
        if !ok {
            return Err(CoreError::Configuration(
                "integrator tolerances, step bounds and sampling must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Relative fraction of the span below which the step size counts as underflow.
const MIN_STEP_FRACTION: f64 = 1e-14;

/// Number of interior dense-output checkpoints scanned for guard sign changes.
const EVENT_CHECKPOINTS: usize = 8;

/// Outcome of one smooth segment.
#[derive(Debug, Clone)]
pub struct SegmentResult {
    /// Where integration stopped: an event root or the requested end time.
    pub t_stop: f64,
    pub y_end: DVector<f64>,
    /// Index of the triggered event, if the segment ended on one.
    pub triggered: Option<usize>,
    /// Dense samples `(t, y)` at requested grid times strictly inside the segment.
    pub samples: Vec<(f64, DVector<f64>)>,
    pub steps: usize,
}

/// Guard value as a function of the packed integration vector.
pub type GuardFn<'a> = Box<dyn Fn(&DVector<f64>) -> f64 + 'a>;

/// One guard watched during a segment, with its arming state.
pub struct GuardedEvent<'a> {
    pub index: usize,
    pub direction: CrossingDirection,
    pub value: GuardFn<'a>,
    /// A disarmed guard is ignored until `|r|` exceeds `rearm_level`.
    pub armed: bool,
    pub rearm_level: f64,
}

impl GuardedEvent<'_> {
    fn crossing_matches(&self, r_before: f64, r_after: f64) -> bool {
        match self.direction {
            CrossingDirection::Any => true,
            CrossingDirection::Rising => r_before < 0.0 && r_after > 0.0,
            CrossingDirection::Falling => r_before > 0.0 && r_after < 0.0,
        }
    }
}

/// Localize the earliest root of `guard` in `(t_lo, t_hi]` on the dense
/// interpolant by safeguarded secant/bisection.
fn locate_root(
    dense: &DenseStep<f64>,
    guard: &GuardedEvent<'_>,
    mut t_lo: f64,
    mut t_hi: f64,
    mut r_lo: f64,
    mut r_hi: f64,
    event_tol: f64,
) -> (f64, f64) {
    let r_scale = 1.0 + r_lo.abs().max(r_hi.abs());
    let r_tol = 1e-12 * r_scale;
    let mut best = if r_lo.abs() < r_hi.abs() {
        (t_lo, r_lo)
    } else {
        (t_hi, r_hi)
    };
    for _ in 0..200 {
        if (t_hi - t_lo) <= event_tol && best.1.abs() <= r_tol {
            break;
        }
        // secant candidate, bisection fallback
        let mut t_mid = if (r_hi - r_lo).abs() > 0.0 {
            t_hi - r_hi * (t_hi - t_lo) / (r_hi - r_lo)
        } else {
            0.5 * (t_lo + t_hi)
        };
        let margin = 0.05 * (t_hi - t_lo);
        if !(t_mid > t_lo + margin && t_mid < t_hi - margin) {
            t_mid = 0.5 * (t_lo + t_hi);
        }
        if t_mid <= t_lo || t_mid >= t_hi {
            break; // bracket exhausted at f64 resolution
        }
        let r_mid = (guard.value)(&dense.eval(t_mid));
        if r_mid.abs() < best.1.abs() {
            best = (t_mid, r_mid);
        }
        if (r_lo <= 0.0) == (r_mid <= 0.0) {
            t_lo = t_mid;
            r_lo = r_mid;
        } else {
            t_hi = t_mid;
            r_hi = r_mid;
        }
    }
    best
}

/// Integrate one smooth span with event watching and dense sampling.
///
/// `sample_times` must be ascending; samples falling in `(t0, t_stop]` are
/// returned. On a sign change of any armed guard the root is localized and
/// integration stops there.
pub fn integrate_segment<F>(
    mut rhs: F,
    y0: &DVector<f64>,
    t0: f64,
    t_end: f64,
    guards: &mut [GuardedEvent<'_>],
    cfg: &IntegratorConfig,
    sample_times: &[f64],
) -> CoreResult<SegmentResult>
where
    F: FnMut(f64, &DVector<f64>) -> CoreResult<DVector<f64>>,
{
    cfg.validate()?;
    let mut samples = Vec::new();
    let mut next_sample = sample_times.partition_point(|&s| s <= t0);
    let mut r_prev: Vec<f64> = guards.iter().map(|g| (g.value)(y0)).collect();
    let mut triggered = None;
    let mut steps = 0usize;

    let (t_stop, y_end) = rk::drive(
        &mut rhs,
        t0,
        y0,
        t_end,
        cfg,
        &mut |dense: &DenseStep<f64>, t_new: f64, y_new: &DVector<f64>| {
            steps += 1;
            let mut cut: Option<(f64, usize)> = None;

            // scan checkpoints of every armed guard for the earliest crossing
            for (gi, guard) in guards.iter_mut().enumerate() {
                let r_end = (guard.value)(y_new);
                if !guard.armed {
                    if r_end.abs() > guard.rearm_level {
                        guard.armed = true;
                    }
                    r_prev[gi] = r_end;
                    continue;
                }
                let mut t_a = dense.t_start();
                let mut r_a = r_prev[gi];
                for k in 1..=EVENT_CHECKPOINTS {
                    let t_b = if k == EVENT_CHECKPOINTS {
                        t_new
                    } else {
                        dense.t_start()
                            + (t_new - dense.t_start()) * (k as f64 / EVENT_CHECKPOINTS as f64)
                    };
                    let r_b = if k == EVENT_CHECKPOINTS {
                        r_end
                    } else {
                        (guard.value)(&dense.eval(t_b))
                    };
                    let crossed = (r_a <= 0.0) != (r_b <= 0.0) && r_a != r_b;
                    if crossed && guard.crossing_matches(r_a, r_b) {
                        let (t_root, _) =
                            locate_root(dense, guard, t_a, t_b, r_a, r_b, cfg.event_tol);
                        if cut.is_none_or(|(tc, _)| t_root < tc) {
                            cut = Some((t_root, guard.index));
                        }
                        break;
                    }
                    t_a = t_b;
                    r_a = r_b;
                }
                r_prev[gi] = r_end;
            }

            let limit = cut.map_or(t_new, |(tc, _)| tc);
            while next_sample < sample_times.len() && sample_times[next_sample] <= limit {
                let ts = sample_times[next_sample];
                if ts > dense.t_start() {
                    samples.push((ts, dense.eval(ts)));
                }
                next_sample += 1;
            }
            if let Some((tc, idx)) = cut {
                triggered = Some(idx);
                return Ok(rk::StepDecision::Truncate(tc));
            }
            Ok(rk::StepDecision::Continue)
        },
    )?;

    Ok(SegmentResult {
        t_stop,
        y_end,
        triggered,
        samples,
        steps,
    })
}

/// Final state and dense samples of a smooth integration.
pub type SmoothRun<T> = (DVector<T>, Vec<(f64, DVector<T>)>);

/// Integrate a smooth span without events, for an arbitrary (possibly
/// complex) scalar. Returns the final state and dense samples.
pub fn integrate_smooth<T, F>(
    mut rhs: F,
    y0: &DVector<T>,
    t0: f64,
    t_end: f64,
    cfg: &IntegratorConfig,
    sample_times: &[f64],
) -> CoreResult<SmoothRun<T>>
where
    T: ComplexField<RealField = f64> + Copy,
    F: FnMut(f64, &DVector<T>) -> CoreResult<DVector<T>>,
{
    cfg.validate()?;
    let mut samples = Vec::new();
    let mut next_sample = sample_times.partition_point(|&s| s <= t0);
    let (_, y_end) = rk::drive(
        &mut rhs,
        t0,
        y0,
        t_end,
        cfg,
        &mut |dense: &DenseStep<T>, t_new: f64, _y_new: &DVector<T>| {
            while next_sample < sample_times.len() && sample_times[next_sample] <= t_new {
                let ts = sample_times[next_sample];
                if ts > dense.t_start() {
                    samples.push((ts, dense.eval(ts)));
                }
                next_sample += 1;
            }
            Ok(rk::StepDecision::Continue)
        },
    )?;
    Ok((y_end, samples))
}

/// Classification of an archived sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleKind {
    /// Segment boundary (start of span, event, end of span).
    Boundary,
    /// Point of the uniform/extra output grid.
    Grid,
}

/// Dense samples of one smooth span between events.
#[derive(Debug, Clone)]
pub struct TrajectorySegment {
    pub regime: Regime,
    pub times: Vec<f64>,
    pub kinds: Vec<SampleKind>,
    /// Packed canonical samples, one per time.
    pub samples: Vec<DVector<f64>>,
}

/// Full output of a hybrid propagation.
#[derive(Debug, Clone)]
pub struct TrajectoryArchive {
    pub layout: CanonicalLayout,
    pub t0: f64,
    pub t_end: f64,
    pub segments: Vec<TrajectorySegment>,
    pub events: Vec<EventRecord>,
    pub final_state: HybridState,
    pub final_sens: SensitivityBundle,
    /// `dpsi/drho`, including the terminal cost.
    pub cost_gradient: nalgebra::RowDVector<f64>,
}

impl TrajectoryArchive {
    /// All grid-kind samples as `(t, regime, packed)` in time order.
    pub fn grid_samples(&self) -> Vec<(f64, Regime, &DVector<f64>)> {
        let mut out = Vec::new();
        for seg in &self.segments {
            for i in 0..seg.times.len() {
                if seg.kinds[i] == SampleKind::Grid {
                    out.push((seg.times[i], seg.regime, &seg.samples[i]));
                }
            }
        }
        out
    }

    /// All samples (boundaries included) as `(t, regime, packed)`.
    pub fn all_samples(&self) -> Vec<(f64, Regime, &DVector<f64>)> {
        let mut out = Vec::new();
        for seg in &self.segments {
            for i in 0..seg.times.len() {
                out.push((seg.times[i], seg.regime, &seg.samples[i]));
            }
        }
        out
    }

    pub fn state_at(&self, t: f64, y: &DVector<f64>, regime: Regime) -> HybridState {
        unpack_canonical(y, self.layout, t, regime).0
    }
}

/// Check that the model's initial conditions satisfy the position- and
/// velocity-level constraints of the initial regime under `formulation`.
pub fn verify_initial_consistency(
    model: &dyn Model,
    formulation: &Formulation,
    t0: f64,
    rho: &DVector<f64>,
) -> CoreResult<()> {
    let (q0, v0) = model.initial_state(rho);
    initial_consistency_check(model, formulation, t0, &q0, &v0, rho)
}

fn initial_consistency_check(
    model: &dyn Model,
    formulation: &Formulation,
    t0: f64,
    q0: &DVector<f64>,
    v0: &DVector<f64>,
    rho: &DVector<f64>,
) -> CoreResult<()> {
    let m = model.constraint_count(Regime(0));
    if m == 0 {
        return Ok(());
    }
    if matches!(formulation, Formulation::Ode) {
        return Err(CoreError::Configuration(
            "plain ODE formulation cannot integrate a constrained model".into(),
        ));
    }
    let ce = model.constraints(t0, q0, rho, Regime(0));
    let pos_res = ce.phi.amax();
    if pos_res > 1e-8 {
        return Err(CoreError::InconsistentInitialState {
            detail: "position constraints violated at t0".into(),
            residual: pos_res,
        });
    }
    let vel_res = (&ce.phi_q * v0 + &ce.phi_t).amax();
    if vel_res > 1e-8 {
        return Err(CoreError::InconsistentInitialState {
            detail: "velocity constraints violated at t0".into(),
            residual: vel_res,
        });
    }
    Ok(())
}

/// Merged ascending list of output sample times in `(t0, t_f]`.
pub(crate) fn build_sample_grid(cfg: &IntegratorConfig, t0: f64, t_f: f64) -> Vec<f64> {
    let mut grid = Vec::new();
    let mut k = 1usize;
    loop {
        let t = t0 + k as f64 * cfg.dense_sample_dt;
        if t > t_f + 1e-12 * (1.0 + t_f.abs()) {
            break;
        }
        grid.push(t.min(t_f));
        k += 1;
    }
    for &t in &cfg.extra_sample_times {
        if t > t0 && t <= t_f {
            grid.push(t);
        }
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// Propagate states, the quadrature, and all sensitivities from `t0` to `t_f`,
/// applying the analytical jump conditions at each localized event.
pub fn propagate_hybrid(
    model: &dyn Model,
    formulation: &Formulation,
    cfg: &IntegratorConfig,
    rho: &DVector<f64>,
    t0: f64,
    t_f: f64,
) -> CoreResult<TrajectoryArchive> {
    cfg.validate()?;
    let dims = model.dims();
    dims.validate()?;
    if rho.len() != dims.p {
        return Err(CoreError::Dimension {
            callback: "propagate_hybrid",
            detail: format!("expected {} parameters, got {}", dims.p, rho.len()),
        });
    }
    if rho.iter().any(|x| !x.is_finite()) {
        return Err(CoreError::Configuration("parameter vector must be finite".into()));
    }
    if t_f.partial_cmp(&t0) != Some(std::cmp::Ordering::Greater) {
        return Err(CoreError::Configuration("t_f must exceed t0".into()));
    }
    if let Formulation::Penalty(pc) = formulation {
        pc.validate(dims.m)?;
    }

    let (q0, v0) = model.initial_state(rho);
    let (dq0, dv0) = model.initial_sensitivity(rho);
    initial_consistency_check(model, formulation, t0, &q0, &v0, rho)?;

    let layout = CanonicalLayout::new(dims.n, dims.p);
    let mut state = HybridState {
        t: t0,
        q: q0,
        v: v0,
        z: 0.0,
        regime: Regime(0),
    };
    let mut sens = SensitivityBundle {
        dq_drho: dq0,
        dv_drho: dv0,
        dz_drho: nalgebra::RowDVector::zeros(dims.p),
        dlambda_drho: None,
    };
    let mut y = pack_canonical(&state, &sens);

    let grid = build_sample_grid(cfg, t0, t_f);
    let n = dims.n;
    let mut guards: Vec<GuardedEvent<'_>> = (0..model.num_events())
        .map(|idx| {
            let spec = model.event_spec(idx);
            let r0 = model.event(idx, &state.q).r;
            let rearm_level = 1e-11 * (1.0 + r0.abs());
            GuardedEvent {
                index: idx,
                direction: spec.direction,
                value: Box::new(move |yv: &DVector<f64>| {
                    let q = DVector::from(yv.rows(0, n).clone_owned());
                    model.event(idx, &q).r
                }),
                armed: r0.abs() > rearm_level,
                rearm_level,
            }
        })
        .collect();

    let mut segments = Vec::new();
    let mut records: Vec<EventRecord> = Vec::new();

    loop {
        let regime = state.regime;
        let seg_start_t = state.t;
        let seg_start_y = y.clone();
        let rhs = |t: f64, yv: &DVector<f64>| {
            tlm::canonical_rhs(model, formulation, regime, rho, layout, t, yv)
        };
        let res = integrate_segment(rhs, &y, seg_start_t, t_f, &mut guards, cfg, &grid)?;

        let mut seg = TrajectorySegment {
            regime,
            times: vec![seg_start_t],
            kinds: vec![SampleKind::Boundary],
            samples: vec![seg_start_y],
        };
        for (ts, ys) in res.samples {
            if ts > *seg.times.last().unwrap() {
                seg.times.push(ts);
                seg.kinds.push(SampleKind::Grid);
                seg.samples.push(ys);
            }
        }
        if res.t_stop > *seg.times.last().unwrap() {
            seg.times.push(res.t_stop);
            seg.kinds.push(SampleKind::Boundary);
            seg.samples.push(res.y_end.clone());
        }
        segments.push(seg);

        y = res.y_end;
        let (s, b) = unpack_canonical(&y, layout, res.t_stop, regime);
        state = s;
        sens = b;

        match res.triggered {
            None => break,
            Some(event_index) => {
                if records.len() + 1 > cfg.max_events {
                    return Err(CoreError::ZenoSuspected {
                        max_events: cfg.max_events,
                        t: state.t,
                    });
                }
                let record =
                    events::apply_event(model, formulation, event_index, &state, &sens, rho)?;
                state = record.state_post.clone();
                sens = record.sens_post.clone();
                y = pack_canonical(&state, &sens);
                // mask the fired guard until the trajectory moves off the surface
                for g in guards.iter_mut() {
                    if g.index == event_index {
                        g.armed = false;
                        let r_here = model.event(event_index, &state.q).r;
                        g.rearm_level = 1e-11 * (1.0 + r_here.abs());
                    }
                }
                records.push(record);
            }
        }
    }

    sens.dlambda_drho =
        events::jump_multiplier_sens(model, formulation, &state, &sens, rho)?;
    let cost_gradient = tlm::cost_gradient(model, &state, &sens, rho);

    Ok(TrajectoryArchive {
        layout,
        t0,
        t_end: state.t,
        segments,
        events: records,
        final_state: state,
        final_sens: sens,
        cost_gradient,
    })
}
