//! Embedded Dormand-Prince 5(4) stepper with fourth-order dense output,
//! generic over real and complex scalars.

use nalgebra::{ComplexField, DVector};

use crate::error::{CoreError, CoreResult};

use super::{IntegratorConfig, MIN_STEP_FRACTION};

// Butcher tableau of the Dormand-Prince 5(4) pair.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

// Difference between the fifth- and embedded fourth-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// Dense-output coefficients.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Continuous extension of one accepted step on `[t_start, t_start + h]`.
#[derive(Debug, Clone)]
pub struct DenseStep<T: ComplexField<RealField = f64> + Copy> {
    t0: f64,
    h: f64,
    rcont: [DVector<T>; 5],
}

impl<T: ComplexField<RealField = f64> + Copy> DenseStep<T> {
    pub fn t_start(&self) -> f64 {
        self.t0
    }

    pub fn t_end(&self) -> f64 {
        self.t0 + self.h
    }

    /// Evaluate the interpolant at `t` (clamped to the step interval).
    pub fn eval(&self, t: f64) -> DVector<T> {
        let theta = ((t - self.t0) / self.h).clamp(0.0, 1.0);
        let th = T::from_real(theta);
        let th1 = T::from_real(1.0 - theta);
        // r1 + theta (r2 + (1-theta)(r3 + theta (r4 + (1-theta) r5)))
        let mut acc = &self.rcont[4] * th1;
        acc += &self.rcont[3];
        acc *= th;
        acc += &self.rcont[2];
        acc *= th1;
        acc += &self.rcont[1];
        acc *= th;
        acc += &self.rcont[0];
        acc
    }
}

pub(crate) struct StepAttempt<T: ComplexField<RealField = f64> + Copy> {
    pub y_new: DVector<T>,
    pub k_last: DVector<T>,
    pub err_norm: f64,
    pub dense: DenseStep<T>,
}

fn scaled_rms_norm<T: ComplexField<RealField = f64> + Copy>(
    e: &DVector<T>,
    y0: &DVector<T>,
    y1: &DVector<T>,
    atol: f64,
    rtol: f64,
) -> f64 {
    let n = e.len();
    let mut acc = 0.0;
    for i in 0..n {
        let sc = atol + rtol * y0[i].modulus().max(y1[i].modulus());
        let r = e[i].modulus() / sc;
        acc += r * r;
    }
    (acc / n as f64).sqrt()
}

/// One trial step from `(t, y)` with slope `k1 = f(t, y)` (FSAL).
pub(crate) fn try_step<T, F>(
    f: &mut F,
    t: f64,
    y: &DVector<T>,
    k1: &DVector<T>,
    h: f64,
    cfg: &IntegratorConfig,
) -> CoreResult<StepAttempt<T>>
where
    T: ComplexField<RealField = f64> + Copy,
    F: FnMut(f64, &DVector<T>) -> CoreResult<DVector<T>>,
{
    let hr = |c: f64| T::from_real(h * c);

    let y2 = y + k1 * hr(A21);
    let k2 = f(t + C2 * h, &y2)?;
    let y3 = y + k1 * hr(A31) + &k2 * hr(A32);
    let k3 = f(t + C3 * h, &y3)?;
    let y4 = y + k1 * hr(A41) + &k2 * hr(A42) + &k3 * hr(A43);
    let k4 = f(t + C4 * h, &y4)?;
    let y5 = y + k1 * hr(A51) + &k2 * hr(A52) + &k3 * hr(A53) + &k4 * hr(A54);
    let k5 = f(t + C5 * h, &y5)?;
    let y6 = y + k1 * hr(A61) + &k2 * hr(A62) + &k3 * hr(A63) + &k4 * hr(A64) + &k5 * hr(A65);
    let k6 = f(t + h, &y6)?;
    let y_new = y + k1 * hr(A71) + &k3 * hr(A73) + &k4 * hr(A74) + &k5 * hr(A75) + &k6 * hr(A76);
    let k7 = f(t + h, &y_new)?;

    let err_vec = k1 * hr(E1) + &k3 * hr(E3) + &k4 * hr(E4) + &k5 * hr(E5) + &k6 * hr(E6)
        + &k7 * hr(E7);
    let err_norm = scaled_rms_norm(&err_vec, y, &y_new, cfg.atol, cfg.rtol);

    let delta = &y_new - y;
    let rcont1 = y.clone();
    let rcont3 = k1 * T::from_real(h) - &delta;
    let rcont4 = &delta - &k7 * T::from_real(h) - &rcont3;
    let rcont5 = (k1 * hr(D1) + &k3 * hr(D3) + &k4 * hr(D4) + &k5 * hr(D5) + &k6 * hr(D6)
        + &k7 * hr(D7))
        .clone();
    let dense = DenseStep {
        t0: t,
        h,
        rcont: [rcont1, delta, rcont3, rcont4, rcont5],
    };

    Ok(StepAttempt {
        y_new,
        k_last: k7,
        err_norm,
        dense,
    })
}

/// Initial step-size heuristic.
fn initial_step<T, F>(
    f: &mut F,
    t0: f64,
    y0: &DVector<T>,
    f0: &DVector<T>,
    span: f64,
    cfg: &IntegratorConfig,
) -> f64
where
    T: ComplexField<RealField = f64> + Copy,
    F: FnMut(f64, &DVector<T>) -> CoreResult<DVector<T>>,
{
    let n = y0.len() as f64;
    let sc = |y: &DVector<T>, i: usize| cfg.atol + cfg.rtol * y[i].modulus();
    let d0 = (y0
        .iter()
        .enumerate()
        .map(|(i, x)| (x.modulus() / sc(y0, i)).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let d1 = (f0
        .iter()
        .enumerate()
        .map(|(i, x)| (x.modulus() / sc(y0, i)).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    h0 = h0.min(span).min(cfg.max_step);

    // one explicit Euler probe to estimate the second derivative scale
    let y1 = y0 + f0 * T::from_real(h0);
    let h = match f(t0 + h0, &y1) {
        Ok(f1) => {
            let d2 = ((&f1 - f0)
                .iter()
                .enumerate()
                .map(|(i, x)| (x.modulus() / sc(y0, i)).powi(2))
                .sum::<f64>()
                / n)
                .sqrt()
                / h0;
            let dm = d1.max(d2);
            let h1 = if dm <= 1e-15 {
                (h0 * 1e-3).max(1e-6)
            } else {
                (0.01 / dm).powf(0.2)
            };
            h1.min(100.0 * h0)
        }
        Err(_) => h0 * 1e-3,
    };
    h.min(span).min(cfg.max_step)
}

/// Decision returned by the per-step callback.
pub(crate) enum StepDecision {
    Continue,
    /// Stop integration at the given time inside the accepted step.
    Truncate(f64),
}

/// Adaptive driver. The callback sees every accepted step together with its
/// dense interpolant and may truncate the run (event localization).
pub(crate) fn drive<T, F, C>(
    f: &mut F,
    t0: f64,
    y0: &DVector<T>,
    t_end: f64,
    cfg: &IntegratorConfig,
    on_step: &mut C,
) -> CoreResult<(f64, DVector<T>)>
where
    T: ComplexField<RealField = f64> + Copy,
    F: FnMut(f64, &DVector<T>) -> CoreResult<DVector<T>>,
    C: FnMut(&DenseStep<T>, f64, &DVector<T>) -> CoreResult<StepDecision>,
{
    let span = t_end - t0;
    if span <= 0.0 {
        return Ok((t0, y0.clone()));
    }
    let min_step = MIN_STEP_FRACTION * span;

    let mut t = t0;
    let mut y = y0.clone();
    let mut k1 = f(t, &y)?;
    let mut h = initial_step(f, t0, &y, &k1, span, cfg);
    let mut err_old: f64 = 1e-4;

    const SAFETY: f64 = 0.9;
    const ALPHA: f64 = 0.7 / 5.0;
    const BETA: f64 = 0.4 / 5.0;
    const FAC_MIN: f64 = 0.2;
    const FAC_MAX: f64 = 10.0;

    loop {
        if t >= t_end {
            return Ok((t, y));
        }
        h = h.min(cfg.max_step).min(t_end - t);
        if h < min_step {
            return Err(CoreError::Stiffness { t, h });
        }

        match try_step(f, t, &y, &k1, h, cfg) {
            Ok(attempt) => {
                let err = attempt.err_norm.max(1e-30);
                if attempt.err_norm <= 1.0 {
                    // accepted; PI controller
                    let fac = (err.powf(ALPHA) / err_old.powf(BETA)) / SAFETY;
                    let scale = (1.0 / fac).clamp(FAC_MIN, FAC_MAX);
                    err_old = err.max(1e-4);

                    let t_new = t + h;
                    match on_step(&attempt.dense, t_new, &attempt.y_new)? {
                        StepDecision::Continue => {
                            t = t_new;
                            y = attempt.y_new;
                            k1 = attempt.k_last;
                            h *= scale;
                        }
                        StepDecision::Truncate(t_cut) => {
                            let y_cut = attempt.dense.eval(t_cut);
                            return Ok((t_cut, y_cut));
                        }
                    }
                } else {
                    let fac = err.powf(ALPHA) / SAFETY;
                    h *= (1.0 / fac).clamp(FAC_MIN, 1.0);
                }
            }
            // a failed evaluation at a trial point is treated as a rejected step
            Err(CoreError::SingularMass { .. }) | Err(CoreError::Evaluation { .. }) => {
                h *= 0.25;
            }
            Err(e) => return Err(e),
        }
    }
}
