//! Packing of state + sensitivities into one flat vector for time integration.
//!
//! Layout: `[q; v; z; vec(Q); vec(V); Z^T]` with `Q = dq/drho` and
//! `V = dv/drho` flattened column-major. Multiplier quantities are algebraic
//! outputs and are never part of the packed vector.

use nalgebra::{DMatrix, DVector, RowDVector};

use super::{HybridState, Regime, SensitivityBundle};

/// Offsets into the packed canonical vector for given `(n, p)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CanonicalLayout {
    pub n: usize,
    pub p: usize,
}

impl CanonicalLayout {
    pub fn new(n: usize, p: usize) -> Self {
        Self { n, p }
    }

    /// Total packed length `2n + 1 + 2np + p`.
    #[allow(clippy::len_without_is_empty)] // never empty: n >= 1, p >= 1
    pub fn len(&self) -> usize {
        2 * self.n + 1 + 2 * self.n * self.p + self.p
    }

    pub fn q_range(&self) -> std::ops::Range<usize> {
        0..self.n
    }

    pub fn v_range(&self) -> std::ops::Range<usize> {
        self.n..2 * self.n
    }

    pub fn z_index(&self) -> usize {
        2 * self.n
    }

    pub fn qsens_range(&self) -> std::ops::Range<usize> {
        let s = 2 * self.n + 1;
        s..s + self.n * self.p
    }

    pub fn vsens_range(&self) -> std::ops::Range<usize> {
        let s = 2 * self.n + 1 + self.n * self.p;
        s..s + self.n * self.p
    }

    pub fn zsens_range(&self) -> std::ops::Range<usize> {
        let s = 2 * self.n + 1 + 2 * self.n * self.p;
        s..s + self.p
    }
}

/// Flatten `(state, sens)` into the canonical vector.
///
/// The time and regime tags are carried alongside the packed vector by the
/// integrator, not inside it.
pub fn pack_canonical(state: &HybridState, sens: &SensitivityBundle) -> DVector<f64> {
    let n = state.q.len();
    let p = sens.dq_drho.ncols();
    let layout = CanonicalLayout::new(n, p);
    let mut y = DVector::zeros(layout.len());
    y.rows_mut(0, n).copy_from(&state.q);
    y.rows_mut(n, n).copy_from(&state.v);
    y[layout.z_index()] = state.z;
    y.as_mut_slice()[layout.qsens_range()].copy_from_slice(sens.dq_drho.as_slice());
    y.as_mut_slice()[layout.vsens_range()].copy_from_slice(sens.dv_drho.as_slice());
    y.as_mut_slice()[layout.zsens_range()].copy_from_slice(sens.dz_drho.as_slice());
    y
}

/// Inverse of [`pack_canonical`]; `t` and `regime` are re-attached by the caller.
pub fn unpack_canonical(
    y: &DVector<f64>,
    layout: CanonicalLayout,
    t: f64,
    regime: Regime,
) -> (HybridState, SensitivityBundle) {
    let (n, p) = (layout.n, layout.p);
    debug_assert_eq!(y.len(), layout.len());
    let state = HybridState {
        t,
        q: DVector::from(y.rows(0, n).clone_owned()),
        v: DVector::from(y.rows(n, n).clone_owned()),
        z: y[layout.z_index()],
        regime,
    };
    let sens = SensitivityBundle {
        dq_drho: DMatrix::from_column_slice(n, p, &y.as_slice()[layout.qsens_range()]),
        dv_drho: DMatrix::from_column_slice(n, p, &y.as_slice()[layout.vsens_range()]),
        dz_drho: RowDVector::from_row_slice(&y.as_slice()[layout.zsens_range()]),
        dlambda_drho: None,
    };
    (state, sens)
}
