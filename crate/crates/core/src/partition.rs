//! Coordinate partitioning into dependent and independent (dof) sets.
//!
//! A rank-revealing column-pivoted factorization of the constraint Jacobian
//! `Phi_q` selects `m` well-conditioned columns as dependent coordinates; the
//! remaining `f = n - m` columns are the local degrees of freedom. The matrix
//! `R = -Phi_qdep^{-1} Phi_qdof` maps dof rates to dependent rates. Dependent
//! states and sensitivities are then resolved from the (differentiated)
//! constraint equations.

use nalgebra::linalg::LU;
use nalgebra::{DMatrix, DVector, Dyn};

use crate::error::{CoreError, CoreResult};
use crate::model::{Model, Regime};

/// Default relative pivot threshold for the rank test.
pub const DEFAULT_PIVOT_TOL: f64 = 1e-8;

/// Immutable partition snapshot tied to one linearization point `(t, q)`.
#[derive(Debug, Clone)]
pub struct CoordinatePartition {
    /// Indices of the dependent coordinates (ascending), length `m`.
    pub perm_dep: Vec<usize>,
    /// Indices of the independent coordinates (ascending), length `f`.
    pub perm_dof: Vec<usize>,
    /// `R = -Phi_qdep^{-1} Phi_qdof`, `m x f`.
    pub r_matrix: DMatrix<f64>,
    /// LU factorization of the `m x m` dependent block.
    phi_qdep_lu: LU<f64, Dyn, Dyn>,
    /// Whether a preferred-dof hint was requested and honored.
    pub hint_honored: bool,
    /// Pivot magnitudes in selection order (largest first).
    pub pivots: Vec<f64>,
}

impl CoordinatePartition {
    pub fn m(&self) -> usize {
        self.perm_dep.len()
    }

    pub fn f(&self) -> usize {
        self.perm_dof.len()
    }

    /// Solve `Phi_qdep X = B`.
    pub fn solve_dep(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        self.phi_qdep_lu.solve_mut(&mut x);
        x
    }

    /// Gather the dependent rows of an `n x k` matrix into an `m x k` matrix.
    pub fn gather_dep(&self, full: &DMatrix<f64>) -> DMatrix<f64> {
        gather_rows(full, &self.perm_dep)
    }

    /// Gather the dof rows of an `n x k` matrix into an `f x k` matrix.
    pub fn gather_dof(&self, full: &DMatrix<f64>) -> DMatrix<f64> {
        gather_rows(full, &self.perm_dof)
    }

    /// Gather the dof entries of a length-`n` vector.
    pub fn gather_dof_vec(&self, full: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.perm_dof.len(), |i, _| full[self.perm_dof[i]])
    }

    /// Gather the dependent entries of a length-`n` vector.
    pub fn gather_dep_vec(&self, full: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.perm_dep.len(), |i, _| full[self.perm_dep[i]])
    }

    /// Scatter dependent rows back into an `n x k` matrix.
    pub fn scatter_dep(&self, full: &mut DMatrix<f64>, dep: &DMatrix<f64>) {
        for (i, &row) in self.perm_dep.iter().enumerate() {
            for j in 0..full.ncols() {
                full[(row, j)] = dep[(i, j)];
            }
        }
    }

    /// Scatter dof rows back into an `n x k` matrix.
    pub fn scatter_dof(&self, full: &mut DMatrix<f64>, dof: &DMatrix<f64>) {
        for (i, &row) in self.perm_dof.iter().enumerate() {
            for j in 0..full.ncols() {
                full[(row, j)] = dof[(i, j)];
            }
        }
    }

    /// Assemble a full velocity vector from dof values and the dependent
    /// resolution `v_dep = R v_dof - Phi_qdep^{-1} Phi_t`.
    pub fn assemble_velocity(&self, v_dof: &DVector<f64>, phi_t: &DVector<f64>) -> DVector<f64> {
        let v_dep = resolve_dependent_velocity(self, phi_t, v_dof);
        let n = self.m() + self.f();
        let mut v = DVector::zeros(n);
        for (i, &row) in self.perm_dof.iter().enumerate() {
            v[row] = v_dof[i];
        }
        for (i, &row) in self.perm_dep.iter().enumerate() {
            v[row] = v_dep[i];
        }
        v
    }
}

fn gather_rows(full: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), full.ncols(), |i, j| full[(rows[i], j)])
}

/// Column selection by modified Gram-Schmidt with column pivoting restricted
/// to `allowed`. Returns the chosen column indices and their pivot magnitudes.
fn pivoted_columns(work: &DMatrix<f64>, allowed: &[usize], count: usize) -> (Vec<usize>, Vec<f64>) {
    let m = work.nrows();
    let mut cols: Vec<DVector<f64>> = allowed.iter().map(|&j| work.column(j).into()).collect();
    let mut remaining: Vec<usize> = (0..allowed.len()).collect();
    let mut chosen = Vec::with_capacity(count);
    let mut pivots = Vec::with_capacity(count);
    for _ in 0..count.min(m) {
        // pick the remaining column with the largest residual norm
        let (pos, &best) = match remaining
            .iter()
            .enumerate()
            .max_by(|a, b| cols[*a.1].norm().total_cmp(&cols[*b.1].norm()))
        {
            Some(x) => x,
            None => break,
        };
        let norm = cols[best].norm();
        pivots.push(norm);
        chosen.push(allowed[best]);
        remaining.remove(pos);
        if norm == 0.0 {
            continue;
        }
        let dir = &cols[best] / norm;
        for &j in &remaining {
            let proj = dir.dot(&cols[j]);
            cols[j] -= &dir * proj;
        }
    }
    (chosen, pivots)
}

/// Row-equilibrate (infinity norm) a copy of `phi_q`; scaling affects only
/// the pivot choice, not the resulting `R`.
fn equilibrated(phi_q: &DMatrix<f64>) -> DMatrix<f64> {
    let mut work = phi_q.clone();
    for i in 0..work.nrows() {
        let s = work.row(i).amax();
        if s > 0.0 {
            let inv = 1.0 / s;
            for j in 0..work.ncols() {
                work[(i, j)] *= inv;
            }
        }
    }
    work
}

fn pivot_bound_ok(pivots: &[f64], m: usize, pivot_tol: f64) -> bool {
    pivots.len() == m && pivots[m - 1] >= pivot_tol * pivots[0] && pivots[0] > 0.0
}

/// Partition the coordinates for a given constraint Jacobian.
///
/// When `preferred_dof` is supplied and the pivot bound holds with those
/// columns excluded from the dependent set, the hint is honored; otherwise the
/// selection falls back to free pivoting and the override is logged.
pub fn partition_coordinates(
    phi_q: &DMatrix<f64>,
    pivot_tol: f64,
    preferred_dof: Option<&[usize]>,
) -> CoreResult<CoordinatePartition> {
    let (m, n) = phi_q.shape();
    if m == 0 {
        return Err(CoreError::Configuration(
            "partition requested for an unconstrained regime".into(),
        ));
    }
    let work = equilibrated(phi_q);

    let mut dep: Option<(Vec<usize>, Vec<f64>, bool)> = None;
    if let Some(hint) = preferred_dof {
        if hint.len() == n - m && hint.iter().all(|&j| j < n) {
            let allowed: Vec<usize> = (0..n).filter(|j| !hint.contains(j)).collect();
            let (chosen, pivots) = pivoted_columns(&work, &allowed, m);
            if pivot_bound_ok(&pivots, m, pivot_tol) {
                dep = Some((chosen, pivots, true));
            } else {
                log::warn!(
                    "preferred-dof hint rejected (pivot bound failed); falling back to free pivoting"
                );
            }
        } else {
            log::warn!("preferred-dof hint has wrong length or out-of-range indices; ignored");
        }
    }

    let (mut chosen, pivots, hint_honored) = match dep {
        Some(x) => x,
        None => {
            let all: Vec<usize> = (0..n).collect();
            let (chosen, pivots) = pivoted_columns(&work, &all, m);
            if !pivot_bound_ok(&pivots, m, pivot_tol) {
                let estimated_rank = pivots
                    .iter()
                    .take_while(|&&s| s >= pivot_tol * pivots.first().copied().unwrap_or(0.0))
                    .count();
                return Err(CoreError::RankDeficiency {
                    estimated_rank,
                    required: m,
                });
            }
            (chosen, pivots, false)
        }
    };

    chosen.sort_unstable();
    let perm_dep = chosen;
    let perm_dof: Vec<usize> = (0..n).filter(|j| !perm_dep.contains(j)).collect();

    let phi_qdep = DMatrix::from_fn(m, m, |i, j| phi_q[(i, perm_dep[j])]);
    let phi_qdof = DMatrix::from_fn(m, n - m, |i, j| phi_q[(i, perm_dof[j])]);
    let lu = phi_qdep.lu();
    if !lu.is_invertible() {
        return Err(CoreError::RankDeficiency {
            estimated_rank: m.saturating_sub(1),
            required: m,
        });
    }
    let mut r_matrix = phi_qdof;
    lu.solve_mut(&mut r_matrix);
    r_matrix.neg_mut();

    Ok(CoordinatePartition {
        perm_dep,
        perm_dof,
        r_matrix,
        phi_qdep_lu: lu,
        hint_honored,
        pivots,
    })
}

/// `v_dep = R v_dof - Phi_qdep^{-1} Phi_t`.
pub fn resolve_dependent_velocity(
    part: &CoordinatePartition,
    phi_t: &DVector<f64>,
    v_dof: &DVector<f64>,
) -> DVector<f64> {
    let correction = part.solve_dep(&DMatrix::from_column_slice(phi_t.len(), 1, phi_t.as_slice()));
    &part.r_matrix * v_dof - correction.column(0)
}

/// Dependent rows of the position sensitivity:
/// `Q_dep = R Q_dof - Phi_qdep^{-1} Phi_rho`.
pub fn resolve_dependent_position_sens(
    part: &CoordinatePartition,
    phi_rho: &DMatrix<f64>,
    q_sens_dof: &DMatrix<f64>,
) -> DMatrix<f64> {
    &part.r_matrix * q_sens_dof - part.solve_dep(phi_rho)
}

/// Dependent rows of the velocity sensitivity, from the parameter derivative
/// of the velocity-level constraint:
/// `V_dep = R V_dof - Phi_qdep^{-1} [ (d(Phi_q v)/dq + Phi_tq) Q + d(Phi_q v)/drho + Phi_trho ]`.
#[allow(clippy::too_many_arguments)]
pub fn resolve_dependent_velocity_sens(
    part: &CoordinatePartition,
    model: &dyn Model,
    t: f64,
    q: &DVector<f64>,
    v: &DVector<f64>,
    rho: &DVector<f64>,
    regime: Regime,
    q_sens_full: &DMatrix<f64>,
    v_sens_dof: &DMatrix<f64>,
) -> DMatrix<f64> {
    let ce = model.constraints(t, q, rho, regime);
    let dphiqv_dq = model.phi_qq_mul(t, q, rho, regime, v);
    let dphiqv_drho = model.phi_qrho_mul(t, q, rho, regime, v);
    let rhs = (dphiqv_dq + &ce.phi_tq) * q_sens_full + dphiqv_drho + &ce.phi_trho;
    &part.r_matrix * v_sens_dof - part.solve_dep(&rhs)
}

/// Newton projection of a position guess onto the constraint manifold,
/// adjusting only the dependent coordinates of the supplied partition's dof
/// split. Used to manufacture feasible probe states.
pub fn project_to_manifold(
    model: &dyn Model,
    t: f64,
    q_guess: &DVector<f64>,
    rho: &DVector<f64>,
    regime: Regime,
    pivot_tol: f64,
) -> CoreResult<DVector<f64>> {
    let mut q = q_guess.clone();
    if model.constraint_count(regime) == 0 {
        return Ok(q);
    }
    for _ in 0..50 {
        let ce = model.constraints(t, &q, rho, regime);
        if ce.phi.amax() < 1e-13 {
            return Ok(q);
        }
        let part = partition_coordinates(&ce.phi_q, pivot_tol, model.preferred_dof(regime).as_deref())?;
        let delta = part.solve_dep(&DMatrix::from_column_slice(ce.phi.len(), 1, ce.phi.as_slice()));
        for (i, &row) in part.perm_dep.iter().enumerate() {
            q[row] -= delta[(i, 0)];
        }
    }
    let residual = model.constraints(t, &q, rho, regime).phi.amax();
    if residual < 1e-10 {
        Ok(q)
    } else {
        Err(CoreError::InconsistentInitialState {
            detail: "Newton projection onto the constraint manifold failed".into(),
            residual,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn trivial_row_selects_first() {
        let phi_q = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let part = partition_coordinates(&phi_q, DEFAULT_PIVOT_TOL, None).unwrap();
        assert_eq!(part.perm_dep, vec![0]);
        assert_eq!(part.perm_dof, vec![1]);
        assert_eq!(part.r_matrix[(0, 0)], 0.0);
    }

    #[test]
    fn pivoting_is_forced_by_zero_column() {
        let phi_q = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let part = partition_coordinates(&phi_q, DEFAULT_PIVOT_TOL, None).unwrap();
        assert_eq!(part.perm_dep, vec![1]);
        assert_eq!(part.perm_dof, vec![0]);
        assert_eq!(part.r_matrix[(0, 0)], 0.0);
    }

    #[test]
    fn rank_deficiency_detected() {
        let phi_q = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, 2.0, 4.0, 0.0]);
        let err = partition_coordinates(&phi_q, DEFAULT_PIVOT_TOL, None).unwrap_err();
        match err {
            CoreError::RankDeficiency { estimated_rank, required } => {
                assert_eq!(estimated_rank, 1);
                assert_eq!(required, 2);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn pendulum_dependent_velocity() {
        // circle x^2 + y^2 = L^2, dof = x: v_y = -(x/y) v_x
        let (x, y) = (0.6, -0.8);
        let phi_q = DMatrix::from_row_slice(1, 2, &[2.0 * x, 2.0 * y]);
        let part = partition_coordinates(&phi_q, DEFAULT_PIVOT_TOL, Some(&[0])).unwrap();
        assert!(part.hint_honored);
        assert_eq!(part.perm_dep, vec![1]);
        let v_dof = DVector::from_vec(vec![1.3]);
        let v_dep = resolve_dependent_velocity(&part, &DVector::zeros(1), &v_dof);
        assert_relative_eq!(v_dep[0], -(x / y) * 1.3, max_relative = 1e-14);
    }

    #[test]
    fn hint_rejected_when_singular() {
        // forcing dof = {1} would leave the zero column as the dependent block
        let phi_q = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let part = partition_coordinates(&phi_q, DEFAULT_PIVOT_TOL, Some(&[1])).unwrap();
        assert!(!part.hint_honored);
        assert_eq!(part.perm_dep, vec![1]);
    }

    fn random_full_rank(m: usize, n: usize, seed: u64) -> DMatrix<f64> {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        loop {
            let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-2.0..2.0));
            let svd = a.clone().svd(false, false);
            let smin = svd.singular_values.min();
            let smax = svd.singular_values.max();
            if smin > 1e-3 * smax {
                return a;
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        /// Assembled Q satisfies Phi_q Q + Phi_rho = 0.
        #[test]
        fn assembled_position_sens_satisfies_constraint(seed in 0u64..500, m in 1usize..4, extra in 1usize..4, p in 1usize..3) {
            let n = m + extra;
            let phi_q = random_full_rank(m, n, seed);
            use rand::prelude::*;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed.wrapping_add(17));
            let phi_rho = DMatrix::from_fn(m, p, |_, _| rng.random_range(-1.0..1.0));
            let q_dof = DMatrix::from_fn(n - m, p, |_, _| rng.random_range(-1.0..1.0));

            let part = partition_coordinates(&phi_q, DEFAULT_PIVOT_TOL, None).unwrap();
            let q_dep = resolve_dependent_position_sens(&part, &phi_rho, &q_dof);
            let mut full = DMatrix::zeros(n, p);
            part.scatter_dof(&mut full, &q_dof);
            part.scatter_dep(&mut full, &q_dep);
            let residual = (&phi_q * &full + &phi_rho).amax();
            let scale = 1.0 + phi_rho.amax() + full.amax();
            prop_assert!(residual <= 1e-10 * scale, "residual {residual}");
        }

        /// Pivot choice is invariant under row scaling.
        #[test]
        fn partition_invariant_under_row_scaling(seed in 0u64..500, m in 1usize..4, extra in 1usize..4) {
            let n = m + extra;
            let phi_q = random_full_rank(m, n, seed);
            use rand::prelude::*;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed.wrapping_add(31));
            let mut scaled = phi_q.clone();
            for i in 0..m {
                let s = 10f64.powf(rng.random_range(-6.0..6.0));
                for j in 0..n {
                    scaled[(i, j)] *= s;
                }
            }
            let a = partition_coordinates(&phi_q, DEFAULT_PIVOT_TOL, None).unwrap();
            let b = partition_coordinates(&scaled, DEFAULT_PIVOT_TOL, None).unwrap();
            prop_assert_eq!(a.perm_dep, b.perm_dep);
        }
    }

    #[test]
    fn repartition_nearby_r_changes_smoothly() {
        let phi_q = DMatrix::from_row_slice(2, 3, &[1.0, 0.2, 0.3, 0.1, 1.0, -0.4]);
        let part = partition_coordinates(&phi_q, DEFAULT_PIVOT_TOL, None).unwrap();
        let mut nearby = phi_q.clone();
        let dq = 1e-6;
        nearby[(0, 2)] += dq;
        nearby[(1, 0)] -= dq;
        let part2 = partition_coordinates(&nearby, DEFAULT_PIVOT_TOL, None).unwrap();
        assert_eq!(part.perm_dep, part2.perm_dep);
        let diff = (&part.r_matrix - &part2.r_matrix).amax();
        assert!(diff < 50.0 * dq, "R changed by {diff} for perturbation {dq}");
    }
}
