//! Vertex-scoring baseline: a column of `X` that is (nearly) a nonnegative
//! combination of the other columns cannot be a column of the mixing matrix,
//! so the `n` columns that are hardest to explain are taken as `Â`.
//!
//! This works only when every column of `A` appears among the data up to
//! scale, which is exactly the assumption the facet-based method drops.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::datamodel::{Matrix, SeparationResult};
use crate::error::{Error, Result};
use crate::nnls::{recover_sources, solve_nnls, DEFAULT_TOL};

/// Relative residual below which a linear system counts as solved exactly.
pub const FEASIBILITY_RTOL: f64 = 1e-9;

/// Relative precision of the bisection for the minimal coefficient sum.
const BISECTION_RTOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ColumnScore {
    pub column_id: usize,
    /// Squared NNLS residual for [`score_columns`]; minimal coefficient sum
    /// (`+∞` when infeasible) for [`edge_test`].
    pub score: f64,
    pub is_edge: bool,
}

/// `X` with column `k` replaced by zeros: it can never enter an NNLS
/// solution, so the remaining columns are exactly "all others".
fn others(x: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let mut y = x.clone();
    y.column_mut(k).fill(0.0);
    y
}

/// Scores every column by the squared residual of its best nonnegative
/// combination of the other columns.
pub fn score_columns(x: &Matrix) -> Result<Vec<ColumnScore>> {
    let p = x.ncols();
    if p < 2 {
        return Err(Error::InvalidParameter(format!("scoring needs at least 2 columns, got {p}")));
    }
    let xm = x.as_dmatrix();
    (0..p)
        .into_par_iter()
        .map(|k| {
            let col = xm.column(k).into_owned();
            let report = solve_nnls(&others(xm, k), &col, DEFAULT_TOL).map_err(|e| Error::Column {
                column: k,
                source: Box::new(e),
            })?;
            let score = report.residual_norm * report.residual_norm;
            let scale = col.norm_squared().max(f64::MIN_POSITIVE);
            Ok(ColumnScore {
                column_id: k,
                score,
                is_edge: score > FEASIBILITY_RTOL * scale,
            })
        })
        .collect()
}

/// Does `x = Y·λ` have a solution with `λ ≥ 0` and `Σλ ≤ t`? Checked as the
/// exact solvability of `[Y 0; 1ᵀ 1]·[μ; μ₀] = [x/t; 1]` with `μ, μ₀ ≥ 0`.
fn feasible_with_sum(y: &DMatrix<f64>, x: &DVector<f64>, t: f64) -> Result<bool> {
    let (m, p) = y.shape();
    let mut aug = DMatrix::zeros(m + 1, p + 1);
    aug.view_mut((0, 0), (m, p)).copy_from(y);
    aug.row_mut(m).fill(1.0);
    let mut rhs = DVector::zeros(m + 1);
    rhs.rows_mut(0, m).copy_from(&(x / t));
    rhs[m] = 1.0;
    let report = solve_nnls(&aug, &rhs, DEFAULT_TOL)?;
    Ok(report.residual_norm <= FEASIBILITY_RTOL * rhs.norm())
}

/// Minimal `Σλ` over `λ ≥ 0` with `Σ_{j≠k} X(:,j)·λ_j = X(:,k)`. Column `k`
/// is an edge of the data cone when the system is infeasible or the minimum
/// exceeds 1. Infeasibility is reported as `score = +∞`.
pub fn edge_test(x: &Matrix, k: usize) -> Result<ColumnScore> {
    let xm = x.as_dmatrix();
    if k >= xm.ncols() {
        return Err(Error::InvalidParameter(format!("column {k} out of range")));
    }
    let col = xm.column(k).into_owned();
    if col.norm() == 0.0 {
        return Err(Error::InvalidParameter(format!("column {k} is zero")));
    }
    let y = others(xm, k);
    let start = solve_nnls(&y, &col, DEFAULT_TOL)?;
    if start.residual_norm > FEASIBILITY_RTOL * col.norm() {
        return Ok(ColumnScore {
            column_id: k,
            score: f64::INFINITY,
            is_edge: true,
        });
    }
    // Bisect on t: feasible for every t ≥ c*, infeasible below.
    let mut hi = start.solution.sum();
    let mut lo = 0.0;
    while hi - lo > BISECTION_RTOL * hi {
        let mid = 0.5 * (lo + hi);
        if feasible_with_sum(&y, &col, mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(ColumnScore {
        column_id: k,
        score: hi,
        is_edge: hi > 1.0 + 1e-8,
    })
}

/// Takes the `n` highest-scoring columns of `X` (ties: lower index first),
/// L1-normalized, as `Â` and recovers the sources by NNLS.
pub fn nn_separate(x: &Matrix, n: usize) -> Result<SeparationResult> {
    let p = x.ncols();
    if n == 0 || n > p {
        return Err(Error::InvalidParameter(format!("cannot pick {n} of {p} columns")));
    }
    let x0 = Matrix::nonnegative(x.as_dmatrix().map(|v| v.max(0.0)))?;
    let mut scores = score_columns(x)?;
    scores.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.column_id.cmp(&b.column_id)));
    let picked: Vec<usize> = scores[..n].iter().map(|s| s.column_id).collect();
    let mut a_hat = x0.as_dmatrix().select_columns(picked.iter());
    for (mut c, &j) in a_hat.column_iter_mut().zip(&picked) {
        let sum = c.sum();
        if !(sum > 0.0) {
            return Err(Error::InvalidMatrix(format!("selected column {j} has no positive entries")));
        }
        c /= sum;
    }
    let a_hat = Matrix::nonnegative(a_hat)?;
    let s_hat = recover_sources(&a_hat, &x0, DEFAULT_TOL)?;
    let residual = (x0.as_dmatrix() - a_hat.as_dmatrix() * s_hat.as_dmatrix()).norm();
    Ok(SeparationResult {
        selected_plane_count: n,
        a_hat,
        s_hat,
        group_cardinalities: Vec::new(),
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::PointCloud;
    use crate::fca::with_origin;
    use crate::hull::quickhull;
    use crate::metrics::match_columns;
    use crate::synth::{gen_mixing, gen_sources, SourceMode, SourceSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn three() -> Matrix {
        Matrix::from_row_major(2, 3, vec![1.0, 0.0, 0.5, 0.0, 1.0, 0.5]).unwrap()
    }

    #[test]
    fn midpoint_scores_zero() {
        let s = score_columns(&three()).unwrap();
        assert!(s[2].score < 1e-20 && !s[2].is_edge);
        assert!(s[0].score > 0.0 && s[1].score > 0.0);
        assert!(s[0].is_edge && s[1].is_edge);
    }

    #[test]
    fn duplicates_score_zero() {
        let x = Matrix::from_row_major(2, 3, vec![1.0, 1.0, 0.2, 2.0, 2.0, 0.9]).unwrap();
        let s = score_columns(&x).unwrap();
        assert!(s[0].score < 1e-20 && s[1].score < 1e-20);
    }

    #[test]
    fn edge_test_examples() {
        let mid = edge_test(&three(), 2).unwrap();
        assert!((mid.score - 1.0).abs() < 1e-8 && !mid.is_edge);
        let e1 = edge_test(&three(), 0).unwrap();
        assert!(e1.score.is_infinite() && e1.is_edge);
        let scaled = Matrix::from_row_major(2, 3, vec![1.0, 0.0, 5.0, 0.0, 1.0, 5.0]).unwrap();
        let big = edge_test(&scaled, 2).unwrap();
        assert!((big.score - 10.0).abs() < 1e-7 && big.is_edge);
    }

    #[test]
    fn zero_column_is_rejected() {
        let x = Matrix::from_row_major(2, 2, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        assert!(edge_test(&x, 1).is_err());
    }

    #[test]
    fn scores_ignore_rescaling_of_other_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = DMatrix::from_fn(3, 8, |_, _| rng.random_range(0.0..1.0));
        let base = score_columns(&Matrix::new(x.clone()).unwrap()).unwrap();
        for k in 0..8 {
            let mut y = x.clone();
            let j = (k + 3) % 8;
            y.column_mut(j).scale_mut(rng.random_range(0.1..10.0));
            let s = score_columns(&Matrix::new(y).unwrap()).unwrap();
            assert!((s[k].score - base[k].score).abs() < 1e-9, "{} vs {}", s[k].score, base[k].score);
        }
    }

    #[test]
    fn edges_match_hull_vertices() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let p = rng.random_range(4..=10);
            let cols: Vec<DVector<f64>> = (0..p)
                .map(|_| {
                    let v = DVector::from_fn(3, |_, _| rng.random_range(0.01..1.0));
                    let s = v.sum();
                    v / s
                })
                .collect();
            let x = Matrix::new(DMatrix::from_columns(&cols)).unwrap();
            let cloud = with_origin(&PointCloud::from_columns(&x).unwrap());
            let hull = quickhull(&cloud).unwrap();
            for k in 0..p {
                let on_hull = hull.vertices.contains(&(k + 1));
                assert_eq!(edge_test(&x, k).unwrap().is_edge, on_hull, "column {k}");
            }
        }
    }

    #[test]
    fn picks_the_true_columns_on_nna_data() {
        let s = gen_sources(&SourceSpec::new(3, 300, SourceMode::Nna, 4)).unwrap();
        let a = gen_mixing(3, 4).unwrap();
        let x = Matrix::new(a.as_dmatrix() * s.as_dmatrix()).unwrap();
        let r = nn_separate(&x, 3).unwrap();
        assert!(match_columns(&a, &r.a_hat).max_entry_error < 1e-12);
        assert!(r.residual < 1e-8 * x.frobenius_norm());
    }

    #[test]
    fn all_columns_when_n_equals_p() {
        let x = Matrix::from_row_major(2, 2, vec![2.0, 0.0, 0.0, 3.0]).unwrap();
        let r = nn_separate(&x, 2).unwrap();
        assert_eq!(r.a_hat.ncols(), 2);
        assert!(r.residual < 1e-12);
        assert!(nn_separate(&x, 3).is_err());
    }
}
