//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// Relative singular-value threshold used for rank decisions.
pub const RANK_RTOL: f64 = 1e-9;

/// Singular values (ascending) and the right singular vector of the smallest
/// one for a stack of row vectors. The direction minimizes `‖R·b‖₂` over unit `b`.
pub fn least_singular_direction(rows: &DMatrix<f64>) -> (DVector<f64>, Vec<f64>) {
    let m = rows.ncols();
    // Reduce tall stacks to their m×m triangular factor, and pad short ones,
    // so the SVD below is always square and yields the full right basis.
    let square = if rows.nrows() > m {
        rows.clone().qr().r()
    } else {
        let mut sq = DMatrix::zeros(m, m);
        sq.view_mut((0, 0), (rows.nrows(), m)).copy_from(rows);
        sq
    };
    let svd = square.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
    let dir = v_t.row(order[0]).transpose();
    let sv = order.iter().map(|&i| svd.singular_values[i]).collect();
    (dir, sv)
}

/// Number of singular values above `RANK_RTOL` times the largest.
pub fn numerical_rank(sv_ascending: &[f64]) -> usize {
    let largest = sv_ascending.last().copied().unwrap_or(0.0);
    if largest <= 0.0 {
        return 0;
    }
    sv_ascending.iter().filter(|&&s| s > RANK_RTOL * largest).count()
}

pub fn matrix_rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(f64::total_cmp);
    numerical_rank(&sv)
}

/// Vector orthogonal to the `d-1` given vectors in `R^d` (cofactor expansion).
/// Its norm equals the `(d-1)`-volume of the parallelotope they span.
pub fn generalized_cross(vectors: &[&[f64]], d: usize) -> Vec<f64> {
    debug_assert_eq!(vectors.len() + 1, d);
    let mut normal = vec![0.0; d];
    let k = d - 1;
    let mut minor = DMatrix::zeros(k, k);
    for (skip, out) in normal.iter_mut().enumerate() {
        for (r, v) in vectors.iter().enumerate() {
            let mut c = 0;
            for (col, &x) in v.iter().enumerate() {
                if col != skip {
                    minor[(r, c)] = x;
                    c += 1;
                }
            }
        }
        let det = if k == 0 { 1.0 } else { minor.clone().determinant() };
        *out = if skip % 2 == 0 { det } else { -det };
    }
    normal
}

/// Smallest over largest singular value; 0 for singular or empty input.
pub fn inverse_condition(m: &DMatrix<f64>) -> f64 {
    let sv = m.singular_values();
    let max = sv.max();
    if max <= 0.0 || sv.is_empty() {
        return 0.0;
    }
    sv.min() / max
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_product_in_3d() {
        let n = generalized_cross(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]], 3);
        assert_eq!(n, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn cross_is_orthogonal_in_5d() {
        let vs: Vec<Vec<f64>> = (0..4)
            .map(|i| (0..5).map(|j| ((i * 7 + j * 3) % 5) as f64 + 0.5 * j as f64).collect())
            .collect();
        let refs: Vec<&[f64]> = vs.iter().map(|v| v.as_slice()).collect();
        let n = generalized_cross(&refs, 5);
        for v in &vs {
            let dot: f64 = v.iter().zip(&n).map(|(a, b)| a * b).sum();
            assert!(dot.abs() < 1e-9);
        }
        assert!(n.iter().any(|x| x.abs() > 1e-6));
    }

    #[test]
    fn least_direction_of_plane_points() {
        let rows = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.5, 0.5, 0.0]);
        let (dir, sv) = least_singular_direction(&rows);
        assert!((dir[2].abs() - 1.0).abs() < 1e-12);
        assert_eq!(numerical_rank(&sv), 2);
    }

    #[test]
    fn least_direction_tall_and_short() {
        let tall = DMatrix::from_fn(50, 3, |i, j| if j == 1 { 0.0 } else { (i * (j + 1)) as f64 + 1.0 });
        let (dir, _) = least_singular_direction(&tall);
        assert!((dir[1].abs() - 1.0).abs() < 1e-9);
        let short = DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 2.0]);
        let (_, sv) = least_singular_direction(&short);
        assert_eq!(numerical_rank(&sv), 1);
    }
}
