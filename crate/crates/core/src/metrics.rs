//! Evaluation of an estimated mixing matrix against ground truth.

use itertools::Itertools;
use nalgebra::DMatrix;

use crate::datamodel::Matrix;
use crate::error::{Error, Result};
use crate::linalg::inverse_condition;

/// Inputs whose singular values spread wider than this are rejected.
const MIN_INVERSE_CONDITION: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EvalReport {
    /// Comon index; `+∞` when either matrix is numerically singular.
    pub comon_index: f64,
    /// `matched_permutation[i]` is the column of `Â` matched to column `i` of `A`.
    pub matched_permutation: Vec<usize>,
    /// L2 error per matched column, both sides L1-normalized.
    pub per_column_error: Vec<f64>,
    /// Largest absolute entry difference under the matching.
    pub max_entry_error: f64,
    pub realized_snr_db: Option<f64>,
}

fn l2_normalized(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut c in out.column_iter_mut() {
        let n = c.norm();
        if n > 0.0 {
            c /= n;
        }
    }
    out
}

/// Comon's index between two square nonsingular matrices: zero exactly when
/// `Â = A·P·Λ` for a permutation `P` and a positive diagonal `Λ`.
pub fn comon_index(a: &Matrix, a_hat: &Matrix) -> Result<f64> {
    let m = a.nrows();
    if a.ncols() != m || a_hat.nrows() != m || a_hat.ncols() != m {
        return Err(Error::InvalidParameter("Comon index needs two square matrices of equal size".into()));
    }
    let a = l2_normalized(a.as_dmatrix());
    let a_hat = l2_normalized(a_hat.as_dmatrix());
    for x in [&a, &a_hat] {
        let ratio = inverse_condition(x);
        if ratio < MIN_INVERSE_CONDITION {
            return Err(Error::Conditioning { ratio });
        }
    }
    let d = a
        .lu()
        .solve(&a_hat)
        .ok_or(Error::Conditioning { ratio: 0.0 })?
        .abs();
    let sq = d.component_mul(&d);
    let rows: f64 = d.row_iter().map(|r| (r.sum() - 1.0).powi(2)).sum();
    let cols: f64 = d.column_iter().map(|c| (c.sum() - 1.0).powi(2)).sum();
    let rows2: f64 = sq.row_iter().map(|r| (r.sum() - 1.0).abs()).sum();
    let cols2: f64 = sq.column_iter().map(|c| (c.sum() - 1.0).abs()).sum();
    Ok(rows + cols + rows2 + cols2)
}

/// Aligns the columns of `Â` to those of `A` by exhaustive search over
/// permutations, minimizing the summed L2 error of L1-normalized columns.
pub fn match_columns(a: &Matrix, a_hat: &Matrix) -> EvalReport {
    let m = a.ncols();
    let a1 = a.l1_normalized_columns();
    let h1 = a_hat.l1_normalized_columns();
    let cost = DMatrix::from_fn(m, m, |i, j| (a1.column(i) - h1.column(j)).norm());
    let best = (0..m)
        .permutations(m)
        .map(|perm| {
            let total: f64 = perm.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum();
            (perm, total)
        })
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .map(|(p, _)| p)
        .unwrap_or_default();
    let per_column_error = best.iter().enumerate().map(|(i, &j)| cost[(i, j)]).collect();
    let max_entry_error = best
        .iter()
        .enumerate()
        .map(|(i, &j)| (a1.column(i) - h1.column(j)).amax())
        .fold(0.0, f64::max);
    EvalReport {
        comon_index: comon_index(a, a_hat).unwrap_or(f64::INFINITY),
        matched_permutation: best,
        per_column_error,
        max_entry_error,
        realized_snr_db: None,
    }
}

/// `10·log₁₀(‖X‖² / ‖X_noisy − X‖²)`; `+∞` when the two are identical.
pub fn realized_snr(clean: &Matrix, noisy: &Matrix) -> Result<f64> {
    if clean.nrows() != noisy.nrows() || clean.ncols() != noisy.ncols() {
        return Err(Error::InvalidParameter("SNR needs matrices of equal shape".into()));
    }
    let signal = clean.frobenius_norm().powi(2);
    if signal == 0.0 {
        return Err(Error::UndefinedSnr);
    }
    let noise = (noisy.as_dmatrix() - clean.as_dmatrix()).norm_squared();
    if noise == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal / noise).log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::gen_mixing;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn printed(rows: usize, vals: &[f64]) -> Matrix {
        Matrix::from_row_major(rows, vals.len() / rows, vals.to_vec()).unwrap()
    }

    fn a2() -> Matrix {
        printed(3, &[0.0769, 0.4615, 0.3571, 0.3846, 0.4615, 0.0714, 0.5385, 0.0769, 0.5714])
    }

    fn permute_scale(a: &Matrix, perm: &[usize], scale: &[f64]) -> Matrix {
        let m = a.as_dmatrix();
        Matrix::new(DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, perm[j])] * scale[j])).unwrap()
    }

    #[test]
    fn identical_matrices_score_zero() {
        for seed in 0..10 {
            let a = gen_mixing(4, seed).unwrap();
            assert!(comon_index(&a, &a).unwrap() < 1e-12);
        }
    }

    #[test]
    fn equivalence_class_scores_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for seed in 0..20 {
            let a = gen_mixing(4, seed).unwrap();
            let mut perm: Vec<usize> = (0..4).collect();
            perm.shuffle(&mut rng);
            let scale: Vec<f64> = (0..4).map(|_| rng.random_range(0.1..10.0)).collect();
            let b = permute_scale(&a, &perm, &scale);
            assert!(comon_index(&a, &b).unwrap() < 1e-12);
        }
    }

    #[test]
    fn golden_value_for_a_rounded_estimate() {
        // Frozen from a direct numpy evaluation of the four-term formula on the
        // four-decimal A₂ / Â₂ pair.
        let a2_hat = printed(3, &[0.4615, 0.3571, 0.0769, 0.4565, 0.0729, 0.3700, 0.0823, 0.5765, 0.5106]);
        let v = comon_index(&a2(), &a2_hat).unwrap();
        assert!((v - 0.055101308443641056).abs() < 1e-12, "{v}");
    }

    #[test]
    fn invariances() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for seed in 0..20 {
            let a = gen_mixing(3, seed).unwrap();
            let b = gen_mixing(3, seed + 100).unwrap();
            let base = comon_index(&a, &b).unwrap();
            let mut perm: Vec<usize> = (0..3).collect();
            perm.shuffle(&mut rng);
            let ones = [1.0; 3];
            let pa = permute_scale(&a, &perm, &ones);
            let pb = permute_scale(&b, &perm, &ones);
            assert!((comon_index(&pa, &pb).unwrap() - base).abs() < 1e-10 * base.max(1.0));
            let scale: Vec<f64> = (0..3).map(|_| rng.random_range(0.1..10.0)).collect();
            let sb = permute_scale(&b, &[0, 1, 2], &scale);
            assert!((comon_index(&a, &sb).unwrap() - base).abs() < 1e-10 * base.max(1.0));
        }
    }

    #[test]
    fn singular_input_is_rejected() {
        let s = printed(2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(comon_index(&Matrix::identity(2), &s), Err(Error::Conditioning { .. })));
    }

    #[test]
    fn shuffled_columns_are_matched() {
        let a = gen_mixing(4, 3).unwrap();
        let b = permute_scale(&a, &[2, 0, 3, 1], &[2.0, 0.5, 1.0, 3.0]);
        let r = match_columns(&a, &b);
        assert_eq!(r.matched_permutation, vec![1, 3, 0, 2]);
        assert!(r.per_column_error.iter().all(|&e| e < 1e-15));
    }

    #[test]
    fn permuted_rounded_estimate_matches() {
        let a1_hat = printed(3, &[0.4615, 0.3571, 0.0769, 0.4615, 0.0714, 0.3846, 0.0769, 0.5714, 0.5385]);
        let r = match_columns(&a2(), &a1_hat);
        assert_eq!(r.matched_permutation, vec![2, 0, 1]);
        assert!(r.max_entry_error < 1e-3);
    }

    #[test]
    fn rounded_four_source_estimate_within_tolerance() {
        let a3 = printed(
            4,
            &[
                0.1923, 0.2500, 0.2632, 0.1000, 0.1923, 0.2500, 0.2105, 0.2000, 0.2692, 0.3750, 0.4211, 0.3000,
                0.3462, 0.1250, 0.1053, 0.4000,
            ],
        );
        let a3_hat = printed(
            4,
            &[
                0.1000, 0.2500, 0.2632, 0.1923, 0.1997, 0.2500, 0.2107, 0.1922, 0.2992, 0.3749, 0.4211, 0.2694,
                0.4011, 0.1252, 0.1057, 0.3456,
            ],
        );
        let r = match_columns(&a3, &a3_hat);
        assert_eq!(r.matched_permutation, vec![3, 1, 2, 0]);
        assert!(r.max_entry_error <= 5e-3, "{}", r.max_entry_error);
    }

    #[test]
    fn matching_beats_identity_assignment() {
        for seed in 0..20 {
            let a = gen_mixing(4, seed).unwrap();
            let b = gen_mixing(4, seed + 50).unwrap();
            let r = match_columns(&a, &b);
            let (a1, b1) = (a.l1_normalized_columns(), b.l1_normalized_columns());
            let identity: f64 = (0..4).map(|i| (a1.column(i) - b1.column(i)).norm()).sum();
            assert!(r.per_column_error.iter().sum::<f64>() <= identity + 1e-15);
        }
    }

    #[test]
    fn snr_values() {
        let x = gen_mixing(3, 0).unwrap();
        let twice = Matrix::new(x.as_dmatrix() * 2.0).unwrap();
        assert!(realized_snr(&x, &twice).unwrap().abs() < 1e-12);
        let tenth = Matrix::new(x.as_dmatrix() * 1.1).unwrap();
        assert!((realized_snr(&x, &tenth).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(realized_snr(&x, &x).unwrap(), f64::INFINITY);
        assert!(realized_snr(&Matrix::zeros(3, 3), &x).is_err());
    }
}
