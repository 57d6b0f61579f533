//! Nonnegative least squares by the Lawson–Hanson active-set method.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::datamodel::Matrix;
use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct NnlsReport {
    pub solution: DVector<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
}

/// Minimizes `‖a·s − x‖₂` subject to `s ≥ 0`.
///
/// On return the KKT conditions hold with gradient `g = aᵀ(a·s − x)`:
/// `g_i ≥ −t` everywhere and `|g_i| ≤ t` on the support, where
/// `t = tol · max(1, ‖a‖_F · ‖x‖₂)` so the test is independent of data scale.
pub fn solve_nnls(a: &DMatrix<f64>, x: &DVector<f64>, tol: f64) -> Result<NnlsReport> {
    let (m, n) = a.shape();
    if x.len() != m {
        return Err(Error::InvalidParameter(format!(
            "right-hand side has {} entries, matrix has {m} rows",
            x.len()
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter("tol must be positive".into()));
    }
    if n == 0 {
        return Ok(NnlsReport {
            solution: DVector::zeros(0),
            residual_norm: x.norm(),
            iterations: 0,
        });
    }
    let scaled_tol = tol * (a.norm() * x.norm()).max(1.0);
    let max_iter = 10 * n.max(3);

    let mut s = DVector::zeros(n);
    let mut passive = vec![false; n];
    // Columns that failed to enter because they were numerically dependent
    // on the current passive set; cleared whenever the iterate moves.
    let mut blocked = vec![false; n];
    let mut iterations = 0;

    loop {
        let w = a.tr_mul(&(x - a * &s));
        let entering = (0..n)
            .filter(|&j| !passive[j] && !blocked[j] && w[j] > scaled_tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]).then(j.cmp(&i)));
        let Some(j) = entering else { break };

        iterations += 1;
        if iterations > max_iter {
            return Err(Error::Convergence {
                iterations: max_iter,
                best_residual: (a * &s - x).norm(),
                best: s.iter().copied().collect(),
            });
        }

        passive[j] = true;
        let mut z = passive_least_squares(a, x, &passive);
        if z[j] <= 0.0 {
            passive[j] = false;
            blocked[j] = true;
            continue;
        }

        // Step back along s → z until the passive LS solution is strictly positive.
        // Each pass removes at least one passive index, so this terminates.
        while (0..n).any(|i| passive[i] && z[i] <= 0.0) {
            let (blocking, alpha) = (0..n)
                .filter(|&i| passive[i] && z[i] <= 0.0)
                .map(|i| {
                    let denom = s[i] - z[i];
                    (i, if denom > 0.0 { s[i] / denom } else { 0.0 })
                })
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("loop condition guarantees a candidate");
            for i in 0..n {
                if passive[i] {
                    s[i] += alpha * (z[i] - s[i]);
                }
            }
            s[blocking] = 0.0;
            passive[blocking] = false;
            let floor = 1e-15 * s.amax();
            for i in 0..n {
                if passive[i] && s[i] <= floor {
                    s[i] = 0.0;
                    passive[i] = false;
                }
            }
            z = passive_least_squares(a, x, &passive);
        }
        for i in 0..n {
            s[i] = if passive[i] { z[i] } else { 0.0 };
        }
        blocked.iter_mut().for_each(|b| *b = false);
    }

    let residual_norm = (a * &s - x).norm();
    Ok(NnlsReport {
        solution: s,
        residual_norm,
        iterations,
    })
}

/// Unconstrained least squares restricted to the passive columns; zero elsewhere.
fn passive_least_squares(a: &DMatrix<f64>, x: &DVector<f64>, passive: &[bool]) -> DVector<f64> {
    let idx: Vec<usize> = (0..passive.len()).filter(|&i| passive[i]).collect();
    let mut out = DVector::zeros(passive.len());
    if idx.is_empty() {
        return out;
    }
    let sub = a.select_columns(idx.iter());
    let svd = sub.svd(true, true);
    let max_sv = svd.singular_values.max();
    let eps = max_sv * 1e-13 * (a.nrows().max(idx.len()) as f64);
    if let Ok(sol) = svd.solve(x, eps) {
        for (k, &i) in idx.iter().enumerate() {
            out[i] = sol[k];
        }
    }
    out
}

/// Solves one NNLS problem per column of `x0`; returns the `n × p` coefficients.
pub fn recover_sources(a: &Matrix, x0: &Matrix, tol: f64) -> Result<Matrix> {
    if a.nrows() != x0.nrows() {
        return Err(Error::InvalidParameter(format!(
            "mixing matrix has {} rows, data has {}",
            a.nrows(),
            x0.nrows()
        )));
    }
    let n = a.ncols();
    let p = x0.ncols();
    let am = a.as_dmatrix();
    let columns: Vec<DVector<f64>> = (0..p)
        .into_par_iter()
        .map(|j| {
            solve_nnls(am, &x0.column(j), tol)
                .map(|r| r.solution)
                .map_err(|e| Error::Column {
                    column: j,
                    source: Box::new(e),
                })
        })
        .collect::<Result<_>>()?;
    let mut s = DMatrix::zeros(n, p);
    for (j, c) in columns.iter().enumerate() {
        s.set_column(j, c);
    }
    Matrix::nonnegative(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive oracle: solve unconstrained LS on every support set and keep
    /// the best one whose coefficients are all positive.
    fn enumerate_nnls(a: &DMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
        let n = a.ncols();
        let mut best = (x.norm(), DVector::zeros(n));
        for mask in 1u32..(1 << n) {
            let idx: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            let sub = a.select_columns(idx.iter());
            let Some(sol) = (sub.transpose() * &sub).try_inverse().map(|inv| inv * sub.tr_mul(x)) else {
                continue;
            };
            if sol.iter().all(|&v| v > 0.0) {
                let mut full = DVector::zeros(n);
                for (k, &i) in idx.iter().enumerate() {
                    full[i] = sol[k];
                }
                let r = (a * &full - x).norm();
                if r < best.0 {
                    best = (r, full);
                }
            }
        }
        best.1
    }

    fn kkt_holds(a: &DMatrix<f64>, x: &DVector<f64>, rep: &NnlsReport, tol: f64) -> bool {
        let g = a.tr_mul(&(a * &rep.solution - x));
        let t = tol * (a.norm() * x.norm()).max(1.0);
        rep.solution.iter().zip(g.iter()).all(|(&s, &gi)| s >= 0.0 && gi >= -t && (s == 0.0 || gi.abs() <= t))
    }

    #[test]
    fn identity_passthrough() {
        let rep = solve_nnls(&DMatrix::identity(3, 3), &DVector::from_vec(vec![1.0, 2.0, 3.0]), DEFAULT_TOL).unwrap();
        assert_eq!(rep.solution.as_slice(), &[1.0, 2.0, 3.0]);
        assert!(rep.residual_norm < 1e-15);
    }

    #[test]
    fn identity_projection() {
        let rep = solve_nnls(&DMatrix::identity(2, 2), &DVector::from_vec(vec![-1.0, 2.0]), DEFAULT_TOL).unwrap();
        assert_eq!(rep.solution.as_slice(), &[0.0, 2.0]);
        assert!((rep.residual_norm - 1.0).abs() < 1e-15);
    }

    #[test]
    fn matches_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let a = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
            let x = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
            let rep = solve_nnls(&a, &x, DEFAULT_TOL).unwrap();
            let oracle = enumerate_nnls(&a, &x);
            assert!((&rep.solution - &oracle).amax() < 1e-8, "{} vs {}", rep.solution, oracle);
            assert!(kkt_holds(&a, &x, &rep, DEFAULT_TOL));
            assert!(((&a * &rep.solution - &x).norm() - rep.residual_norm).abs() < 1e-10);
        }
    }

    #[test]
    fn wide_systems_certify() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let a = DMatrix::from_fn(3, 12, |_, _| rng.random_range(0.0..1.0));
            let x = DVector::from_fn(3, |_, _| rng.random_range(-0.5..1.0));
            let rep = solve_nnls(&a, &x, DEFAULT_TOL).unwrap();
            assert!(kkt_holds(&a, &x, &rep, 1e-9));
        }
    }

    #[test]
    fn residual_bounds_and_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let a = DMatrix::from_fn(5, 3, |_, _| rng.random_range(-1.0..1.0));
            let x = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
            let rep = solve_nnls(&a, &x, DEFAULT_TOL).unwrap();
            assert!(rep.residual_norm <= x.norm() + 1e-12);
            let ls = (a.transpose() * &a).try_inverse().unwrap() * a.tr_mul(&x);
            let clamped = ls.map(|v| v.max(0.0));
            assert!(rep.residual_norm <= (&a * clamped - &x).norm() + 1e-12);

            let c = rng.random_range(0.1..10.0);
            let j = rng.random_range(0..3);
            let mut scaled = a.clone();
            scaled.column_mut(j).scale_mut(c);
            let rep2 = solve_nnls(&scaled, &x, DEFAULT_TOL).unwrap();
            assert!((rep2.solution[j] * c - rep.solution[j]).abs() < 1e-8);
            assert!((rep2.residual_norm - rep.residual_norm).abs() < 1e-10);
            assert_eq!(solve_nnls(&a, &x, DEFAULT_TOL).unwrap(), rep);
        }
    }

    #[test]
    fn recovers_exact_sources() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = DMatrix::from_fn(3, 3, |_, _| rng.random_range(0.1..1.0));
        let s = DMatrix::from_fn(3, 40, |_, _| if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..5.0) });
        let x = Matrix::new(&a * &s).unwrap();
        let s_hat = recover_sources(&Matrix::new(a).unwrap(), &x, DEFAULT_TOL).unwrap();
        assert!((s_hat.as_dmatrix() - &s).amax() < 1e-8);
    }

    #[test]
    fn empty_sample_set() {
        let s = recover_sources(&Matrix::identity(3), &Matrix::zeros(3, 0), DEFAULT_TOL).unwrap();
        assert_eq!((s.nrows(), s.ncols()), (3, 0));
    }
}
