//! Synthetic sources, mixing matrices and noise.
//!
//! Source rows are sums of Lorentzian peaks `h·γ²/((t−t₀)²+γ²)`, the line
//! shape of the real part of an NMR spectrum. Two source conditions are
//! available:
//!
//! * [`SourceMode::Nna`]: every source owns one stand-alone column where all
//!   other sources vanish, so the columns of `A` appear among the data.
//! * [`SourceMode::Facet`]: no stand-alone columns. The sample axis is cut
//!   into one band per source; source `i` is silent on band `i` and places
//!   its peaks in the other bands, so every column of band `i` lies on the
//!   facet of `cone(A)` opposite `a_i`. Peaks come in clusters: each other
//!   source puts one peak near a shared center, so the overlapping tails
//!   sweep the peak ratios across the whole facet. A positive baseline under every
//!   source keeps all columns away from the edges of the cone. On top of
//!   that, `m−1` columns of band `i` are overwritten with the integer
//!   patterns `1 + e_k` (all entries in {1, 2}) to guarantee `m−1` linearly
//!   independent points on every facet.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::datamodel::Matrix;
use crate::error::{Error, Result};
use crate::linalg::{inverse_condition, matrix_rank};

/// Entries below this magnitude count as zero in condition checks.
pub const ZERO_TOL: f64 = 1e-12;

const PEAK_HEIGHT: (f64, f64) = (200.0, 1000.0);
/// Constant offset under every source; keeps points off the facets they do
/// not belong to by a margin far above the usual grouping thresholds.
const BASELINE: (f64, f64) = (10.0, 30.0);
/// Peak half-widths as a fraction of the number of samples.
const PEAK_WIDTH: (f64, f64) = (0.0002, 0.001);
/// Peaks of one cluster sit within this many half-widths of its center.
const CLUSTER_SPREAD: f64 = 1.5;
const MAX_MIXING_CONDITION: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceMode {
    Nna,
    Facet,
}

impl std::str::FromStr for SourceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nna" => Ok(SourceMode::Nna),
            "facet" => Ok(SourceMode::Facet),
            other => Err(Error::InvalidSpec(format!("unknown source mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SourceSpec {
    pub n_sources: usize,
    pub n_samples: usize,
    pub mode: SourceMode,
    pub peak_count: usize,
    pub seed: u64,
}

impl SourceSpec {
    pub fn new(n_sources: usize, n_samples: usize, mode: SourceMode, seed: u64) -> Self {
        SourceSpec {
            n_sources,
            n_samples,
            mode,
            peak_count: 8,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (n, p) = (self.n_sources, self.n_samples);
        if n == 0 {
            return Err(Error::InvalidSpec("need at least one source".into()));
        }
        if p < 3 * n {
            return Err(Error::InvalidSpec(format!("{p} samples is fewer than 3 x {n} sources")));
        }
        if self.peak_count == 0 {
            return Err(Error::InvalidSpec("peak_count must be positive".into()));
        }
        if self.mode == SourceMode::Facet {
            if n < 2 {
                return Err(Error::InvalidSpec("facet mode needs at least two sources".into()));
            }
            if p < n * (n - 1) {
                return Err(Error::InvalidSpec(format!(
                    "facet mode needs at least {} samples for its condition columns",
                    n * (n - 1)
                )));
            }
        }
        Ok(())
    }

    /// Half-open sample range over which source `i` is silent (facet mode).
    pub fn silent_band(&self, i: usize) -> std::ops::Range<usize> {
        let (n, p) = (self.n_sources, self.n_samples);
        i * p / n..(i + 1) * p / n
    }
}

fn lorentzian(t: f64, center: f64, gamma: f64, height: f64) -> f64 {
    let dt = t - center;
    height * gamma * gamma / (dt * dt + gamma * gamma)
}

/// Generates an `n × p` nonnegative source matrix satisfying `spec.mode`.
pub fn gen_sources(spec: &SourceSpec) -> Result<Matrix> {
    spec.validate()?;
    let (n, p) = (spec.n_sources, spec.n_samples);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let facet = spec.mode == SourceMode::Facet;
    let bands: Vec<_> = (0..n).map(|i| spec.silent_band(i)).collect();

    // (center, half-width) of every peak, per source.
    let mut peaks: Vec<Vec<(f64, f64)>> = vec![Vec::with_capacity(spec.peak_count); n];
    let width = |rng: &mut ChaCha8Rng| (p as f64 * rng.random_range(PEAK_WIDTH.0..PEAK_WIDTH.1)).max(0.5);
    if facet {
        // Clusters of overlapping peaks, one per other source, so that the
        // ratios between the active sources sweep across the whole facet.
        let clusters = spec.peak_count.div_ceil(n - 1);
        for (i, band) in bands.iter().enumerate() {
            for _ in 0..clusters {
                let t0 = rng.random_range(band.start as f64..band.end as f64);
                for (_, list) in peaks.iter_mut().enumerate().filter(|&(r, _)| r != i) {
                    let gamma = width(&mut rng);
                    list.push((t0 + CLUSTER_SPREAD * gamma * rng.random_range(-1.0..1.0), gamma));
                }
            }
        }
    } else {
        for list in peaks.iter_mut() {
            while list.len() < spec.peak_count {
                let center = rng.random_range(0.0..p as f64);
                list.push((center, width(&mut rng)));
            }
        }
    }

    let mut s = DMatrix::zeros(n, p);
    for (i, list) in peaks.into_iter().enumerate() {
        let floor = rng.random_range(BASELINE.0..BASELINE.1);
        s.row_mut(i).add_scalar_mut(floor);
        for (c, gamma) in list {
            let h = rng.random_range(PEAK_HEIGHT.0..PEAK_HEIGHT.1);
            for j in 0..p {
                s[(i, j)] += lorentzian(j as f64, c, gamma, h);
            }
        }
    }

    if facet {
        for (i, band) in bands.iter().enumerate() {
            for j in band.clone() {
                s[(i, j)] = 0.0;
            }
        }
    }

    // Stand-alone columns (nna) or condition columns, m−1 per band (facet).
    let picks: Vec<usize> = match spec.mode {
        SourceMode::Nna => rand::seq::index::sample(&mut rng, p, n).into_vec(),
        SourceMode::Facet => bands
            .iter()
            .flat_map(|b| {
                rand::seq::index::sample(&mut rng, b.len(), n - 1)
                    .into_iter()
                    .map(|k| b.start + k)
                    .collect::<Vec<_>>()
            })
            .collect(),
    };

    match spec.mode {
        SourceMode::Nna => {
            for (i, &j) in picks.iter().enumerate() {
                let peak = s.row(i).max();
                s.column_mut(j).fill(0.0);
                s[(i, j)] = peak;
            }
        }
        SourceMode::Facet => {
            let mut k = 0;
            for i in 0..n {
                let others: Vec<usize> = (0..n).filter(|&r| r != i).collect();
                for &twice in &others {
                    let j = picks[k];
                    k += 1;
                    let scale = 0.5 * rng.random_range(PEAK_HEIGHT.0..PEAK_HEIGHT.1);
                    s.column_mut(j).fill(0.0);
                    for &r in &others {
                        s[(r, j)] = scale * if r == twice { 2.0 } else { 1.0 };
                    }
                }
            }
        }
    }
    Matrix::nonnegative(s)
}

/// Checks the source condition of `mode` on a nonnegative `s`.
pub fn verify_condition(s: &Matrix, mode: SourceMode) -> bool {
    let (n, p) = (s.nrows(), s.ncols());
    let sm = s.as_dmatrix();
    let zero = |v: f64| v.abs() <= ZERO_TOL;
    match mode {
        SourceMode::Nna => (0..n).all(|i| {
            (0..p).any(|j| sm[(i, j)] > ZERO_TOL && (0..n).all(|k| k == i || zero(sm[(k, j)])))
        }),
        SourceMode::Facet => {
            if n < 2 {
                return false;
            }
            (0..n).all(|i| {
                let cols: Vec<usize> = (0..p).filter(|&j| sm[(i, j)] < ZERO_TOL).collect();
                cols.len() >= n - 1 && matrix_rank(&sm.select_columns(cols.iter())) >= n - 1
            })
        }
    }
}

/// Random `m × m` mixing matrix with positive entries, L1-normalized columns
/// and condition number at most 1e3.
pub fn gen_mixing(m: usize, seed: u64) -> Result<Matrix> {
    if m < 2 {
        return Err(Error::InvalidSpec("mixing matrix needs m >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let mut a = DMatrix::from_fn(m, m, |_, _| rng.random_range(0.05..1.0));
        for mut col in a.column_iter_mut() {
            let sum = col.sum();
            col /= sum;
        }
        let rcond = inverse_condition(&a);
        if rcond > 0.0 && 1.0 / rcond <= MAX_MIXING_CONDITION {
            return Matrix::new(a);
        }
    }
}

/// Adds i.i.d. Gaussian noise with variance `‖X‖_F² / (rows·cols·10^(snr/10))`.
/// An infinite `snr_db` returns `x` unchanged.
pub fn add_awgn(x: &Matrix, snr_db: f64, seed: u64) -> Result<Matrix> {
    if snr_db == f64::INFINITY {
        return Ok(x.clone());
    }
    if snr_db.is_nan() {
        return Err(Error::InvalidParameter("snr_db is NaN".into()));
    }
    let power = x.frobenius_norm().powi(2);
    if power == 0.0 {
        return Err(Error::UndefinedSnr);
    }
    let count = (x.nrows() * x.ncols()) as f64;
    let sigma = (power / (count * 10f64.powf(snr_db / 10.0))).sqrt();
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noisy = x.as_dmatrix().clone();
    // Fill column-major so the draw order is fixed by the shape alone.
    noisy.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
    Matrix::new(noisy)
}
