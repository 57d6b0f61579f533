//! Point-cloud filters applied to the facet groups before plane fitting.
//!
//! Two families are offered. k-nearest-neighbour smoothing replaces every
//! point of a group by a (possibly Gaussian-weighted) mean of its neighbours.
//! Total-variation denoising works on a 2-D chart of the simplex: the distance
//! to the nearest data point is sampled on a grid, smoothed with Chambolle's
//! dual projection algorithm for the ROF model, and the cells whose smoothed
//! distance stays below a threshold become the new point cloud. Thin linear
//! structures survive, isolated outliers do not.

use std::str::FromStr;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::datamodel::PointCloud;
use crate::error::{Error, Result};
use crate::fca::Group;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DenoiseMethod {
    None,
    Box,
    Gauss,
    Tv,
}

impl FromStr for DenoiseMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "box" => Ok(Self::Box),
            "gauss" => Ok(Self::Gauss),
            "tv" => Ok(Self::Tv),
            _ => Err(Error::InvalidParameter(format!("unknown denoise method `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TvNorm {
    Isotropic,
    Anisotropic,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DenoiseSpec {
    pub method: DenoiseMethod,
    /// Neighbourhood size for `box` and `gauss`, the point itself included.
    pub knn: usize,
    /// Kernel width for `gauss`, in the units of the point coordinates.
    pub gauss_width: f64,
    /// ROF fidelity weight, with the distance field measured in grid cells.
    pub lambda: f64,
    /// Level-set threshold in chart units; defaults to 1.5 cell diagonals.
    pub tau: Option<f64>,
    pub grid_n: usize,
    pub max_iters: usize,
    pub step: f64,
    /// Stop once no grid value moves by more than this (in cells).
    pub tol: f64,
    pub norm: TvNorm,
}

impl Default for DenoiseSpec {
    fn default() -> Self {
        Self {
            method: DenoiseMethod::None,
            knn: 5,
            gauss_width: 0.01,
            lambda: 1.0,
            tau: None,
            grid_n: 256,
            max_iters: 300,
            step: 0.25,
            tol: 1e-4,
            norm: TvNorm::Isotropic,
        }
    }
}

impl DenoiseSpec {
    pub fn with_method(method: DenoiseMethod) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.to_string()));
        match self.method {
            DenoiseMethod::None => Ok(()),
            DenoiseMethod::Box | DenoiseMethod::Gauss if self.knn == 0 => bad("knn must be at least 1"),
            DenoiseMethod::Gauss if !(self.gauss_width > 0.0) => bad("gauss width must be positive"),
            DenoiseMethod::Box | DenoiseMethod::Gauss => Ok(()),
            DenoiseMethod::Tv => {
                if !(self.lambda > 0.0 && self.lambda.is_finite()) {
                    bad("lambda must be positive and finite")
                } else if self.grid_n < 2 {
                    bad("grid must have at least 2 cells per side")
                } else if !(self.step > 0.0 && self.step <= 0.25) {
                    bad("step must lie in (0, 1/4]")
                } else if self.tau.is_some_and(|t| !(t > 0.0)) {
                    bad("tau must be positive")
                } else if self.max_iters == 0 {
                    bad("max_iters must be positive")
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// Scalar samples on an `n × n` grid of square cells; `values[iy * n + ix]`
/// belongs to the cell centred at `(x0 + (ix + ½)h, y0 + (iy + ½)h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub n: usize,
    pub values: Vec<f64>,
    pub x0: f64,
    pub y0: f64,
    pub h: f64,
}

impl ScalarField {
    /// A unit-spacing field anchored at the origin.
    pub fn from_values(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n || n == 0 {
            return Err(Error::InvalidParameter(format!("{} values do not fill a {n}×{n} grid", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("field values must be finite".into()));
        }
        Ok(Self {
            n,
            values,
            x0: 0.0,
            y0: 0.0,
            h: 1.0,
        })
    }

    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.n + ix]
    }

    pub fn center(&self, ix: usize, iy: usize) -> [f64; 2] {
        [self.x0 + (ix as f64 + 0.5) * self.h, self.y0 + (iy as f64 + 0.5) * self.h]
    }

    fn with_values(&self, values: Vec<f64>) -> Self {
        Self {
            values,
            ..self.clone()
        }
    }

    /// Rows of comma-separated values, `iy = 0` first.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.values.chunks(self.n) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

/// Replaces each member of `group` by the mean of its `knn` nearest fellow
/// members (itself included), uniform for `box` and Gaussian-weighted for
/// `gauss`. The result is ordered like `group.member_ids`.
pub fn knn_smooth(group: &Group, cloud: &PointCloud, spec: &DenoiseSpec) -> Result<PointCloud> {
    spec.validate()?;
    let members: Vec<&DVector<f64>> = group.member_ids.iter().map(|&i| cloud.point(i)).collect();
    let k = spec.knn.min(members.len());
    let smoothed: Vec<DVector<f64>> = members
        .par_iter()
        .map(|x| {
            let mut dist: Vec<(f64, usize)> = members.iter().enumerate().map(|(j, y)| ((*x - *y).norm(), j)).collect();
            if k < dist.len() {
                dist.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            }
            let mut acc = DVector::zeros(cloud.dim());
            let mut total = 0.0;
            for &(d, j) in &dist[..k] {
                let w = match spec.method {
                    DenoiseMethod::Gauss => (-d * d / (2.0 * spec.gauss_width * spec.gauss_width)).exp(),
                    _ => 1.0,
                };
                acc += members[j] * w;
                total += w;
            }
            acc / total
        })
        .collect();
    let sources = group.member_ids.iter().map(|&i| cloud.source_index(i)).collect();
    Ok(PointCloud::from_parts_unchecked(cloud.dim(), smoothed, sources))
}

/// Points sorted into an implicit 2-d tree: each slice's median splits the
/// remainder on alternating axes.
struct KdTree(Vec<[f64; 2]>);

impl KdTree {
    fn new(mut pts: Vec<[f64; 2]>) -> Self {
        fn build(pts: &mut [[f64; 2]], axis: usize) {
            if pts.len() <= 1 {
                return;
            }
            let mid = pts.len() / 2;
            pts.select_nth_unstable_by(mid, |a, b| a[axis].total_cmp(&b[axis]));
            let (left, right) = pts.split_at_mut(mid);
            build(left, 1 - axis);
            build(&mut right[1..], 1 - axis);
        }
        build(&mut pts, 0);
        Self(pts)
    }

    fn nearest_sq(&self, q: [f64; 2]) -> f64 {
        fn visit(pts: &[[f64; 2]], q: [f64; 2], axis: usize, best: &mut f64) {
            if pts.is_empty() {
                return;
            }
            let mid = pts.len() / 2;
            let p = pts[mid];
            let d2 = (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2);
            *best = best.min(d2);
            let diff = q[axis] - p[axis];
            let (near, far) = if diff < 0.0 {
                (&pts[..mid], &pts[mid + 1..])
            } else {
                (&pts[mid + 1..], &pts[..mid])
            };
            visit(near, q, 1 - axis, best);
            if diff * diff < *best {
                visit(far, q, 1 - axis, best);
            }
        }
        let mut best = f64::INFINITY;
        visit(&self.0, q, 0, &mut best);
        best
    }
}

/// Euclidean distance from every cell centre to the nearest of `points`.
/// The grid covers the bounding box of the points, padded by `margin` times
/// its larger side, with square cells.
pub fn distance_field(points: &[[f64; 2]], grid_n: usize, margin: f64) -> Result<ScalarField> {
    if points.is_empty() {
        return Err(Error::InvalidParameter("distance field needs at least one point".into()));
    }
    if grid_n < 2 {
        return Err(Error::InvalidParameter("grid must have at least 2 cells per side".into()));
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in points {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-12);
    let side = extent * (1.0 + 2.0 * margin);
    let h = side / grid_n as f64;
    let mid = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
    let (x0, y0) = (mid[0] - side / 2.0, mid[1] - side / 2.0);

    let tree = KdTree::new(points.to_vec());
    let values: Vec<f64> = (0..grid_n * grid_n)
        .into_par_iter()
        .map(|k| {
            let (ix, iy) = (k % grid_n, k / grid_n);
            let q = [x0 + (ix as f64 + 0.5) * h, y0 + (iy as f64 + 0.5) * h];
            tree.nearest_sq(q).sqrt()
        })
        .collect();
    Ok(ScalarField {
        n: grid_n,
        values,
        x0,
        y0,
        h,
    })
}

/// Forward differences with a zero at the far boundary.
fn gradient(u: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; n * n];
    let mut gy = vec![0.0; n * n];
    for iy in 0..n {
        for ix in 0..n {
            let k = iy * n + ix;
            if ix + 1 < n {
                gx[k] = u[k + 1] - u[k];
            }
            if iy + 1 < n {
                gy[k] = u[k + n] - u[k];
            }
        }
    }
    (gx, gy)
}

/// Negative adjoint of [`gradient`].
fn divergence(px: &[f64], py: &[f64], n: usize) -> Vec<f64> {
    let mut d = vec![0.0; n * n];
    for iy in 0..n {
        for ix in 0..n {
            let k = iy * n + ix;
            let mut v = 0.0;
            if ix + 1 < n {
                v += px[k];
            }
            if ix > 0 {
                v -= px[k - 1];
            }
            if iy + 1 < n {
                v += py[k];
            }
            if iy > 0 {
                v -= py[k - n];
            }
            d[k] = v;
        }
    }
    d
}

/// Discrete total variation of `u` with forward differences.
pub fn total_variation(u: &[f64], n: usize, norm: TvNorm) -> f64 {
    let (gx, gy) = gradient(u, n);
    gx.iter()
        .zip(&gy)
        .map(|(a, b)| match norm {
            TvNorm::Isotropic => a.hypot(*b),
            TvNorm::Anisotropic => a.abs() + b.abs(),
        })
        .sum()
}

/// The ROF objective `TV(u) + (λ/2)‖u − d‖²`.
pub fn rof_energy(u: &[f64], d: &[f64], n: usize, lambda: f64, norm: TvNorm) -> f64 {
    let fidelity: f64 = u.iter().zip(d).map(|(a, b)| (a - b).powi(2)).sum();
    total_variation(u, n, norm) + 0.5 * lambda * fidelity
}

#[derive(Debug, Clone, PartialEq)]
pub struct RofConfig {
    pub lambda: f64,
    pub max_iters: usize,
    pub step: f64,
    pub tol: f64,
    pub norm: TvNorm,
    /// Record the objective after every iteration.
    pub trace_energy: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RofOutput {
    pub field: ScalarField,
    pub iterations: usize,
    /// Energy of the initial guess `u = d`, then one entry per iteration.
    pub energies: Vec<f64>,
}

/// Chambolle's dual projection iteration for `min_u TV(u) + (λ/2)‖u − d‖²`
/// on unit-spaced samples. Stops when the primal iterate moves by less than
/// `tol` in the max norm or after `max_iters` iterations.
pub fn chambolle_rof_with(d: &ScalarField, cfg: &RofConfig) -> Result<RofOutput> {
    if !(cfg.lambda > 0.0 && cfg.lambda.is_finite()) {
        return Err(Error::InvalidParameter("lambda must be positive and finite".into()));
    }
    if !(cfg.step > 0.0 && cfg.step <= 0.25) {
        return Err(Error::InvalidParameter("step must lie in (0, 1/4]".into()));
    }
    let n = d.n;
    let data = &d.values;
    let mut px = vec![0.0; n * n];
    let mut py = vec![0.0; n * n];
    let mut u = data.clone();
    let mut energies = Vec::new();
    if cfg.trace_energy {
        energies.push(rof_energy(&u, data, n, cfg.lambda, cfg.norm));
    }
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        iterations += 1;
        let div = divergence(&px, &py, n);
        let w: Vec<f64> = div.iter().zip(data).map(|(dv, dd)| dv - cfg.lambda * dd).collect();
        let (gx, gy) = gradient(&w, n);
        for k in 0..n * n {
            match cfg.norm {
                TvNorm::Isotropic => {
                    let denom = 1.0 + cfg.step * gx[k].hypot(gy[k]);
                    px[k] = (px[k] + cfg.step * gx[k]) / denom;
                    py[k] = (py[k] + cfg.step * gy[k]) / denom;
                }
                TvNorm::Anisotropic => {
                    px[k] = (px[k] + cfg.step * gx[k]) / (1.0 + cfg.step * gx[k].abs());
                    py[k] = (py[k] + cfg.step * gy[k]) / (1.0 + cfg.step * gy[k].abs());
                }
            }
        }
        let div = divergence(&px, &py, n);
        let mut change = 0.0f64;
        for k in 0..n * n {
            let next = data[k] - div[k] / cfg.lambda;
            change = change.max((next - u[k]).abs());
            u[k] = next;
        }
        if cfg.trace_energy {
            energies.push(rof_energy(&u, data, n, cfg.lambda, cfg.norm));
        }
        if change < cfg.tol {
            break;
        }
    }
    Ok(RofOutput {
        field: d.with_values(u),
        iterations,
        energies,
    })
}

/// Isotropic ROF denoising; see [`chambolle_rof_with`].
pub fn chambolle_rof(d: &ScalarField, lambda: f64, max_iters: usize, step: f64, tol: f64) -> Result<ScalarField> {
    let cfg = RofConfig {
        lambda,
        max_iters,
        step,
        tol,
        norm: TvNorm::Isotropic,
        trace_energy: false,
    };
    chambolle_rof_with(d, &cfg).map(|o| o.field)
}

/// Centres of the cells where `u ≤ tau`.
pub fn extract_level_set(u: &ScalarField, tau: f64) -> Vec<[f64; 2]> {
    let mut out = Vec::new();
    for iy in 0..u.n {
        for ix in 0..u.n {
            if u.get(ix, iy) <= tau {
                out.push(u.center(ix, iy));
            }
        }
    }
    out
}

/// Grid padding around the charted points, as a fraction of their extent.
pub const GRID_MARGIN: f64 = 0.05;

/// Result of [`tv_denoise_cloud_with_field`]: the new cloud plus the smoothed
/// distance field (in chart units) it was cut from.
#[derive(Debug, Clone)]
pub struct TvOutput {
    pub cloud: PointCloud,
    pub field: ScalarField,
    pub tau: f64,
}

/// Total-variation filter for a cloud on the plane `x + y + z = 1`: charts it
/// by `(x, y)`, smooths the distance field, keeps cells with smoothed distance
/// at most `tau`, and lifts their centres back with `z = 1 − x − y`. The
/// output points carry no source indices.
pub fn tv_denoise_cloud_with_field(cloud: &PointCloud, spec: &DenoiseSpec) -> Result<TvOutput> {
    spec.validate()?;
    if cloud.dim() != 3 {
        return Err(Error::UnsupportedDimension {
            dim: cloud.dim(),
            supported: "3",
        });
    }
    if cloud.is_empty() {
        return Err(Error::DenoiseTooAggressive);
    }
    let chart: Vec<[f64; 2]> = cloud.points().iter().map(|p| [p[0], p[1]]).collect();
    let d = distance_field(&chart, spec.grid_n, GRID_MARGIN)?;
    let h = d.h;
    let in_cells = d.with_values(d.values.iter().map(|v| v / h).collect());
    let cfg = RofConfig {
        lambda: spec.lambda,
        max_iters: spec.max_iters,
        step: spec.step,
        tol: spec.tol,
        norm: spec.norm,
        trace_energy: false,
    };
    let smoothed = chambolle_rof_with(&in_cells, &cfg)?.field;
    let field = smoothed.with_values(smoothed.values.iter().map(|v| v * h).collect());
    let tau = spec.tau.unwrap_or(1.5 * std::f64::consts::SQRT_2 * h);
    let kept = extract_level_set(&field, tau);
    if kept.is_empty() {
        return Err(Error::DenoiseTooAggressive);
    }
    let points = kept
        .into_iter()
        .map(|[x, y]| DVector::from_vec(vec![x, y, 1.0 - x - y]))
        .collect::<Vec<_>>();
    let n = points.len();
    Ok(TvOutput {
        cloud: PointCloud::from_parts_unchecked(3, points, vec![None; n]),
        field,
        tau,
    })
}

pub fn tv_denoise_cloud(cloud: &PointCloud, spec: &DenoiseSpec) -> Result<PointCloud> {
    tv_denoise_cloud_with_field(cloud, spec).map(|o| o.cloud)
}
