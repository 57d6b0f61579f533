//! Facet component analysis: recover a square nonnegative mixing matrix from
//! the facets of the cone spanned by the data.
//!
//! The pipeline runs six steps:
//!
//! 1. clamp negatives, drop columns with small L2 norm, project the rest onto
//!    the simplex plane `1ᵀx = 1`;
//! 2. take the convex hull of those points plus the origin and keep the
//!    facets through the origin;
//! 3. grow a group of points around each such facet;
//! 4. fit a plane through the origin to every group and keep the `m` largest
//!    groups whose normals are pairwise far from parallel;
//! 5. intersect every `m−1` of those planes with `1ᵀx = 1` to get the columns of `Â`;
//! 6. recover the sources column by column with nonnegative least squares.
//!
//! An optional point-cloud filter runs between steps 3 and 4.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::datamodel::{FcaParams, Matrix, PointCloud, SeparationResult};
use crate::denoise::{knn_smooth, tv_denoise_cloud, DenoiseMethod, DenoiseSpec};
use crate::error::{Error, FcaStep, Result};
use crate::hull::{classify_facets, point_facet_distance, point_vertexset_distance, quickhull, Hull};
use crate::linalg::{least_singular_direction, numerical_rank};
use crate::nnls::{recover_sources, DEFAULT_TOL};

/// Index of the origin in a cloud built by [`with_origin`].
pub const ORIGIN_ID: usize = 0;

/// Recovered vertices may dip this far below zero before being clamped.
pub const CLAMP_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperplane {
    /// Unit normal; the plane passes through the origin.
    pub normal: DVector<f64>,
    /// Sum of squared distances of the fitted points to the plane.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub facet_id: usize,
    /// Cloud indices, seeded with the facet's vertices (origin excluded).
    pub member_ids: Vec<usize>,
    pub fitted: Option<Hyperplane>,
}

/// Step 1: clamp, filter by `rho`, and L1-normalize the surviving columns.
pub fn preprocess(x: &Matrix, rho: f64) -> Result<PointCloud> {
    if x.nrows() < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 rows, got {}", x.nrows())));
    }
    let m = x.nrows();
    let mut points = Vec::new();
    let mut sources = Vec::new();
    for j in 0..x.ncols() {
        let col = x.column(j).map(|v| v.max(0.0));
        if col.norm() < rho {
            continue;
        }
        let sum = col.sum();
        points.push(col / sum);
        sources.push(Some(j));
    }
    if points.is_empty() {
        return Err(Error::AllFiltered { rho });
    }
    Ok(PointCloud::from_parts_unchecked(m, points, sources))
}

/// Prepends the origin (untagged) to `cloud`, at [`ORIGIN_ID`].
pub fn with_origin(cloud: &PointCloud) -> PointCloud {
    let mut points = Vec::with_capacity(cloud.len() + 1);
    let mut sources = Vec::with_capacity(cloud.len() + 1);
    points.push(DVector::zeros(cloud.dim()));
    sources.push(None);
    points.extend(cloud.points().iter().cloned());
    sources.extend(cloud.source_indices().iter().copied());
    PointCloud::from_parts_unchecked(cloud.dim(), points, sources)
}

/// Step 3: one group per nontrivial facet of `h`. Each group starts from the
/// facet's vertices and gains every point closer than `eps` to the facet's
/// plane and farther than `sigma` from all of its vertices. A point may join
/// several groups. `cloud` must carry the origin at [`ORIGIN_ID`].
pub fn group_points(cloud: &PointCloud, h: &Hull, eps: f64, sigma: f64) -> Vec<Group> {
    let facets: Vec<(usize, &crate::hull::Facet)> = h.nontrivial_facets().collect();
    facets
        .into_par_iter()
        .map(|(facet_id, f)| {
            let mut member_ids: Vec<usize> = f.vertex_ids.iter().copied().filter(|&v| v != ORIGIN_ID).collect();
            for j in 0..cloud.len() {
                if j == ORIGIN_ID || member_ids.contains(&j) {
                    continue;
                }
                let x = cloud.point(j);
                if point_facet_distance(x, f) < eps && point_vertexset_distance(x, f, cloud) > sigma {
                    member_ids.push(j);
                }
            }
            Group {
                facet_id,
                member_ids,
                fitted: None,
            }
        })
        .collect()
}

fn fit_points<'a>(
    facet_id: usize,
    points: impl ExactSizeIterator<Item = &'a DVector<f64>>,
    dim: usize,
    reference: &DVector<f64>,
) -> Result<Hyperplane> {
    let rows = points.len();
    let mut stack = DMatrix::zeros(rows, dim);
    for (r, p) in points.enumerate() {
        stack.set_row(r, &p.transpose());
    }
    let (mut normal, sv) = least_singular_direction(&stack);
    let rank = numerical_rank(&sv);
    if rank + 1 < dim {
        return Err(Error::UnderdeterminedFacet {
            facet_id,
            rank,
            needed: dim - 1,
        });
    }
    if normal.dot(reference) < 0.0 {
        normal = -normal;
    }
    let residual = (&stack * &normal).norm_squared();
    Ok(Hyperplane { normal, residual })
}

/// Step 4a: total-least-squares plane through the origin for one group; the
/// normal is oriented to have a nonnegative inner product with the cloud centroid.
pub fn fit_hyperplane(g: &Group, cloud: &PointCloud) -> Result<Hyperplane> {
    let reference = cloud.centroid();
    fit_points(
        g.facet_id,
        g.member_ids.iter().map(|&i| cloud.point(i)),
        cloud.dim(),
        &reference,
    )
}

/// Step 4b: greedily accept fitted groups by decreasing cardinality (ties:
/// smaller residual, then lower facet id) while every pair of accepted
/// normals satisfies `b_i · b_j < delta`; stops at `m` planes.
///
/// The test is signed. All normals point into the data cone, so two fits of
/// the same facet have an inner product near `+1`, while the two long sides
/// of a flat cone face each other with an inner product near `−1` and must
/// both be kept.
pub fn select_planes(groups: &[Group], m: usize, delta: f64) -> Result<Vec<Hyperplane>> {
    let mut order: Vec<&Group> = groups.iter().filter(|g| g.fitted.is_some()).collect();
    order.sort_by(|a, b| {
        let (fa, fb) = (a.fitted.as_ref().unwrap(), b.fitted.as_ref().unwrap());
        b.member_ids
            .len()
            .cmp(&a.member_ids.len())
            .then(fa.residual.total_cmp(&fb.residual))
            .then(a.facet_id.cmp(&b.facet_id))
    });
    let mut accepted: Vec<Hyperplane> = Vec::with_capacity(m);
    for g in order {
        let plane = g.fitted.as_ref().unwrap();
        if accepted.iter().all(|a| a.normal.dot(&plane.normal) < delta) {
            accepted.push(plane.clone());
            if accepted.len() == m {
                return Ok(accepted);
            }
        }
    }
    Err(Error::InsufficientFacets {
        accepted: accepted.len(),
        needed: m,
    })
}

/// Step 5: column `i` of `Â` is the line shared by every plane except plane
/// `i`, scaled onto `1ᵀx = 1`.
pub fn intersect_planes(planes: &[Hyperplane]) -> Result<Matrix> {
    let m = planes.len();
    if m < 2 || planes.iter().any(|p| p.normal.len() != m) {
        return Err(Error::InvalidParameter(format!("need m planes in R^m, got {m}")));
    }
    let mut a = DMatrix::zeros(m, m);
    for i in 0..m {
        let mut stack = DMatrix::zeros(m - 1, m);
        for (r, p) in planes.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, p)| p).enumerate() {
            stack.set_row(r, &p.normal.transpose());
        }
        let (v, sv) = least_singular_direction(&stack);
        let largest = sv.last().copied().unwrap_or(0.0);
        if sv.len() > 1 && sv[1] <= crate::linalg::RANK_RTOL * largest {
            return Err(Error::DegenerateIntersection { column: i });
        }
        let sum = v.sum();
        if sum.abs() <= 1e-12 * v.amax() {
            return Err(Error::DegenerateIntersection { column: i });
        }
        let mut col = v / sum;
        for x in col.iter_mut() {
            if *x < -CLAMP_TOL {
                return Err(Error::NonConicSolution { column: i, value: *x });
            }
            if *x < 0.0 {
                *x = 0.0;
            }
        }
        let s = col.sum();
        a.set_column(i, &(col / s));
    }
    Matrix::nonnegative(a)
}

fn fit_groups(groups: &mut [Group], cloud: &PointCloud) {
    let reference = cloud.centroid();
    groups.par_iter_mut().for_each(|g| {
        g.fitted = fit_points(g.facet_id, g.member_ids.iter().map(|&i| cloud.point(i)), cloud.dim(), &reference).ok();
    });
}

fn hull_and_groups(cloud: &PointCloud, params: &FcaParams) -> Result<(PointCloud, Vec<Group>)> {
    let full = with_origin(cloud);
    let hull = quickhull(&full)
        .and_then(|h| classify_facets(h, ORIGIN_ID))
        .map_err(Error::at(FcaStep::ConvexHull))?;
    let groups = group_points(&full, &hull, params.eps, params.sigma);
    Ok((full, groups))
}

/// Runs steps 3→4 with the optional filter in between; returns the fitted groups.
fn fitted_groups(cloud: PointCloud, params: &FcaParams, denoise: Option<&DenoiseSpec>) -> Result<Vec<Group>> {
    let (full, mut groups) = hull_and_groups(&cloud, params)?;
    let method = denoise.map(|d| d.method).unwrap_or(DenoiseMethod::None);
    match method {
        DenoiseMethod::None => fit_groups(&mut groups, &full),
        DenoiseMethod::Box | DenoiseMethod::Gauss => {
            let spec = denoise.unwrap();
            spec.validate().map_err(Error::at(FcaStep::Denoise))?;
            let reference = full.centroid();
            let fits: Vec<Option<Hyperplane>> = groups
                .par_iter()
                .map(|g| {
                    if g.member_ids.len() <= spec.knn {
                        return fit_hyperplane(g, &full).ok();
                    }
                    let smoothed = knn_smooth(g, &full, spec).ok()?;
                    fit_points(g.facet_id, smoothed.points().iter(), full.dim(), &reference).ok()
                })
                .collect();
            for (g, f) in groups.iter_mut().zip(fits) {
                g.fitted = f;
            }
        }
        DenoiseMethod::Tv => {
            let spec = denoise.unwrap();
            // Only points already close to some facet are kept for denoising.
            let mut near: Vec<usize> = groups.iter().flat_map(|g| g.member_ids.iter().copied()).collect();
            near.sort_unstable();
            near.dedup();
            let selected = PointCloud::from_parts_unchecked(
                full.dim(),
                near.iter().map(|&i| full.point(i).clone()).collect(),
                near.iter().map(|&i| full.source_index(i)).collect(),
            );
            let cleaned = tv_denoise_cloud(&selected, spec).map_err(Error::at(FcaStep::Denoise))?;
            let (full, mut regrouped) = hull_and_groups(&cleaned, params)?;
            fit_groups(&mut regrouped, &full);
            groups = regrouped;
        }
    }
    Ok(groups)
}

/// Estimates the mixing matrix from the data geometry, then the sources by NNLS.
pub fn estimate_mixing(x: &Matrix, params: &FcaParams, denoise: Option<&DenoiseSpec>) -> Result<(Matrix, Vec<usize>)> {
    params.validate()?;
    let m = x.nrows();
    if m > crate::hull::MAX_DIM {
        return Err(Error::UnsupportedDimension {
            dim: m,
            supported: "2..=6",
        });
    }
    let cloud = preprocess(x, params.rho).map_err(Error::at(FcaStep::Preprocess))?;
    let groups = fitted_groups(cloud, params, denoise)?;
    let cardinalities = groups
        .iter()
        .filter(|g| g.fitted.is_some())
        .map(|g| g.member_ids.len())
        .collect();
    let planes = select_planes(&groups, m, params.delta).map_err(Error::at(FcaStep::PlaneFitting))?;
    let a_hat = intersect_planes(&planes).map_err(Error::at(FcaStep::Intersecting))?;
    Ok((a_hat, cardinalities))
}

/// The full pipeline.
pub fn run_fca(x: &Matrix, params: &FcaParams, denoise: Option<&DenoiseSpec>) -> Result<SeparationResult> {
    let (a_hat, group_cardinalities) = estimate_mixing(x, params, denoise)?;
    let x0 = Matrix::nonnegative(x.as_dmatrix().map(|v| v.max(0.0)))?;
    let s_hat = recover_sources(&a_hat, &x0, DEFAULT_TOL).map_err(Error::at(FcaStep::SourceRecovery))?;
    let residual = (x0.as_dmatrix() - a_hat.as_dmatrix() * s_hat.as_dmatrix()).norm();
    Ok(SeparationResult {
        selected_plane_count: a_hat.ncols(),
        a_hat,
        s_hat,
        group_cardinalities,
        residual,
    })
}
