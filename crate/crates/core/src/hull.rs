//! Convex hulls in `R^d` (`2 ≤ d ≤ 6`) by Quickhull.
//!
//! Facets are always simplicial. Points within a relative tolerance of a
//! facet plane count as "not outside" it, so coplanar configurations (which
//! are the norm for data lying on cone facets) never create sliver facets;
//! the coplanar points simply do not become hull vertices. Coplanar regions
//! of the boundary come out as several simplices sharing one plane.

use std::collections::{BTreeSet, HashMap};

use nalgebra::DVector;

use crate::datamodel::PointCloud;
use crate::error::{Error, Result};
use crate::linalg::generalized_cross;

pub const MAX_DIM: usize = 6;

/// Relative tolerance (times the coordinate scale) for "strictly outside".
const OUTSIDE_RTOL: f64 = 1e-10;

/// Relative tolerance for the containment invariant checked by [`Hull::max_violation`].
pub const INSIDE_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Facet {
    /// Sorted point indices, exactly `dim` of them.
    pub vertex_ids: Vec<usize>,
    pub outward_normal: DVector<f64>,
    /// The facet plane is `{x : outward_normal · x = offset}`.
    pub offset: f64,
    pub is_trivial: bool,
}

impl Facet {
    /// Positive outside the hull, negative inside.
    pub fn signed_distance(&self, x: &DVector<f64>) -> f64 {
        self.outward_normal.dot(x) - self.offset
    }
}

#[derive(Debug, Clone)]
pub struct Hull {
    pub dim: usize,
    /// Sorted indices of points that are vertices of at least one facet.
    pub vertices: Vec<usize>,
    pub facets: Vec<Facet>,
    /// Largest absolute coordinate of the input, used to scale tolerances.
    pub scale: f64,
}

impl Hull {
    pub fn nontrivial_facets(&self) -> impl Iterator<Item = (usize, &Facet)> {
        self.facets.iter().enumerate().filter(|(_, f)| !f.is_trivial)
    }

    /// Facets as a set of sorted vertex-index lists, for order-free comparison.
    pub fn facet_sets(&self) -> BTreeSet<Vec<usize>> {
        self.facets.iter().map(|f| f.vertex_ids.clone()).collect()
    }

    /// Largest distance by which any cloud point lies outside any facet.
    pub fn max_violation(&self, cloud: &PointCloud) -> f64 {
        let mut worst: f64 = 0.0;
        for f in &self.facets {
            for p in cloud.points() {
                worst = worst.max(f.signed_distance(p));
            }
        }
        worst
    }
}

struct WorkFacet {
    verts: Vec<usize>,
    normal: Vec<f64>,
    offset: f64,
    outside: Vec<usize>,
    alive: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Builder<'a> {
    pts: Vec<&'a [f64]>,
    dim: usize,
    tol: f64,
    interior: Vec<f64>,
    facets: Vec<WorkFacet>,
    ridges: HashMap<Vec<usize>, Vec<usize>>,
}

impl<'a> Builder<'a> {
    fn distance(&self, f: usize, p: usize) -> f64 {
        let wf = &self.facets[f];
        dot(&wf.normal, self.pts[p]) - wf.offset
    }

    fn plane(&self, verts: &[usize]) -> Result<(Vec<f64>, f64)> {
        let base = self.pts[verts[0]];
        let diffs: Vec<Vec<f64>> = verts[1..]
            .iter()
            .map(|&v| self.pts[v].iter().zip(base).map(|(a, b)| a - b).collect())
            .collect();
        let refs: Vec<&[f64]> = diffs.iter().map(|d| d.as_slice()).collect();
        let mut n = generalized_cross(&refs, self.dim);
        let norm = dot(&n, &n).sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Geometry(format!("degenerate facet {verts:?}")));
        }
        n.iter_mut().for_each(|x| *x /= norm);
        let mut offset = dot(&n, base);
        if dot(&n, &self.interior) > offset {
            n.iter_mut().for_each(|x| *x = -*x);
            offset = -offset;
        }
        Ok((n, offset))
    }

    fn ridges_of(verts: &[usize]) -> impl Iterator<Item = Vec<usize>> + '_ {
        (0..verts.len()).map(move |skip| {
            verts
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != skip)
                .map(|(_, &v)| v)
                .collect()
        })
    }

    fn add_facet(&mut self, mut verts: Vec<usize>) -> Result<usize> {
        verts.sort_unstable();
        let (normal, offset) = self.plane(&verts)?;
        let id = self.facets.len();
        for r in Self::ridges_of(&verts) {
            self.ridges.entry(r).or_default().push(id);
        }
        self.facets.push(WorkFacet {
            verts,
            normal,
            offset,
            outside: Vec::new(),
            alive: true,
        });
        Ok(id)
    }

    fn kill_facet(&mut self, id: usize) {
        self.facets[id].alive = false;
        let verts = std::mem::take(&mut self.facets[id].verts);
        for r in Self::ridges_of(&verts) {
            if let Some(list) = self.ridges.get_mut(&r) {
                list.retain(|&f| f != id);
                if list.is_empty() {
                    self.ridges.remove(&r);
                }
            }
        }
        self.facets[id].verts = verts;
    }

    fn neighbor(&self, ridge: &[usize], of: usize) -> Option<usize> {
        self.ridges
            .get(ridge)
            .and_then(|list| list.iter().copied().find(|&f| f != of))
    }

    /// Assigns each candidate to the first of `targets` it lies strictly outside.
    fn assign(&mut self, candidates: &[usize], targets: &[usize]) {
        for &p in candidates {
            for &f in targets {
                if self.distance(f, p) > self.tol {
                    self.facets[f].outside.push(p);
                    break;
                }
            }
        }
    }

    fn expand(&mut self, f: usize) -> Result<()> {
        let outside = &self.facets[f].outside;
        let eye = outside
            .iter()
            .copied()
            .map(|p| (p, self.distance(f, p)))
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
            .map(|(p, _)| p)
            .expect("expand called on facet with outside points");

        let mut visible = vec![f];
        let mut is_visible: HashMap<usize, bool> = HashMap::from([(f, true)]);
        let mut horizon: Vec<Vec<usize>> = Vec::new();
        let mut k = 0;
        while k < visible.len() {
            let v = visible[k];
            k += 1;
            let verts = self.facets[v].verts.clone();
            for ridge in Self::ridges_of(&verts) {
                let g = self
                    .neighbor(&ridge, v)
                    .ok_or_else(|| Error::Geometry("open hull boundary".into()))?;
                let vis = *is_visible
                    .entry(g)
                    .or_insert_with(|| self.distance(g, eye) > self.tol);
                if vis {
                    if !visible.contains(&g) {
                        visible.push(g);
                    }
                } else {
                    horizon.push(ridge);
                }
            }
        }

        let mut orphans: Vec<usize> = Vec::new();
        for &v in &visible {
            orphans.extend(self.facets[v].outside.drain(..).filter(|&p| p != eye));
            self.kill_facet(v);
        }
        orphans.sort_unstable();

        let mut created = Vec::with_capacity(horizon.len());
        for mut ridge in horizon {
            ridge.push(eye);
            created.push(self.add_facet(ridge)?);
        }
        self.assign(&orphans, &created);
        Ok(())
    }
}

/// Picks `dim + 1` affinely independent points greedily by distance to the
/// affine hull of those already chosen.
fn initial_simplex(pts: &[&[f64]], dim: usize, tol: f64) -> Result<Vec<usize>> {
    let first = (0..pts.len())
        .min_by(|&a, &b| {
            pts[a]
                .iter()
                .zip(pts[b])
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        })
        .expect("non-empty cloud");
    let mut chosen = vec![first];
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let residual = |p: usize, basis: &[Vec<f64>]| -> Vec<f64> {
        let mut r: Vec<f64> = pts[p].iter().zip(pts[first]).map(|(a, b)| a - b).collect();
        for _ in 0..2 {
            for b in basis {
                let c = dot(&r, b);
                r.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        r
    };
    for k in 0..dim {
        let (best, dist) = (0..pts.len())
            .map(|p| {
                let r = residual(p, &basis);
                (p, dot(&r, &r).sqrt())
            })
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
            .expect("non-empty cloud");
        if dist <= tol {
            return Err(Error::DegenerateInput { affine_rank: k, dim });
        }
        let mut r = residual(best, &basis);
        r.iter_mut().for_each(|x| *x /= dist);
        basis.push(r);
        chosen.push(best);
    }
    Ok(chosen)
}

/// Convex hull of `cloud`. Deterministic for a fixed input order; for points in
/// general position the facet set does not depend on the order at all.
pub fn quickhull(cloud: &PointCloud) -> Result<Hull> {
    let dim = cloud.dim();
    if !(2..=MAX_DIM).contains(&dim) {
        return Err(Error::UnsupportedDimension {
            dim,
            supported: "2..=6",
        });
    }
    if cloud.len() < dim + 1 {
        return Err(Error::DegenerateInput {
            affine_rank: cloud.len().saturating_sub(1),
            dim,
        });
    }
    let pts: Vec<&[f64]> = cloud.points().iter().map(|p| p.as_slice()).collect();
    let scale = pts
        .iter()
        .flat_map(|p| p.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let tol = OUTSIDE_RTOL * scale;

    let simplex = initial_simplex(&pts, dim, tol)?;
    let mut interior = vec![0.0; dim];
    for &s in &simplex {
        interior.iter_mut().zip(pts[s]).for_each(|(c, x)| *c += x);
    }
    interior.iter_mut().for_each(|c| *c /= (dim + 1) as f64);

    let mut b = Builder {
        pts,
        dim,
        tol,
        interior,
        facets: Vec::new(),
        ridges: HashMap::new(),
    };
    let mut initial = Vec::with_capacity(dim + 1);
    for skip in 0..=dim {
        let verts: Vec<usize> = simplex
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != skip)
            .map(|(_, &v)| v)
            .collect();
        initial.push(b.add_facet(verts)?);
    }
    let in_simplex: BTreeSet<usize> = simplex.iter().copied().collect();
    let rest: Vec<usize> = (0..cloud.len()).filter(|p| !in_simplex.contains(p)).collect();
    b.assign(&rest, &initial);

    let mut cursor = 0;
    while cursor < b.facets.len() {
        if b.facets[cursor].alive && !b.facets[cursor].outside.is_empty() {
            b.expand(cursor)?;
        }
        cursor += 1;
    }

    let facets: Vec<Facet> = b
        .facets
        .into_iter()
        .filter(|f| f.alive)
        .map(|f| Facet {
            vertex_ids: f.verts,
            outward_normal: DVector::from_vec(f.normal),
            offset: f.offset,
            is_trivial: false,
        })
        .collect();
    let vertices: BTreeSet<usize> = facets.iter().flat_map(|f| f.vertex_ids.iter().copied()).collect();
    Ok(Hull {
        dim,
        vertices: vertices.into_iter().collect(),
        facets,
        scale,
    })
}

/// Marks facets through `origin_id` as nontrivial and all others as trivial.
pub fn classify_facets(mut h: Hull, origin_id: usize) -> Result<Hull> {
    if h.vertices.binary_search(&origin_id).is_err() {
        return Err(Error::Geometry(format!(
            "point {origin_id} (the origin) is not a hull vertex; the data is not conic"
        )));
    }
    for f in &mut h.facets {
        f.is_trivial = f.vertex_ids.binary_search(&origin_id).is_err();
    }
    Ok(h)
}

/// Perpendicular distance from `x` to the supporting hyperplane of `f`.
pub fn point_facet_distance(x: &DVector<f64>, f: &Facet) -> f64 {
    f.signed_distance(x).abs()
}

/// Distance from `x` to the nearest vertex of `f`.
pub fn point_vertexset_distance(x: &DVector<f64>, f: &Facet, cloud: &PointCloud) -> f64 {
    f.vertex_ids
        .iter()
        .map(|&v| (x - cloud.point(v)).norm())
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(points: &[&[f64]]) -> PointCloud {
        PointCloud::from_points(points[0].len(), points.iter().map(|p| DVector::from_row_slice(p))).unwrap()
    }

    /// Every 3-subset whose plane leaves all other points strictly on one side.
    fn brute_force_facets(pts: &[DVector<f64>]) -> BTreeSet<Vec<usize>> {
        let n = pts.len();
        let mut out = BTreeSet::new();
        for i in 0..n {
            for j in i + 1..n {
                for k in j + 1..n {
                    let normal = (&pts[j] - &pts[i]).cross(&(&pts[k] - &pts[i]));
                    let off = normal.dot(&pts[i]);
                    let sides: Vec<f64> = (0..n)
                        .filter(|&q| q != i && q != j && q != k)
                        .map(|q| normal.dot(&pts[q]) - off)
                        .collect();
                    if sides.iter().all(|&s| s < 0.0) || sides.iter().all(|&s| s > 0.0) {
                        out.insert(vec![i, j, k]);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn simplex_hull() {
        let c = cloud(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0], &[0.0, 0.0, 0.0]]);
        let h = quickhull(&c).unwrap();
        assert_eq!(h.facets.len(), 4);
        assert_eq!(h.vertices, vec![0, 1, 2, 3]);
    }

    #[test]
    fn interior_point_is_not_a_vertex() {
        let t = 1.0 / 3.0;
        let c = cloud(&[
            &[1.0, 0.0, 0.0],
            &[0.0, 1.0, 0.0],
            &[0.0, 0.0, 1.0],
            &[0.0, 0.0, 0.0],
            &[t, t, t],
        ]);
        let h = quickhull(&c).unwrap();
        assert_eq!(h.vertices, vec![0, 1, 2, 3]);
        assert!(h.max_violation(&c) <= INSIDE_RTOL * h.scale);
    }

    #[test]
    fn matches_brute_force_in_3d() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let n = rng.random_range(4..=12);
            let pts: Vec<DVector<f64>> = (0..n)
                .map(|_| DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0)))
                .collect();
            let c = PointCloud::from_points(3, pts.clone()).unwrap();
            let h = quickhull(&c).unwrap();
            assert_eq!(h.facet_sets(), brute_force_facets(&pts));
            for f in &h.facets {
                for &v in &f.vertex_ids {
                    assert!(f.signed_distance(&pts[v]).abs() <= INSIDE_RTOL);
                }
            }
        }
    }

    #[test]
    fn order_independent_in_general_position() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for dim in [3usize, 4, 5] {
            let pts: Vec<DVector<f64>> = (0..40)
                .map(|_| DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0)))
                .collect();
            let base = quickhull(&PointCloud::from_points(dim, pts.clone()).unwrap()).unwrap();
            for _ in 0..10 {
                let mut perm: Vec<usize> = (0..pts.len()).collect();
                perm.shuffle(&mut rng);
                let shuffled = PointCloud::from_points(dim, perm.iter().map(|&i| pts[i].clone())).unwrap();
                let h = quickhull(&shuffled).unwrap();
                let mapped: BTreeSet<Vec<usize>> = h
                    .facets
                    .iter()
                    .map(|f| {
                        let mut v: Vec<usize> = f.vertex_ids.iter().map(|&i| perm[i]).collect();
                        v.sort_unstable();
                        v
                    })
                    .collect();
                assert_eq!(mapped, base.facet_sets());
            }
        }
    }

    #[test]
    fn every_point_inside_in_higher_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for dim in 2..=6 {
            let pts: Vec<DVector<f64>> = (0..200)
                .map(|_| DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0)))
                .collect();
            let c = PointCloud::from_points(dim, pts).unwrap();
            let h = quickhull(&c).unwrap();
            assert!(h.max_violation(&c) <= INSIDE_RTOL * h.scale);
            assert!(h.facets.iter().all(|f| f.vertex_ids.len() == dim));
        }
    }

    #[test]
    fn coplanar_points_on_simplex_plane() {
        // Collinear points on the edges of a triangle on x+y+z=1, plus the origin.
        let mut pts = vec![DVector::zeros(3)];
        for k in 1..10 {
            let t = k as f64 / 10.0;
            pts.push(DVector::from_vec(vec![t, 1.0 - t, 0.0]));
            pts.push(DVector::from_vec(vec![0.0, t, 1.0 - t]));
            pts.push(DVector::from_vec(vec![1.0 - t, 0.0, t]));
        }
        pts.push(DVector::from_vec(vec![0.3, 0.3, 0.4]));
        let c = PointCloud::from_points(3, pts).unwrap();
        let h = classify_facets(quickhull(&c).unwrap(), 0).unwrap();
        assert!(h.max_violation(&c) <= INSIDE_RTOL * h.scale);
        let nontrivial = h.nontrivial_facets().count();
        assert!(nontrivial >= 3);
        // The interior point never becomes a vertex.
        assert!(!h.vertices.contains(&(c.len() - 1)));
        for (_, f) in h.nontrivial_facets() {
            assert!(f.offset.abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_input_reports_rank() {
        let c = cloud(&[&[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[1.0, 1.0, 0.0]]);
        match quickhull(&c) {
            Err(Error::DegenerateInput { affine_rank, dim }) => assert_eq!((affine_rank, dim), (2, 3)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn classify_simplex() {
        let c = cloud(&[&[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let h = classify_facets(quickhull(&c).unwrap(), 0).unwrap();
        assert_eq!(h.nontrivial_facets().count(), 3);
        assert_eq!(h.facets.iter().filter(|f| f.is_trivial).count(), 1);
    }

    #[test]
    fn classify_without_origin_fails() {
        let c = cloud(&[
            &[1.0, 0.0, 0.0],
            &[0.0, 1.0, 0.0],
            &[0.0, 0.0, 1.0],
            &[0.5, 0.5, 0.5],
            &[0.4, 0.4, 0.4],
        ]);
        let h = quickhull(&c).unwrap();
        // Point 4 is inside the hull, so it cannot serve as the apex.
        assert!(classify_facets(h, 4).is_err());
    }

    #[test]
    fn distances() {
        let c = cloud(&[&[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let h = quickhull(&c).unwrap();
        let f = h
            .facets
            .iter()
            .find(|f| f.vertex_ids == vec![0, 1, 2])
            .unwrap()
            .clone();
        let x = DVector::from_vec(vec![0.3, 0.3, 0.05]);
        assert!((point_facet_distance(&x, &f) - 0.05).abs() < 1e-15);
        assert_eq!(point_facet_distance(&DVector::from_vec(vec![0.2, 0.7, 0.0]), &f), 0.0);
        let mut permuted = f.clone();
        permuted.vertex_ids.reverse();
        assert_eq!(point_facet_distance(&x, &permuted), point_facet_distance(&x, &f));

        assert_eq!(point_vertexset_distance(c.point(1), &f, &c), 0.0);
        let mid = DVector::from_vec(vec![0.5, 0.5, 0.0]);
        let d = point_vertexset_distance(&mid, &f, &c);
        assert!((d - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(point_vertexset_distance(&x, &f, &c) >= 0.0);
    }

    #[test]
    fn rejects_unsupported_dimension() {
        let pts: Vec<DVector<f64>> = (0..10).map(|i| DVector::from_element(7, i as f64)).collect();
        assert!(matches!(
            quickhull(&PointCloud::from_points(7, pts).unwrap()),
            Err(Error::UnsupportedDimension { .. })
        ));
    }
}
