//! Matrix and point-cloud types shared by every stage, plus CSV and
//! key=value configuration I/O.
//!
//! Mixtures are stored with observations in rows and samples in columns,
//! so a data matrix `X` is `m × p` and each column is one point in `R^m`.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Dense, finite, double-precision matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix(DMatrix<f64>);

impl Matrix {
    /// Builds a matrix from row-major entries.
    pub fn from_row_major(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::InvalidMatrix(format!(
                "{} entries for a {rows}x{cols} matrix",
                entries.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(rows, cols, &entries))
    }

    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if let Some(pos) = m.iter().position(|v| !v.is_finite()) {
            let (r, c) = (pos % m.nrows().max(1), pos / m.nrows().max(1));
            return Err(Error::InvalidMatrix(format!("non-finite entry at ({r}, {c})")));
        }
        Ok(Matrix(m))
    }

    /// Like [`Matrix::new`] but additionally rejects negative entries.
    pub fn nonnegative(m: DMatrix<f64>) -> Result<Self> {
        let m = Self::new(m)?;
        if !m.is_nonnegative() {
            return Err(Error::InvalidMatrix("negative entry in nonnegative matrix".into()));
        }
        Ok(m)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix(DMatrix::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        Matrix(DMatrix::identity(n, n))
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.0[(row, col)]
    }

    pub fn column(&self, j: usize) -> DVector<f64> {
        self.0.column(j).into_owned()
    }

    pub fn as_dmatrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_dmatrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn row_major(&self) -> Vec<f64> {
        self.0.transpose().as_slice().to_vec()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.0.iter().all(|&v| v >= 0.0)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    /// Copy with every column scaled to unit L1 norm. Zero columns are kept as is.
    pub fn l1_normalized_columns(&self) -> Matrix {
        let mut m = self.0.clone();
        for mut col in m.column_iter_mut() {
            let s: f64 = col.iter().map(|v| v.abs()).sum();
            if s > 0.0 {
                col /= s;
            }
        }
        Matrix(m)
    }
}

/// Points in `R^dim`, each optionally tagged with the column of `X` it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    dim: usize,
    points: Vec<DVector<f64>>,
    source_index: Vec<Option<usize>>,
}

impl PointCloud {
    pub fn new(dim: usize) -> Self {
        PointCloud {
            dim,
            points: Vec::new(),
            source_index: Vec::new(),
        }
    }

    /// Builds a cloud from untagged points.
    pub fn from_points(dim: usize, points: impl IntoIterator<Item = DVector<f64>>) -> Result<Self> {
        let mut cloud = PointCloud::new(dim);
        for p in points {
            cloud.push(p, None)?;
        }
        Ok(cloud)
    }

    /// Reads one point per column of `m`, tagging each with its column index.
    pub fn from_columns(m: &Matrix) -> Result<Self> {
        let mut cloud = PointCloud::new(m.nrows());
        for j in 0..m.ncols() {
            cloud.push(m.column(j), Some(j))?;
        }
        Ok(cloud)
    }

    pub fn push(&mut self, point: DVector<f64>, source: Option<usize>) -> Result<()> {
        if point.len() != self.dim {
            return Err(Error::InvalidMatrix(format!(
                "point has {} coordinates, cloud dimension is {}",
                point.len(),
                self.dim
            )));
        }
        if point.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidMatrix("non-finite point coordinate".into()));
        }
        if let Some(s) = source {
            if self.source_index.contains(&Some(s)) {
                return Err(Error::InvalidMatrix(format!("duplicate source index {s}")));
            }
        }
        self.points.push(point);
        self.source_index.push(source);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &DVector<f64> {
        &self.points[i]
    }

    pub fn source_index(&self, i: usize) -> Option<usize> {
        self.source_index[i]
    }

    pub fn source_indices(&self) -> &[Option<usize>] {
        &self.source_index
    }

    /// Points as the columns of a `dim × len` matrix.
    pub fn to_matrix(&self) -> Matrix {
        let mut m = DMatrix::zeros(self.dim, self.len());
        for (j, p) in self.points.iter().enumerate() {
            m.set_column(j, p);
        }
        Matrix(m)
    }

    pub fn centroid(&self) -> DVector<f64> {
        let mut c = DVector::zeros(self.dim);
        for p in &self.points {
            c += p;
        }
        if !self.points.is_empty() {
            c /= self.points.len() as f64;
        }
        c
    }

    /// Builds a cloud directly from parts whose tags are already known to be distinct.
    pub(crate) fn from_parts_unchecked(
        dim: usize,
        points: Vec<DVector<f64>>,
        source_index: Vec<Option<usize>>,
    ) -> Self {
        debug_assert_eq!(points.len(), source_index.len());
        PointCloud {
            dim,
            points,
            source_index,
        }
    }
}

/// Thresholds of the separation pipeline.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FcaParams {
    /// Columns with L2 norm below `rho` are discarded.
    pub rho: f64,
    /// Maximum distance from a facet plane for a point to join its group.
    pub eps: f64,
    /// Minimum distance from the facet vertices for a point to join its group.
    pub sigma: f64,
    /// Upper bound on `b_i · b_j` between two selected (inward) plane normals.
    pub delta: f64,
}

impl FcaParams {
    pub fn new(rho: f64, eps: f64, sigma: f64, delta: f64) -> Result<Self> {
        let p = FcaParams {
            rho,
            eps,
            sigma,
            delta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidParameter(format!("rho must be positive, got {}", self.rho)));
        }
        for (name, v) in [("eps", self.eps), ("sigma", self.sigma), ("delta", self.delta)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidParameter(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

impl Default for FcaParams {
    fn default() -> Self {
        FcaParams {
            rho: 1e-3,
            eps: 1e-5,
            sigma: 1e-5,
            delta: 0.99,
        }
    }
}

/// Output of a separation run.
#[derive(Debug, Clone)]
pub struct SeparationResult {
    /// Estimated mixing matrix, columns on the simplex `1ᵀx = 1`.
    pub a_hat: Matrix,
    /// Nonnegative source estimate, `m × p`.
    pub s_hat: Matrix,
    pub selected_plane_count: usize,
    /// Cardinality of every group that produced a plane, in facet order.
    pub group_cardinalities: Vec<usize>,
    /// `‖X₀ − Â·Ŝ‖_F` over all columns of the clamped data.
    pub residual: f64,
}

fn format_value(v: f64) -> String {
    let a = v.abs();
    if v != 0.0 && !(1e-5..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

/// Parses CSV text; `skip_header` drops the first line.
pub fn parse_matrix_csv(text: &str, skip_header: bool) -> Result<Matrix> {
    let mut entries = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if skip_header && idx == 0 {
            continue;
        }
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        match cols {
            None => cols = Some(fields.len()),
            Some(c) if c != fields.len() => {
                return Err(Error::Format {
                    line: line_no,
                    msg: format!("expected {c} fields, found {}", fields.len()),
                })
            }
            _ => {}
        }
        for (c, field) in fields.iter().enumerate() {
            let v = f64::from_str(field.trim()).map_err(|_| Error::Parse {
                row: line_no,
                col: c + 1,
                field: field.to_string(),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: line_no,
                    col: c + 1,
                    field: field.to_string(),
                });
            }
            entries.push(v);
        }
        rows += 1;
    }
    Matrix::from_row_major(rows, cols.unwrap_or(0), entries)
}

pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<Matrix> {
    read_matrix_csv_with(path, false)
}

pub fn read_matrix_csv_with(path: impl AsRef<Path>, skip_header: bool) -> Result<Matrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_matrix_csv(&text, skip_header)
}

/// Renders a matrix as CSV; values use the shortest representation that round-trips.
pub fn matrix_to_csv(m: &Matrix) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let line: Vec<String> = (0..m.ncols()).map(|j| format_value(m.get(i, j))).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn write_matrix_csv(m: &Matrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| Error::Io {
        path: path.to_owned(),
        source,
    };
    let mut f = fs::File::create(path).map_err(io_err)?;
    f.write_all(matrix_to_csv(m).as_bytes()).map_err(io_err)
}

/// Flat `key=value` run configuration. Every key is optional.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize)]
pub struct RunConfig {
    pub rho: Option<f64>,
    pub eps: Option<f64>,
    pub sigma: Option<f64>,
    pub delta: Option<f64>,
    pub lambda: Option<f64>,
    pub tau: Option<f64>,
    pub grid: Option<usize>,
    pub knn: Option<usize>,
    pub seed: Option<u64>,
}

impl RunConfig {
    /// Parses `key=value` lines; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let line_no = idx + 1;
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Format {
                line: line_no,
                msg: "expected key=value".into(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = || Error::Format {
                line: line_no,
                msg: format!("invalid value {value:?} for {key}"),
            };
            let real = || value.parse::<f64>().map_err(|_| bad());
            let count = || value.parse::<usize>().map_err(|_| bad());
            match key {
                "rho" => cfg.rho = Some(real()?),
                "eps" => cfg.eps = Some(real()?),
                "sigma" => cfg.sigma = Some(real()?),
                "delta" => cfg.delta = Some(real()?),
                "lambda" => cfg.lambda = Some(real()?),
                "tau" => cfg.tau = Some(real()?),
                "grid" => cfg.grid = Some(count()?),
                "knn" => cfg.knn = Some(count()?),
                "seed" => cfg.seed = Some(value.parse::<u64>().map_err(|_| bad())?),
                _ => {
                    return Err(Error::Format {
                        line: line_no,
                        msg: format!("unknown key {key:?}"),
                    })
                }
            }
        }
        Ok(cfg)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::parse(&text)
    }

    /// FCA thresholds with unset keys taken from [`FcaParams::default`].
    pub fn fca_params(&self) -> Result<FcaParams> {
        let d = FcaParams::default();
        FcaParams::new(
            self.rho.unwrap_or(d.rho),
            self.eps.unwrap_or(d.eps),
            self.sigma.unwrap_or(d.sigma),
            self.delta.unwrap_or(d.delta),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_simple_csv() {
        let m = parse_matrix_csv("1,2\n3,4", false).unwrap();
        assert_eq!((m.nrows(), m.ncols()), (2, 2));
        assert_eq!(m.row_major(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn ragged_rows_report_line() {
        match parse_matrix_csv("1,2\n3", false) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn bad_field_reports_position() {
        match parse_matrix_csv("1,2\n3,x4", false) {
            Err(Error::Parse { row, col, .. }) => assert_eq!((row, col), (2, 2)),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn header_is_skipped() {
        let m = parse_matrix_csv("a,b\n1,2\n", true).unwrap();
        assert_eq!(m.row_major(), vec![1.0, 2.0]);
    }

    #[test]
    fn writes_plain_decimals() {
        let m = Matrix::from_row_major(1, 3, vec![0.25, 0.5, 0.25]).unwrap();
        assert_eq!(matrix_to_csv(&m), "0.25,0.5,0.25\n");
        assert_eq!(matrix_to_csv(&Matrix::zeros(0, 0)), "");
    }

    #[test]
    fn empty_matrix_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        write_matrix_csv(&Matrix::zeros(0, 0), &path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "");
        let back = read_matrix_csv(&path).unwrap();
        assert_eq!((back.nrows(), back.ncols()), (0, 0));
    }

    #[test]
    fn four_decimal_matrix_roundtrips_exactly() {
        let a1 = Matrix::from_row_major(
            3,
            3,
            vec![0.0769, 0.4615, 0.3571, 0.3846, 0.4615, 0.0714, 0.5385, 0.0769, 0.5714],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a1.csv");
        write_matrix_csv(&a1, &path).unwrap();
        assert_eq!(read_matrix_csv(&path).unwrap(), a1);
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let err = write_matrix_csv(&Matrix::identity(2), "/nonexistent-dir/x.csv").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn nonnegative_rejects_negative() {
        assert!(Matrix::nonnegative(DMatrix::from_row_slice(1, 2, &[1.0, -1e-300])).is_err());
        assert!(Matrix::nonnegative(DMatrix::from_row_slice(1, 2, &[1.0, 0.0])).is_ok());
    }

    #[test]
    fn rejects_non_finite() {
        assert!(Matrix::from_row_major(1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn cloud_rejects_duplicate_sources() {
        let mut c = PointCloud::new(2);
        c.push(DVector::from_vec(vec![1.0, 0.0]), Some(3)).unwrap();
        assert!(c.push(DVector::from_vec(vec![0.0, 1.0]), Some(3)).is_err());
        assert!(c.push(DVector::from_vec(vec![0.0, 1.0, 2.0]), None).is_err());
        c.push(DVector::from_vec(vec![0.0, 1.0]), None).unwrap();
        c.push(DVector::from_vec(vec![0.5, 0.5]), None).unwrap();
    }

    #[test]
    fn params_validation() {
        assert!(FcaParams::new(1.0, 0.5, 0.5, 0.99).is_ok());
        assert!(FcaParams::new(0.0, 0.5, 0.5, 0.99).is_err());
        assert!(FcaParams::new(1.0, 1.0, 0.5, 0.99).is_err());
        assert!(FcaParams::new(1.0, 0.5, 0.5, 0.0).is_err());
        FcaParams::default().validate().unwrap();
    }

    #[test]
    fn config_file_parsing() {
        let cfg = RunConfig::parse("# comment\nrho = 50\neps=5e-3\n\nsigma=6e-3 # trailing\ngrid=128\nseed=7\n").unwrap();
        assert_eq!(cfg.rho, Some(50.0));
        assert_eq!(cfg.grid, Some(128));
        assert_eq!(cfg.seed, Some(7));
        let p = cfg.fca_params().unwrap();
        assert_eq!((p.rho, p.eps, p.sigma, p.delta), (50.0, 5e-3, 6e-3, 0.99));
        assert!(RunConfig::parse("bogus=1").is_err());
        assert!(RunConfig::parse("grid=1.5").is_err());
        assert!(RunConfig::parse("rho").is_err());
    }

    proptest! {
        #[test]
        fn csv_roundtrip(rows in 1usize..5, cols in 1usize..5, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let entries: Vec<f64> = (0..rows * cols)
                .map(|_| {
                    let mant: f64 = rng.random_range(-1.0..1.0);
                    let exp: i32 = rng.random_range(-30..30);
                    mant * 10f64.powi(exp)
                })
                .collect();
            let m = Matrix::from_row_major(rows, cols, entries).unwrap();
            let back = parse_matrix_csv(&matrix_to_csv(&m), false).unwrap();
            for (a, b) in m.as_dmatrix().iter().zip(back.as_dmatrix().iter()) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
    }
}
