use std::fmt;
use std::path::PathBuf;

/// Pipeline stage, used to tag errors raised inside [`crate::fca::run_fca`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FcaStep {
    Preprocess,
    ConvexHull,
    Grouping,
    Denoise,
    PlaneFitting,
    Intersecting,
    SourceRecovery,
}

impl fmt::Display for FcaStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (n, name) = match self {
            FcaStep::Preprocess => (1, "preprocessing"),
            FcaStep::ConvexHull => (2, "convex hull"),
            FcaStep::Grouping => (3, "grouping"),
            FcaStep::Denoise => (3, "denoising"),
            FcaStep::PlaneFitting => (4, "plane fitting"),
            FcaStep::Intersecting => (5, "intersecting"),
            FcaStep::SourceRecovery => (6, "source recovery"),
        };
        write!(f, "step {n} ({name})")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error at line {line}: {msg}")]
    Format { line: usize, msg: String },

    #[error("parse error at row {row}, column {col}: cannot parse {field:?} as a number")]
    Parse { row: usize, col: usize, field: String },

    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid source spec: {0}")]
    InvalidSpec(String),

    #[error("SNR is undefined for an all-zero signal")]
    UndefinedSnr,

    #[error("degenerate hull input: points span an affine subspace of dimension {affine_rank} < {dim}")]
    DegenerateInput { affine_rank: usize, dim: usize },

    #[error("unsupported dimension {dim} (supported: {supported})")]
    UnsupportedDimension { dim: usize, supported: &'static str },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("every column has L2 norm below rho = {rho}; try a smaller rho")]
    AllFiltered { rho: f64 },

    #[error("facet {facet_id} is underdetermined: members span {rank} < {needed} dimensions")]
    UnderdeterminedFacet {
        facet_id: usize,
        rank: usize,
        needed: usize,
    },

    #[error("only {accepted} of {needed} planes passed the coplanarity filter (check thresholds or source conditions)")]
    InsufficientFacets { accepted: usize, needed: usize },

    #[error("degenerate intersection for column {column}: planes are numerically coplanar")]
    DegenerateIntersection { column: usize },

    #[error("recovered vertex {column} leaves the nonnegative orthant (entry {value:.3e})")]
    NonConicSolution { column: usize, value: f64 },

    #[error("NNLS did not converge within {iterations} iterations (best residual {best_residual:.3e})")]
    Convergence {
        iterations: usize,
        best_residual: f64,
        best: Vec<f64>,
    },

    #[error("column {column}: {source}")]
    Column {
        column: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("ill-conditioned matrix: smallest/largest singular value ratio {ratio:.3e}")]
    Conditioning { ratio: f64 },

    #[error("denoising removed every point; try a larger tau")]
    DenoiseTooAggressive,

    #[error("{step}: {source}")]
    Step {
        step: FcaStep,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at(step: FcaStep) -> impl FnOnce(Error) -> Error {
        move |e| Error::Step {
            step,
            source: Box::new(e),
        }
    }

    /// The pipeline step that raised this error, if any.
    pub fn step(&self) -> Option<FcaStep> {
        match self {
            Error::Step { step, .. } => Some(*step),
            _ => None,
        }
    }

    /// Innermost error, with step and column wrappers removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Step { source, .. } | Error::Column { source, .. } => source.root(),
            e => e,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
