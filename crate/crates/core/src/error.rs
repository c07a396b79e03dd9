use thiserror::Error;

/// Errors raised by the numerical kernels and engines.
///
/// Numeric payloads are reported as `f64` regardless of the scalar type the
/// computation ran in.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NonSymmetric { asymmetry: f64 },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("{0} did not converge")]
    ConvergenceFailure(&'static str),
    #[error("function undefined or non-finite at eigenvalue {eigenvalue:e}")]
    DomainError { eigenvalue: f64 },
    #[error("matrix exponential overflowed")]
    Overflow,
    #[error("shift z = {re:e}{im:+e}i is numerically on the spectrum")]
    SingularShift { re: f64, im: f64 },
    #[error("drift is not stable: eigenvalue with real part {real_part:e}")]
    UnstableDrift { real_part: f64 },
    #[error(
        "interaction matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e})"
    )]
    NotPositiveDefinite { min_eigenvalue: f64 },
    #[error("V({i},{j}) = {value:e} is nonzero but ({i},{j}) is not an edge")]
    GraphMismatch { i: usize, j: usize, value: f64 },
    #[error("V({i},{j}) is nonzero at graph distance {distance} > locality {gamma}")]
    LocalityViolation {
        i: usize,
        j: usize,
        distance: usize,
        gamma: usize,
    },
    #[error("graph is not connected")]
    DisconnectedGraph,
    #[error("boundary size {m} outside [1, {n}]")]
    BadBoundary { m: usize, n: usize },
    #[error("model size {n} exceeds cap {cap}")]
    SizeCap { n: usize, cap: usize },
    #[error("determinant criterion requires a single boundary vertex, got m = {m}")]
    BoundaryNotSingleton { m: usize },
    #[error("inconsistent subspace report: {0}")]
    InconsistentReport(String),
    #[error("white noise covariance is a distribution and cannot be evaluated pointwise")]
    Distributional,
    #[error("white noise is not accepted by this engine")]
    DistributionalNoise,
    #[error("system has undamped modes (spectral abscissa {abscissa:e}); stationary covariance undefined")]
    NotDissipative { abscissa: f64 },
    #[error("quadrature error estimate {estimate:e} exceeds tolerance {tolerance:e}")]
    QuadratureFailure { estimate: f64, tolerance: f64 },
    #[error("V + z^2 is singular at z = {re:e}{im:+e}i")]
    SingularRho { re: f64, im: f64 },
    #[error("tau(z) is singular at z = {re:e}{im:+e}i")]
    SingularTau { re: f64, im: f64 },
    #[error("Lyapunov solution deviates from sigma^2 C_G by {relative:e} (relative)")]
    GibbsMismatch { relative: f64 },
    #[error("bad configuration: {0}")]
    BadConfig(String),
    #[error("noise kind {0} not supported here")]
    WrongNoiseKind(&'static str),
    #[error("insufficient data: {batches} batches, need at least {required}")]
    InsufficientData { batches: usize, required: usize },
    #[error("no vertex pairs farther than eta = {eta} from the boundary")]
    NoInteriorPairs { eta: f64 },
    #[error("serialization: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;
