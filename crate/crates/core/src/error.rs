use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("{name} = {length} is not an integer multiple of h = {h}")]
    NotDivisible {
        name: &'static str,
        length: f64,
        h: f64,
    },
    #[error("channel length {length} must equal twice the channel width {width}")]
    AspectRatio { width: f64, length: f64 },
    #[error("region {region} ({kind}) does not lie on grid lines of spacing h = {h}")]
    NotAligned { region: usize, kind: String, h: f64 },
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("density {value} of element {element} is outside [0, 1]")]
    DensityOutOfRange { element: usize, value: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FemError {
    #[error("density {0} is outside [0, 1]")]
    DensityOutOfRange(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate element: Jacobian determinant {0} <= 0")]
    DegenerateElement(f64),
    #[error("dimension mismatch: {what} has length {got}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("boundary node {0} has no boundary tag")]
    UntaggedBoundaryNode(usize),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("Newton did not converge in {iterations} iterations (residual history {history:?})")]
    NotConverged {
        iterations: usize,
        history: Vec<f64>,
    },
    #[error("singular linear system at Newton iteration {iteration}")]
    Singular { iteration: usize },
    #[error("fluid region does not connect the inlet to the outlet")]
    Disconnected,
    #[error("body-fitted solve needs a discrete density field")]
    NonDiscreteDensity,
    #[error("invalid settings: {0}")]
    InvalidSettings(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("metric undefined: {0}")]
    Undefined(&'static str),
    #[error("mesh mismatch: {0}")]
    MeshMismatch(String),
    #[error("need at least {needed} usable records, got {got}")]
    TooFewRecords { needed: usize, got: usize },
    #[error("no linear run of length >= 3 fits within {tol} decades")]
    NoLinearRegion { tol: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error("every cell of the sweep failed")]
    AllFailed,
    #[error("rank-deficient basis: {distinct} distinct parameter values, need {needed}")]
    RankDeficient { distinct: usize, needed: usize },
    #[error("need at least {needed} fit points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("{model} fit has non-positive slope {slope}")]
    NonPositiveSlope { model: &'static str, slope: f64 },
    #[error("exponent search ended at the interval boundary a2 = {a2} (degenerate or out-of-range data)")]
    BoundaryFit { a2: f64 },
    #[error("{model} predicts non-positive alpha_max {value} at parameter {parameter}, q = {q}")]
    NonPositivePrediction {
        model: &'static str,
        parameter: f64,
        q: f64,
        value: f64,
    },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}
