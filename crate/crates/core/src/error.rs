use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ArmError {
    #[error("invalid arm parameter: {0}")]
    InvalidParameter(String),
    #[error(
        "unreachable target ({x:.4}, {y:.4}): distance {distance:.4} m outside ({inner:.4}, {outer:.4})"
    )]
    Unreachable {
        x: f64,
        y: f64,
        distance: f64,
        inner: f64,
        outer: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Arm(#[from] ArmError),
    #[error("no baseline trajectory for direction {0} deg")]
    MissingBaseline(f64),
    #[error("integration diverged at t = {t:.4} s (|qd| = {speed:.1} rad/s)")]
    Diverged { t: f64, speed: f64 },
    #[error("invalid trial spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("series too short: {0} samples (need at least 20)")]
    TooShort(usize),
    #[error("invalid sampling: {0}")]
    InvalidSampling(String),
    #[error("speed never exceeds the movement-onset threshold")]
    NoMovement,
    #[error("degenerate regression: predictor variance {0:e}")]
    DegenerateRegression(f64),
    #[error("record is not an error-clamp trial")]
    NotClamp,
    #[error("missing direction {0} deg")]
    MissingDirection(f64),
    #[error("missing group {0} deg")]
    MissingGroup(f64),
    #[error("missing baseline index for direction {0} deg")]
    MissingBaseline(f64),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("invalid group direction {0} deg (must be a multiple of 45 in [0, 360))")]
    InvalidDirection(f64),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("non-finite prediction for group {group} deg, direction {direction} deg")]
    NonFinitePrediction { group: f64, direction: f64 },
    #[error("small sample: n = {n} <= k + 1 = {}; AIC = {aic}", k + 1)]
    SmallSample { n: usize, k: usize, aic: f64 },
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("fits were computed on different datasets")]
    MismatchedDatasets,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: config parse error: {message}")]
    Config { path: String, message: String },
    #[error("{path}: schema error: {message}")]
    Schema { path: String, message: String },
    #[error("{path}:{line}: {message}")]
    Csv {
        path: String,
        line: u64,
        message: String,
    },
    #[error("{path}: json error: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Arm(#[from] ArmError),
}
