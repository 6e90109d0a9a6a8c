use thiserror::Error;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("non-uniform sampling near t = {time_s} s (step {step_s} s, nominal {nominal_s} s)")]
    NonUniformSampling {
        time_s: f64,
        step_s: f64,
        nominal_s: f64,
    },
    #[error("duplicate sample for bus `{bus_id}` at t = {time_s} s")]
    DuplicateSample { bus_id: String, time_s: f64 },
    #[error("bus `{bus_id}` has {found} samples, expected {expected}")]
    RaggedSeries {
        bus_id: String,
        found: usize,
        expected: usize,
    },
    #[error("bus `{bus_id}` frequency {value} Hz outside [{lo}, {hi}] Hz")]
    FrequencyOutOfBounds {
        bus_id: String,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("moving-median window must be odd, got {0}")]
    EvenWindow(usize),
    #[error("moving-median window {window} exceeds series length {len}")]
    WindowTooLarge { window: usize, len: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no disturbance found above the RoCoF threshold")]
    NoEventFound,
    #[error("window of {len} samples from index {t0} exceeds series length {available}")]
    WindowOutOfRange {
        t0: usize,
        len: usize,
        available: usize,
    },
    #[error("unknown bus `{0}`")]
    UnknownBus(String),
    #[error("malformed value in row {row}: {msg}")]
    Parse { row: usize, msg: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum TdaError {
    #[error("unknown bus `{0}`")]
    UnknownBus(String),
    #[error("degenerate feature for bus `{0}` (zero norm or zero variance)")]
    DegenerateFeature(String),
    #[error("zero cumulative proximity for bus `{0}`")]
    ZeroProximity(String),
    #[error("typicality needs at least 2 buses, got {0}")]
    TooFewBuses(usize),
    #[error("feature vectors have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

#[derive(Debug, Error)]
pub enum SysidError {
    #[error("unknown bus `{0}`")]
    UnknownBus(String),
    #[error("region has no tie-lines")]
    NoTieLines,
    #[error("regressor is ill-conditioned (condition number {0:e})")]
    IllConditioned(f64),
    #[error("prediction-error refinement did not converge")]
    NonConvergent,
    #[error("series of {len} samples too short for orders ({na}, {nb}, {nc})")]
    InsufficientData {
        len: usize,
        na: usize,
        nb: usize,
        nc: usize,
    },
    #[error("input and output lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("measured output is constant")]
    ConstantOutput,
    #[error("discrete pole at z = -1 has no bilinear image")]
    PoleAtMinusOne,
    #[error("Gramian computation failed: {0}")]
    GramianSolveFailure(String),
    #[error("reduced model gain b0 = {0} is not negative")]
    WrongSignGain(f64),
    #[error("no identified model passed the stability and fit gates")]
    NoAcceptedModel,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid grid configuration: {0}")]
    InvalidConfig(String),
    #[error("bus `{0}` is not connected to the rest of the network")]
    DisconnectedGraph(String),
    #[error("passive-node admittance block is singular")]
    SingularAdmittance,
    #[error("numerical blowup at t = {0} s")]
    NumericalBlowup(f64),
    #[error("unknown benchmark `{0}`")]
    UnknownBenchmark(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty input")]
    EmptyInput,
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("weights must be positive")]
    NonPositiveWeight,
    #[error("reference series has zero mean")]
    ZeroMean,
    #[error("quartile needs at least 4 values, got {0}")]
    TooFewValues(usize),
}

/// Any failure surfaced by the end-to-end pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Tda(#[from] TdaError),
    #[error(transparent)]
    Sysid(#[from] SysidError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
