use thiserror::Error;

/// Errors raised anywhere in the crate.
///
/// Variants map one-to-one onto the numeric status codes exported by the
/// C interface, so new variants must be appended rather than inserted.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    // system model
    #[error("activity graph contains a cycle (edge class {class} - station {station} closes it)")]
    CycleDetected { class: usize, station: usize },
    #[error("activity graph is disconnected ({components} components)")]
    Disconnected { components: usize },
    #[error("service rate does not match the activity set at class {class}, station {station}")]
    RateEdgeMismatch { class: usize, station: usize },
    #[error("rate `{field}` at index {index} is not admissible: {value}")]
    NonpositiveRate { field: &'static str, index: usize, value: f64 },
    #[error("invalid system description: {0}")]
    InvalidSystem(String),

    // fluid LP
    #[error("system is not critically loaded (consistency residual {residual:e})")]
    NotCriticallyLoaded { residual: f64 },
    #[error("activity (class {class}, station {station}) is not basic: xi* = {value:e}")]
    NonBasicActivity { class: usize, station: usize, value: f64 },
    #[error("negative fluid allocation on (class {class}, station {station}): {value:e}")]
    NegativeAllocation { class: usize, station: usize, value: f64 },

    // flow solver
    #[error("margins do not balance: sum(alpha) = {alpha_sum}, sum(beta) = {beta_sum}")]
    MarginMismatch { alpha_sum: f64, beta_sum: f64 },
    #[error("negative component {value} at index {index}")]
    NegativeComponent { index: usize, value: f64 },
    #[error("malformed routing state: {0}")]
    MalformedState(String),
    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),

    // diffusion control
    #[error("grid too small: doubling the box moved probe values by {change:e}")]
    GridTooSmall { change: f64 },
    #[error("HJB solver did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("mollification neighbourhood is empty")]
    EmptyNeighborhood,
    #[error("Euler step too large: Lipschitz bound {lipschitz} times dt {dt} exceeds 0.5")]
    StepTooLarge { lipschitz: f64, dt: f64 },

    // simulator
    #[error("rearrangement infeasible at t = {time}: negative population on activity {edge}")]
    InfeasibleRearrangement { time: f64, edge: usize },
    #[error("internal invariant broken at t = {time}: {detail}")]
    InvariantBroken { time: f64, detail: String },

    // harness
    #[error("initial population negative for class {class} at n = {n}")]
    NegativePopulation { class: usize, n: u64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("I/O failure: {0}")]
    IoFailure(String),
    #[error("parse failure: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::IoFailure(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::IoFailure(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
