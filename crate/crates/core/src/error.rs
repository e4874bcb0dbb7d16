use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("a graph needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),

    #[error("edge {edge}: endpoint {node} is outside 0..{n}")]
    NodeOutOfRange { edge: usize, node: usize, n: usize },

    #[error("edge {edge}: self-loop at node {node}")]
    SelfLoop { edge: usize, node: usize },

    #[error("edges {first} and {second} join the same pair of nodes")]
    DuplicateEdge { first: usize, second: usize },

    #[error("graph is disconnected; components: {components:?}")]
    Disconnected { components: Vec<Vec<usize>> },

    #[error("invalid spanning tree: {0}")]
    InvalidTree(String),

    #[error("{what}: expected length {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("edge {edge} has negative weight {value}")]
    NegativeWeight { edge: usize, value: f64 },

    #[error("invalid weight signal: {0}")]
    InvalidSignal(String),

    #[error(
        "not persistently exciting on the tested horizon: edge {edge} integrates to {integral:e} \
         over window [{window_start}, {window_end}]"
    )]
    NotPersistentlyExciting {
        edge: usize,
        window_start: f64,
        window_end: f64,
        integral: f64,
    },

    #[error("weight {value} at t = {t} on edge {edge} exceeds declared bound omega = {omega}")]
    OmegaExceeded {
        edge: usize,
        t: f64,
        value: f64,
        omega: f64,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("bound hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("graph has {count} spanning trees, above the enumeration cap of {cap}; pass an explicit tree")]
    TooManyTrees { count: f64, cap: usize },

    #[error("state transition estimate keeps growing (peak {peak:e} at t = {t}); the rate certificate does not hold numerically")]
    TransitionGrowth { peak: f64, t: f64 },

    #[error("invalid switching schedule: {0}")]
    Schedule(String),

    #[error("switching window {window} [{start}, {end}) has no spanning tree; components: {components:?}")]
    WindowNotSpanning {
        window: usize,
        start: f64,
        end: f64,
        components: Vec<Vec<usize>>,
    },

    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },

    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),

    #[error("config emit error: {0}")]
    Emit(#[from] toml::ser::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
