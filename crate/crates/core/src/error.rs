use std::path::PathBuf;

use thiserror::Error;

use crate::geo::Category;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: edge references unknown node `{node}`")]
    DanglingEndpoint { line: usize, node: String },

    #[error("line {line}: edge length must be positive, got {length}")]
    NonPositiveLength { line: usize, length: f64 },

    #[error("invalid GeoJSON: {0}")]
    GeoJson(String),

    #[error("coordinate out of range: lon {lon}, lat {lat}")]
    InvalidCoordinate { lon: f64, lat: f64 },

    #[error("graph has no nodes")]
    EmptyGraph,

    #[error("unknown node id `{0}`")]
    UnknownNode(String),

    #[error("ring needs at least 4 points and must be closed, got {points} points")]
    DegenerateRing { points: usize },

    #[error("invalid category `{0}` (expected 0-3 or healthcare/fire/security/transport)")]
    InvalidCategory(String),

    #[error("{what} must be positive, got {value}")]
    NonPositive { what: &'static str, value: f64 },

    #[error("invalid scenario config: {0}")]
    Scenario(String),

    #[error("rejection sampling gave up after {attempts} draws; region is too small relative to its bounding box")]
    RejectionBudget { attempts: usize },

    #[error(
        "chosen time {chosen} is below the best feasible time {best}; atlas and mask disagree"
    )]
    InconsistentTimes { chosen: f64, best: f64 },

    #[error("action {0} is masked out")]
    MaskedAction(usize),

    #[error("action {action} out of range for {n} facilities")]
    ActionOutOfRange { action: usize, n: usize },

    #[error("no feasible facility in the action mask")]
    EmptyMask,

    #[error("non-finite gradient in parameter block `{0}`")]
    NonFiniteGradient(&'static str),

    #[error("non-finite loss for incident `{0}`")]
    NonFiniteLoss(String),

    #[error("no solvable incidents to train on")]
    NoSolvableIncidents,

    #[error("no facility of category {0}")]
    NoCategoryMatch(Category),

    #[error("parameter shape mismatch: {0}")]
    Shape(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{0}")]
    Refused(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True when the error comes from bad inputs or arguments rather than a
    /// defect or numerical failure inside the program.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::Stage { source, .. } => source.is_input_error(),
            Error::InconsistentTimes { .. }
            | Error::MaskedAction(_)
            | Error::ActionOutOfRange { .. }
            | Error::EmptyMask
            | Error::NonFiniteGradient(_)
            | Error::NonFiniteLoss(_)
            | Error::Shape(_) => false,
            _ => true,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
