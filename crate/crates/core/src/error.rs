use thiserror::Error;

/// Errors raised anywhere in the unlearning pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("index {index} out of range for {len} {what}")]
    OutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("ratio {0} outside [0, 1]")]
    InvalidRatio(f64),
    #[error("invalid probability: {0}")]
    InvalidProbability(String),
    #[error("request kind mismatch: expected {expected} targets, got {got}")]
    KindMismatch {
        expected: &'static str,
        got: &'static str,
    },
    #[error("unlearning request is empty")]
    EmptyRequest,
    #[error("request target missing from graph: {0}")]
    MissingTarget(String),
    #[error("request target {0} is not a training node")]
    TargetNotInTrain(usize),
    #[error("graph has no labels")]
    MissingLabels,
    #[error("graph has no edges")]
    NoEdges,
    #[error("invalid shard count k={k} for {n_train} training nodes")]
    InvalidK { k: usize, n_train: usize },
    #[error("conjugate gradient did not converge: residual {residual:.3e} after {iters} iterations")]
    CgDiverged { residual: f64, iters: usize },
    #[error("empty set: {0}")]
    EmptySet(&'static str),
    #[error("method requires backbone {expected}, got {got}")]
    WrongBackbone {
        expected: &'static str,
        got: &'static str,
    },
    #[error("only {available} candidate edges available, {needed} requested")]
    InsufficientCandidates { needed: usize, available: usize },
    #[error("AUC needs both classes present")]
    SingleClass,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unknown method {name:?}; supported: {supported}")]
    UnknownMethod { name: String, supported: String },
    #[error("unsupported combination: {0}")]
    UnsupportedCombination(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable process exit code per error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Stage { source, .. } => source.exit_code(),
            Error::Parse(_) => 2,
            Error::UnknownMethod { .. } => 3,
            Error::UnsupportedCombination(_) => 4,
            Error::Io(_) => 5,
            Error::OutOfRange { .. }
            | Error::ShapeMismatch(_)
            | Error::NonFinite(_)
            | Error::LengthMismatch(..) => 6,
            Error::InvalidRatio(_) | Error::InvalidProbability(_) | Error::InvalidK { .. } => 7,
            Error::KindMismatch { .. }
            | Error::EmptyRequest
            | Error::MissingTarget(_)
            | Error::TargetNotInTrain(_) => 8,
            Error::MissingLabels | Error::NoEdges | Error::EmptySet(_) | Error::SingleClass => 9,
            Error::CgDiverged { .. } => 10,
            Error::WrongBackbone { .. } => 11,
            Error::InsufficientCandidates { .. } => 12,
        }
    }

    pub(crate) fn at(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
