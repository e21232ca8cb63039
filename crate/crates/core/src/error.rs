use thiserror::Error;

use crate::group::IrrepLabel;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("shape error: {0}")]
pub struct ShapeError(pub String);

impl ShapeError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GroupError {
    #[error("pitch-class ordinal {0} outside 0..11")]
    OrdinalOutOfRange(usize),
    #[error("irrep {0} does not occur in the permutation representation")]
    NoSuchChannel(IrrepLabel),
    #[error("cannot parse group element {0:?}; expected \"Ti\" or \"TiR\" with i in 0..11")]
    BadElement(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbedError {
    #[error("time step u must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("step count must be at least 1")]
    NoSteps,
    #[error("invalid note: {0}")]
    InvalidNote(String),
    #[error("chord span [{onset}, {offset}) {reason}")]
    Alignment { onset: f64, offset: f64, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("config error: {0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("truncated checkpoint")]
    Truncated,
    #[error("checkpoint config: {0}")]
    Config(String),
    #[error("checkpoint parameters do not match config: {0}")]
    Incompatible(String),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite loss {loss} at epoch {epoch}, step {step} (max |grad| before step {max_grad})")]
    NonFiniteLoss { epoch: usize, step: usize, loss: f64, max_grad: f64 },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

/// SMF decoding failure at a byte offset.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("SMF parse error at byte {offset}: {message}")]
pub struct SmfError {
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnnotationError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown chord symbol {symbol:?}")]
    UnknownSymbol { line: usize, symbol: String },
    #[error("line {line}: span starts at {start} before previous span ends at {prev_end}")]
    Overlap { line: usize, start: f64, prev_end: f64 },
    #[error("beat grid: {0}")]
    BeatGrid(String),
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Smf(#[from] SmfError),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error("dataset split needs at least 3 pieces, got {0}")]
    TooFewPieces(usize),
    #[error("no melody track found")]
    NoMelody,
    #[error("unsupported SMF timing: {0}")]
    Unsupported(String),
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: Box<IngestError>,
    },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
