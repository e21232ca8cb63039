//! D12-equivariant chord accompaniment: group theory on pitch classes,
//! piece embedding, a reverse-mode autodiff tape, equivariant transformer
//! layers, training, and MIDI/annotation ingestion.

// `!(x > 0.0)` is used on purpose to reject NaN together with x <= 0
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod embed;
pub mod error;
pub mod group;
pub mod ingest;
pub mod nn;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use autodiff::{Gate, Graph, Var};
pub use embed::{chord_spans_from_matrix, ChordJson, NoteJson, Piece, PieceTensor};
pub use error::{
    AnnotationError, CheckpointError, ConfigError, EmbedError, GroupError, IngestError, ShapeError, SmfError,
    TrainError,
};
pub use group::{channels, decompose_perm_rep, ChangeOfBasis, GroupElement, IrrepLabel};
pub use nn::{Model, ModelConfig, ModelMode, Nonlinearity, NormOrder};
pub use tensor::Tensor;
pub use train::{EvalReport, MetricsRecord, TrainOptions, TrainOutcome};
