//! Tensor bundles: the MPRB1 container and word-level pooling.

mod format;
mod pool;

pub use format::{
    check_spans, read_bundle, write_bundle, BundleHeader, BundleReader, BundleWriter, SentenceTensors,
    TensorBundle, MAGIC, ROW_SUM_TOLERANCE,
};
pub use pool::{
    pool_word_attention, pool_word_embeddings, pool_word_tensors, zero_diag_renorm, WordTensors,
    DEGENERATE_MASS,
};

use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorIoError {
    #[error("bad magic at byte offset {offset}")]
    BadMagic { offset: u64 },
    #[error("invalid header at byte offset {offset}: L, H and D must be positive")]
    BadHeader { offset: u64 },
    #[error("truncated {what} at byte offset {offset}")]
    Truncated { offset: u64, what: &'static str },
    #[error("sentence id at byte offset {offset} is not UTF-8")]
    BadId { offset: u64 },
    #[error("span/count mismatch in {sentence_id:?} at byte offset {offset}: {detail}")]
    SpanMismatch { offset: u64, sentence_id: String, detail: String },
    #[error("presence flag {value} at byte offset {offset} is not 0 or 1")]
    BadFlag { offset: u64, value: u8 },
    #[error("record at byte offset {offset} declares an impossible size")]
    Overflow { offset: u64 },
    #[error(
        "attention row {row} (layer {layer}, head {head}) of {sentence_id:?} sums to {sum} \
         (block at byte offset {offset})"
    )]
    NotStochastic { offset: u64, sentence_id: String, layer: usize, head: usize, row: usize, sum: f64 },
    #[error("sentence {0:?} has no hidden states")]
    MissingHidden(String),
    #[error("sentence {0:?} has no attention")]
    MissingAttention(String),
    #[error("row {row} has (almost) all its mass on the diagonal")]
    DegenerateRow { row: usize },
    #[error("shape error: {0}")]
    Shape(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}
