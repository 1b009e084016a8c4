//! Morphological probing of transformer representations.
//!
//! The crate covers the whole offline analysis pipeline: CoNLL-U ingestion
//! ([`conllu`]), feature schemas and dataset construction ([`morphdata`]),
//! the MPRB1 tensor-bundle container and word-level pooling ([`tensorio`]),
//! per-layer probe classifiers ([`probes`]), chi-square agreement scores over
//! attention heads ([`agreescore`]), correlation and baseline statistics
//! ([`analysis`]) and table/figure emission ([`report`]).
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the scalar for the common cases.

pub mod agreescore;
pub mod analysis;
pub mod conllu;
pub mod morphdata;
pub mod num;
pub mod probes;
pub mod report;
pub mod rng;
pub mod synth;
pub mod tensorio;

pub use num::Scalar;

/// Agreement score grid in double precision.
pub type AgreeScoreGridF64 = agreescore::AgreeScoreGrid<f64>;
/// Agreement score grid in single precision.
pub type AgreeScoreGridF32 = agreescore::AgreeScoreGrid<f32>;
/// Word-level tensors pooled into double precision.
pub type WordTensorsF64 = tensorio::WordTensors<f64>;
/// Word-level tensors pooled into single precision.
pub type WordTensorsF32 = tensorio::WordTensors<f32>;
/// Probe train/test matrices in double precision.
pub type ProbeDataF64 = probes::ProbeData<f64>;
/// Probe train/test matrices in single precision.
pub type ProbeDataF32 = probes::ProbeData<f32>;
/// Correlation coefficient with p-value in double precision.
pub type CorrelationF64 = analysis::Correlation<f64>;
/// Exact feature-length average.
pub type FeatureLength = num_rational::Ratio<u64>;
