//! Per-layer probe classifiers and their scoring.

mod kmeans;
mod metrics;
mod network;
mod suite;

pub use kmeans::{kmeans, kmeans_probe, KMeansConfig, KMeansFit};
pub use metrics::{best_permutation, weighted_f1, ClassMetrics, ConfusionMatrix, MAX_PERMUTATION_CLASSES};
pub use network::{linear_probe, nn_probe, nn_probe_with, Classifier, Standardizer, TrainConfig, NN_HIDDEN};
pub use suite::{
    read_results_csv, run_probe_suite, write_results_csv, Aggregate, EmbeddingTable, ResultRecord, SuiteConfig,
    SuiteReport,
};

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::morphdata::Feature;
use crate::tensorio::TensorIoError;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("no examples")]
    Empty,
    #[error("label {label} out of range for {k} classes")]
    LabelOutOfRange { label: usize, k: usize },
    #[error("{k} classes exceed the exhaustive-mapping limit of {max}")]
    TooManyClasses { k: usize, max: usize },
    #[error("{points} points cannot form {k} clusters")]
    TooFewPoints { points: usize, k: usize },
    #[error("training loss became non-finite in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("sentences missing from the bundle: {}", .0.join(", "))]
    MissingSentences(Vec<String>),
    #[error("word {word} out of range in sentence {sentence_id:?} ({n_words} words)")]
    WordOutOfRange { sentence_id: String, word: usize, n_words: usize },
    #[error("layer {layer} out of range (bundle has {max} transformer layers)")]
    InvalidLayer { layer: usize, max: usize },
    #[error("value {value:?} is not a class of {feature}")]
    UnknownValue { feature: Feature, value: String },
    #[error("unknown probe task {0:?}")]
    UnknownTask(String),
    #[error("results file: {0}")]
    Format(String),
    #[error(transparent)]
    Tensor(#[from] TensorIoError),
}

/// Train/test design matrices for one (feature, layer) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeData<T> {
    pub x_train: Array2<T>,
    pub y_train: Vec<usize>,
    pub x_test: Array2<T>,
    pub y_test: Vec<usize>,
    pub k: usize,
}

impl<T> ProbeData<T> {
    pub fn check(&self) -> Result<(), ProbeError> {
        if self.x_train.nrows() != self.y_train.len() {
            return Err(ProbeError::LengthMismatch { left: self.x_train.nrows(), right: self.y_train.len() });
        }
        if self.x_test.nrows() != self.y_test.len() {
            return Err(ProbeError::LengthMismatch { left: self.x_test.nrows(), right: self.y_test.len() });
        }
        if self.x_train.ncols() != self.x_test.ncols() {
            return Err(ProbeError::LengthMismatch { left: self.x_train.ncols(), right: self.x_test.ncols() });
        }
        if self.y_train.is_empty() || self.y_test.is_empty() || self.k == 0 {
            return Err(ProbeError::Empty);
        }
        if let Some(&label) = self.y_train.iter().chain(&self.y_test).find(|&&l| l >= self.k) {
            return Err(ProbeError::LabelOutOfRange { label, k: self.k });
        }
        Ok(())
    }
}

/// Evaluation of one probe run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeScore {
    pub weighted_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: ConfusionMatrix,
    pub n_train: usize,
    pub n_test: usize,
}

impl ProbeScore {
    pub fn from_confusion(confusion: ConfusionMatrix, n_train: usize, n_test: usize) -> Self {
        ProbeScore {
            weighted_f1: confusion.weighted_f1(),
            per_class: confusion.class_metrics(),
            confusion,
            n_train,
            n_test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeTask {
    KMeans,
    Linear,
    Nn,
}

impl ProbeTask {
    pub const ALL: [ProbeTask; 3] = [ProbeTask::KMeans, ProbeTask::Linear, ProbeTask::Nn];

    pub fn as_str(self) -> &'static str {
        match self {
            ProbeTask::KMeans => "kmeans",
            ProbeTask::Linear => "linear",
            ProbeTask::Nn => "nn",
        }
    }

    /// Stable integer used when deriving per-cell seeds.
    pub fn code(self) -> u64 {
        match self {
            ProbeTask::KMeans => 1,
            ProbeTask::Linear => 2,
            ProbeTask::Nn => 3,
        }
    }
}

impl fmt::Display for ProbeTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProbeTask {
    type Err = ProbeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "kmeans" | "k-means" => Ok(ProbeTask::KMeans),
            "linear" => Ok(ProbeTask::Linear),
            "nn" | "mlp" => Ok(ProbeTask::Nn),
            _ => Err(ProbeError::UnknownTask(s.to_string())),
        }
    }
}

/// One (feature, task, layer) cell of a probe run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub language: String,
    pub feature: Feature,
    pub task: ProbeTask,
    pub layer: usize,
    /// Ambiguity degrees the examples were restricted to, if any.
    pub ambiguity: Option<Vec<usize>>,
    pub score: ProbeScore,
}

impl ProbeResult {
    pub fn weighted_f1(&self) -> f64 {
        self.score.weighted_f1
    }
}
