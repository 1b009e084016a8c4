//! Runs the probe grid (feature x task x layer) over a tensor bundle.

use std::borrow::Borrow;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::morphdata::{ClassificationExample, ClassificationSplit, Feature};
use crate::num::Scalar;
use crate::rng;
use crate::tensorio::{pool_word_embeddings, SentenceTensors, TensorIoError};

use super::kmeans::{kmeans_probe, KMeansConfig};
use super::network::{linear_probe, nn_probe, TrainConfig};
use super::{ProbeData, ProbeError, ProbeResult, ProbeTask};

/// Word vectors for the examples of a run, one matrix row per word and one
/// matrix per requested layer.
#[derive(Debug, Clone)]
pub struct EmbeddingTable<T> {
    layers: Vec<usize>,
    rows: HashMap<(String, usize), usize>,
    data: Vec<Vec<Array1<T>>>,
}

impl<T: Scalar> EmbeddingTable<T> {
    /// Pools the words named in `needed` (sentence id -> word positions) out
    /// of a stream of sentences. Sentences that are not needed are dropped as
    /// soon as they are read.
    pub fn gather<I, S>(sentences: I, needed: &BTreeMap<String, BTreeSet<usize>>, layers: &[usize]) -> Result<Self, ProbeError>
    where
        I: IntoIterator<Item = Result<S, TensorIoError>>,
        S: Borrow<SentenceTensors>,
    {
        let mut table = EmbeddingTable {
            layers: layers.to_vec(),
            rows: HashMap::new(),
            data: vec![Vec::new(); layers.len()],
        };
        let mut found = BTreeSet::new();
        for sentence in sentences {
            let sentence = sentence?;
            let st: &SentenceTensors = sentence.borrow();
            let Some(words) = needed.get(&st.sentence_id) else { continue };
            if !found.insert(st.sentence_id.clone()) {
                continue;
            }
            let pooled = pool_word_embeddings::<T>(st)?;
            let max_layer = pooled.shape()[0] - 1;
            for &word in words {
                if word >= st.n_words() {
                    return Err(ProbeError::WordOutOfRange {
                        sentence_id: st.sentence_id.clone(),
                        word,
                        n_words: st.n_words(),
                    });
                }
                let row = table.rows.len();
                table.rows.insert((st.sentence_id.clone(), word), row);
                for (slot, &layer) in layers.iter().enumerate() {
                    if layer > max_layer {
                        return Err(ProbeError::InvalidLayer { layer, max: max_layer });
                    }
                    table.data[slot].push(pooled.slice(ndarray::s![layer, word, ..]).to_owned());
                }
            }
        }
        let missing: Vec<String> = needed.keys().filter(|id| !found.contains(*id)).cloned().collect();
        if !missing.is_empty() {
            return Err(ProbeError::MissingSentences(missing));
        }
        Ok(table)
    }

    /// Word positions used by a set of datasets, keyed by sentence.
    pub fn needed_words(datasets: &[ClassificationSplit]) -> BTreeMap<String, BTreeSet<usize>> {
        let mut needed: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
        for e in datasets.iter().flat_map(ClassificationSplit::all_examples) {
            needed.entry(e.sentence_id.clone()).or_default().insert(e.word_index);
        }
        needed
    }

    pub fn layers(&self) -> &[usize] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Stacks the vectors of `examples` at `layer` into a matrix.
    pub fn matrix<'a>(
        &self,
        layer: usize,
        examples: impl IntoIterator<Item = &'a ClassificationExample>,
    ) -> Result<Array2<T>, ProbeError> {
        let slot = self
            .layers
            .iter()
            .position(|&l| l == layer)
            .ok_or(ProbeError::InvalidLayer { layer, max: self.layers.iter().copied().max().unwrap_or(0) })?;
        let mut rows = Vec::new();
        for e in examples {
            let idx = self.rows.get(&(e.sentence_id.clone(), e.word_index)).ok_or_else(|| {
                ProbeError::MissingSentences(vec![e.sentence_id.clone()])
            })?;
            rows.push(self.data[slot][*idx].view());
        }
        if rows.is_empty() {
            let dim = self.data[slot].first().map_or(0, |v| v.len());
            return Ok(Array2::zeros((0, dim)));
        }
        ndarray::stack(ndarray::Axis(0), &rows).map_err(|e| TensorIoError::Shape(e.to_string()).into())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub language: String,
    pub tasks: Vec<ProbeTask>,
    pub layers: Vec<usize>,
    /// Keep only examples whose ambiguity degree is in the set.
    pub ambiguity_filter: Option<BTreeSet<usize>>,
    pub seed: u64,
    pub train: TrainConfig,
    pub kmeans: KMeansConfig,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            language: String::new(),
            tasks: ProbeTask::ALL.to_vec(),
            layers: (0..=12).collect(),
            ambiguity_filter: None,
            seed: 0,
            train: TrainConfig::default(),
            kmeans: KMeansConfig::default(),
        }
    }
}

/// Mean weighted F1 over a group of cells. Per-feature aggregates average
/// over layers (`layer` is `None`), per-layer ones over features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub task: ProbeTask,
    pub feature: Option<Feature>,
    pub layer: Option<usize>,
    pub mean_f1: f64,
    pub cells: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub results: Vec<ProbeResult>,
    pub feature_averages: Vec<Aggregate>,
    pub layer_averages: Vec<Aggregate>,
}

impl SuiteReport {
    pub fn from_results(results: Vec<ProbeResult>) -> Self {
        let mut by_feature: BTreeMap<(ProbeTask, Feature), Vec<f64>> = BTreeMap::new();
        let mut by_layer: BTreeMap<(ProbeTask, usize), Vec<f64>> = BTreeMap::new();
        for r in &results {
            by_feature.entry((r.task, r.feature)).or_default().push(r.score.weighted_f1);
            by_layer.entry((r.task, r.layer)).or_default().push(r.score.weighted_f1);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let feature_averages = by_feature
            .into_iter()
            .map(|((task, feature), v)| Aggregate { task, feature: Some(feature), layer: None, mean_f1: mean(&v), cells: v.len() })
            .collect();
        let layer_averages = by_layer
            .into_iter()
            .map(|((task, layer), v)| Aggregate { task, feature: None, layer: Some(layer), mean_f1: mean(&v), cells: v.len() })
            .collect();
        SuiteReport { results, feature_averages, layer_averages }
    }
}

fn class_ids(split: &ClassificationSplit, examples: &[&ClassificationExample]) -> Result<Vec<usize>, ProbeError> {
    examples
        .iter()
        .map(|e| {
            split.values.iter().position(|v| *v == e.value).ok_or_else(|| ProbeError::UnknownValue {
                feature: split.feature,
                value: e.value.clone(),
            })
        })
        .collect()
}

fn run_cell<T: Scalar>(
    table: &EmbeddingTable<T>,
    split: &ClassificationSplit,
    task: ProbeTask,
    layer: usize,
    config: &SuiteConfig,
) -> Result<Option<ProbeResult>, ProbeError> {
    let keep = |e: &&ClassificationExample| config.ambiguity_filter.as_ref().is_none_or(|f| f.contains(&e.ambiguity_degree));
    let train: Vec<&ClassificationExample> = split.train.iter().filter(keep).collect();
    let test: Vec<&ClassificationExample> = split.test.iter().filter(keep).collect();
    let k = split.values.len();
    let seed = rng::stream_id(&[config.seed, task.code(), split.feature.code(), layer as u64]);

    let score = match task {
        ProbeTask::KMeans => {
            let all: Vec<&ClassificationExample> = train.iter().chain(&test).copied().collect();
            if all.len() < k.max(1) {
                log::warn!("skipping {} {} layer {layer}: {} examples after filtering", split.feature, task, all.len());
                return Ok(None);
            }
            let x = table.matrix(layer, all.iter().copied())?;
            kmeans_probe(x.view(), &class_ids(split, &all)?, k, seed, &config.kmeans)?
        }
        ProbeTask::Linear | ProbeTask::Nn => {
            if train.is_empty() || test.is_empty() {
                log::warn!(
                    "skipping {} {} layer {layer}: {} train / {} test examples after filtering",
                    split.feature,
                    task,
                    train.len(),
                    test.len()
                );
                return Ok(None);
            }
            let data = ProbeData {
                x_train: table.matrix(layer, train.iter().copied())?,
                y_train: class_ids(split, &train)?,
                x_test: table.matrix(layer, test.iter().copied())?,
                y_test: class_ids(split, &test)?,
                k,
            };
            if task == ProbeTask::Linear {
                linear_probe(&data, seed, &config.train)?
            } else {
                nn_probe(&data, seed, &config.train)?
            }
        }
    };
    Ok(Some(ProbeResult {
        language: config.language.clone(),
        feature: split.feature,
        task,
        layer,
        ambiguity: config.ambiguity_filter.as_ref().map(|f| f.iter().copied().collect()),
        score,
    }))
}

/// Runs every (feature, task, layer) cell. Cells are independent and run in
/// parallel on the current rayon pool; results come back in grid order.
pub fn run_probe_suite<T: Scalar>(
    table: &EmbeddingTable<T>,
    datasets: &[ClassificationSplit],
    config: &SuiteConfig,
) -> Result<SuiteReport, ProbeError> {
    let mut cells = Vec::new();
    for split in datasets {
        for &task in &config.tasks {
            for &layer in &config.layers {
                cells.push((split, task, layer));
            }
        }
    }
    let results: Vec<Option<ProbeResult>> = cells
        .into_par_iter()
        .map(|(split, task, layer)| run_cell(table, split, task, layer, config))
        .collect::<Result<_, _>>()?;
    Ok(SuiteReport::from_results(results.into_iter().flatten().collect()))
}

#[derive(Debug, Serialize, Deserialize)]
struct ResultRow {
    language: String,
    feature: Feature,
    task: ProbeTask,
    layer: usize,
    weighted_f1: f64,
    n_train: usize,
    n_test: usize,
    #[serde(default)]
    ambiguity: String,
}

/// A result row as read back from CSV (no confusion matrix).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub language: String,
    pub feature: Feature,
    pub task: ProbeTask,
    pub layer: usize,
    pub weighted_f1: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub ambiguity: Option<Vec<usize>>,
}

impl From<&ProbeResult> for ResultRecord {
    fn from(r: &ProbeResult) -> Self {
        ResultRecord {
            language: r.language.clone(),
            feature: r.feature,
            task: r.task,
            layer: r.layer,
            weighted_f1: r.score.weighted_f1,
            n_train: r.score.n_train,
            n_test: r.score.n_test,
            ambiguity: r.ambiguity.clone(),
        }
    }
}

fn format_err(e: impl std::fmt::Display) -> ProbeError {
    ProbeError::Format(e.to_string())
}

/// Writes `language,feature,task,layer,weighted_f1,n_train,n_test,ambiguity`;
/// the last column lists the ambiguity degrees a cell was restricted to.
pub fn write_results_csv<'a, W: Write>(out: W, results: impl IntoIterator<Item = &'a ResultRecord>) -> Result<(), ProbeError> {
    let mut w = csv::Writer::from_writer(out);
    for r in results {
        let ambiguity = r
            .ambiguity
            .as_ref()
            .map(|d| d.iter().map(usize::to_string).collect::<Vec<_>>().join(" "))
            .unwrap_or_default();
        w.serialize(ResultRow {
            language: r.language.clone(),
            feature: r.feature,
            task: r.task,
            layer: r.layer,
            weighted_f1: r.weighted_f1,
            n_train: r.n_train,
            n_test: r.n_test,
            ambiguity,
        })
        .map_err(format_err)?;
    }
    w.flush().map_err(format_err)
}

/// Reads results written by [`write_results_csv`]; the `ambiguity` column is
/// optional.
pub fn read_results_csv<R: Read>(input: R) -> Result<Vec<ResultRecord>, ProbeError> {
    let mut reader = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for row in reader.deserialize::<ResultRow>() {
        let row = row.map_err(format_err)?;
        let ambiguity = if row.ambiguity.trim().is_empty() {
            None
        } else {
            Some(
                row.ambiguity
                    .split_whitespace()
                    .map(|d| d.parse::<usize>().map_err(format_err))
                    .collect::<Result<Vec<_>, _>>()?,
            )
        };
        out.push(ResultRecord {
            language: row.language,
            feature: row.feature,
            task: row.task,
            layer: row.layer,
            weighted_f1: row.weighted_f1,
            n_train: row.n_train,
            n_test: row.n_test,
            ambiguity,
        });
    }
    Ok(out)
}
