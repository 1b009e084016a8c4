//! Chi-square agreement scores over attention heads.
//!
//! For every word of an agreement example, the head's (diagonal-free) row is
//! reduced to two outcomes: mass on the other Agree-set words and mass on
//! everything else. The statistic compares that split with the one uniform
//! attention would give.

use std::borrow::Borrow;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};

use ndarray::{s, Array2, ArrayView1, ArrayView4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::morphdata::{AgreeExample, MorphError};
use crate::num::Scalar;
use crate::tensorio::{pool_word_attention, zero_diag_renorm, SentenceTensors, TensorIoError};

/// One-degree-of-freedom critical value at p < 0.1.
pub const CHI2_CRIT_P10: f64 = 2.706;
/// One-degree-of-freedom critical value at p < 0.05.
pub const CHI2_CRIT_P05: f64 = 3.841;

#[derive(Debug, Error)]
pub enum AgreeError {
    #[error("row of length {n} is too short (need at least 3 words)")]
    TooShort { n: usize },
    #[error("agree set of size {size} invalid for a row of length {n}")]
    BadAgreeSet { size: usize, n: usize },
    #[error("row owner {owner} out of range for length {n}")]
    OwnerOutOfRange { owner: usize, n: usize },
    #[error("expected proportion is zero")]
    ZeroExpected,
    #[error(transparent)]
    Partition(#[from] MorphError),
    #[error("sentence {sentence_id:?} has {found} words in the bundle but {expected} in the example")]
    WordCountMismatch { sentence_id: String, expected: usize, found: usize },
    #[error("sentences missing from the bundle: {}", .0.join(", "))]
    MissingSentences(Vec<String>),
    #[error("no usable agree examples")]
    NoUsableExamples,
    #[error("grid file: {0}")]
    Format(String),
    #[error(transparent)]
    Tensor(#[from] TensorIoError),
}

/// Chi-square score of row `owner`, whose diagonal entry is zero and whose
/// remaining mass sums to one, against the agree set.
pub fn chi2_row<T: Scalar>(row: ArrayView1<T>, agree: &BTreeSet<usize>, owner: usize) -> Result<T, AgreeError> {
    let n = row.len();
    if n < 3 {
        return Err(AgreeError::TooShort { n });
    }
    if owner >= n {
        return Err(AgreeError::OwnerOutOfRange { owner, n });
    }
    if agree.len() < 2 || agree.len() > n - 1 || agree.iter().any(|&j| j >= n) {
        return Err(AgreeError::BadAgreeSet { size: agree.len(), n });
    }
    let inside = agree.contains(&owner);
    let targets = if inside { agree.len() - 1 } else { agree.len() };
    let e_a = T::from_usize_lossy(targets) / T::from_usize_lossy(n - 1);
    let e_b = T::one() - e_a;
    if e_a <= T::zero() {
        return Err(AgreeError::ZeroExpected);
    }
    let o_a: T = agree.iter().filter(|&&j| j != owner).map(|&j| row[j]).sum();
    let o_b = T::one() - o_a;
    // an out word whose every neighbour is in S has a single outcome; the
    // empty category contributes nothing
    if e_b <= T::zero() {
        return Ok(T::zero());
    }
    Ok((o_a - e_a).powi(2) / e_a + (o_b - e_b).powi(2) / e_b)
}

/// Significance of a score against the one-dof critical values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Significance {
    None,
    P10,
    P05,
}

impl Significance {
    pub fn of(score: f64) -> Self {
        if score > CHI2_CRIT_P05 {
            Significance::P05
        } else if score > CHI2_CRIT_P10 {
            Significance::P10
        } else {
            Significance::None
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Significance::None => "",
            Significance::P10 => "p<0.1",
            Significance::P05 => "p<0.05",
        }
    }
}

impl fmt::Display for Significance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Per-head means for a single example. `valid[[l, h]]` is false where the
/// head had a row with all its mass on the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleScores<T> {
    pub agree: Array2<T>,
    pub out: Array2<T>,
    pub valid: Array2<bool>,
}

/// Scores one example on `L x H x n x n` word attention.
pub fn score_example<T: Scalar>(
    word_attention: ArrayView4<T>,
    example: &AgreeExample,
) -> Result<ExampleScores<T>, AgreeError> {
    example.validate()?;
    let (layers, heads, n, _) = word_attention.dim();
    if n != example.n_words {
        return Err(AgreeError::WordCountMismatch {
            sentence_id: example.sentence_id.clone(),
            expected: example.n_words,
            found: n,
        });
    }
    let mut scores = ExampleScores {
        agree: Array2::zeros((layers, heads)),
        out: Array2::zeros((layers, heads)),
        valid: Array2::from_elem((layers, heads), false),
    };
    let n_agree = T::from_usize_lossy(example.agree_indices.len());
    let n_out = T::from_usize_lossy(example.out_indices.len());
    for layer in 0..layers {
        for head in 0..heads {
            let matrix = match zero_diag_renorm(word_attention.slice(s![layer, head, .., ..])) {
                Ok(m) => m,
                Err(TensorIoError::DegenerateRow { .. }) => continue,
                Err(e) => return Err(e.into()),
            };
            let mut agree_sum = T::zero();
            let mut out_sum = T::zero();
            for (i, row) in matrix.outer_iter().enumerate() {
                let chi2 = chi2_row(row, &example.agree_indices, i)?;
                if example.is_agree(i) {
                    agree_sum += chi2;
                } else {
                    out_sum += chi2;
                }
            }
            scores.agree[[layer, head]] = agree_sum / n_agree;
            scores.out[[layer, head]] = out_sum / n_out;
            scores.valid[[layer, head]] = true;
        }
    }
    Ok(scores)
}

/// Dataset-averaged scores per (layer, head).
#[derive(Debug, Clone, PartialEq)]
pub struct AgreeScoreGrid<T> {
    pub agree: Array2<T>,
    pub out: Array2<T>,
    /// Examples contributing to each cell.
    pub counts: Array2<usize>,
    /// Examples with at least one usable head.
    pub n_examples: usize,
}

impl<T: Scalar> AgreeScoreGrid<T> {
    pub fn layers(&self) -> usize {
        self.agree.nrows()
    }

    pub fn heads(&self) -> usize {
        self.agree.ncols()
    }

    pub fn significance(&self, layer: usize, head: usize) -> Significance {
        Significance::of(self.agree[[layer, head]].as_f64())
    }

    /// Cells whose agree score clears `critical`, as 0-based (layer, head).
    pub fn cells_above(&self, critical: f64) -> Vec<(usize, usize)> {
        self.agree
            .indexed_iter()
            .filter(|(_, v)| v.as_f64() > critical)
            .map(|(idx, _)| idx)
            .collect()
    }
}

/// Running sums; merged in a fixed order so results do not depend on
/// scheduling.
#[derive(Debug, Clone)]
struct Accumulator<T> {
    agree: Array2<T>,
    out: Array2<T>,
    counts: Array2<usize>,
    n_examples: usize,
}

impl<T: Scalar> Accumulator<T> {
    fn new(layers: usize, heads: usize) -> Self {
        Accumulator {
            agree: Array2::zeros((layers, heads)),
            out: Array2::zeros((layers, heads)),
            counts: Array2::zeros((layers, heads)),
            n_examples: 0,
        }
    }

    fn add(&mut self, scores: &ExampleScores<T>) {
        let mut any = false;
        for ((idx, &valid), (&a, &o)) in scores.valid.indexed_iter().zip(scores.agree.iter().zip(&scores.out)) {
            if valid {
                self.agree[idx] += a;
                self.out[idx] += o;
                self.counts[idx] += 1;
                any = true;
            }
        }
        if any {
            self.n_examples += 1;
        }
    }

    fn finish(self) -> Result<AgreeScoreGrid<T>, AgreeError> {
        if self.n_examples == 0 {
            return Err(AgreeError::NoUsableExamples);
        }
        let mut agree = self.agree;
        let mut out = self.out;
        for (idx, &c) in self.counts.indexed_iter() {
            if c == 0 {
                log::warn!("head {}/{} had no usable example; its scores are set to 0", idx.0 + 1, idx.1 + 1);
            } else {
                let c = T::from_usize_lossy(c);
                agree[idx] /= c;
                out[idx] /= c;
            }
        }
        Ok(AgreeScoreGrid { agree, out, counts: self.counts, n_examples: self.n_examples })
    }
}

fn score_sentence<T: Scalar>(st: &SentenceTensors, examples: &[&AgreeExample]) -> Result<Vec<ExampleScores<T>>, AgreeError> {
    let attention = pool_word_attention::<T>(st)?;
    examples.iter().map(|e| score_example(attention.view(), e)).collect()
}

/// Number of bundle sentences scored per parallel batch while streaming.
const BATCH: usize = 128;

/// Averages example scores over a stream of bundle sentences. Sentences are
/// pooled and scored in parallel batches; sentences no example refers to are
/// skipped without pooling.
pub fn score_dataset<T, I, S>(sentences: I, examples: &[AgreeExample]) -> Result<AgreeScoreGrid<T>, AgreeError>
where
    T: Scalar,
    I: IntoIterator<Item = Result<S, TensorIoError>>,
    S: Borrow<SentenceTensors> + Send + Sync,
{
    let mut by_sentence: BTreeMap<&str, Vec<&AgreeExample>> = BTreeMap::new();
    for e in examples {
        by_sentence.entry(e.sentence_id.as_str()).or_default().push(e);
    }
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut acc: Option<Accumulator<T>> = None;
    let mut batch: Vec<S> = Vec::with_capacity(BATCH);

    let flush = |batch: &mut Vec<S>, acc: &mut Option<Accumulator<T>>| -> Result<(), AgreeError> {
        let scored: Vec<Vec<ExampleScores<T>>> = batch
            .par_iter()
            .map(|s| {
                let st: &SentenceTensors = s.borrow();
                score_sentence(st, &by_sentence[st.sentence_id.as_str()])
            })
            .collect::<Result<_, _>>()?;
        for scores in scored.iter().flatten() {
            let (layers, heads) = scores.valid.dim();
            acc.get_or_insert_with(|| Accumulator::new(layers, heads)).add(scores);
        }
        batch.clear();
        Ok(())
    };

    for sentence in sentences {
        let sentence = sentence?;
        let id = &sentence.borrow().sentence_id;
        if !by_sentence.contains_key(id.as_str()) || !seen.insert(id.clone()) {
            continue;
        }
        batch.push(sentence);
        if batch.len() == BATCH {
            flush(&mut batch, &mut acc)?;
        }
    }
    flush(&mut batch, &mut acc)?;

    let missing: Vec<String> = by_sentence.keys().filter(|id| !seen.contains(**id)).map(|id| id.to_string()).collect();
    if !missing.is_empty() {
        return Err(AgreeError::MissingSentences(missing));
    }
    acc.ok_or(AgreeError::NoUsableExamples)?.finish()
}

#[derive(Debug, Serialize, Deserialize)]
struct GridRow {
    layer: usize,
    head: usize,
    agree_score: f64,
    out_score: f64,
    significance: String,
}

/// Writes `layer,head,agree_score,out_score,significance` with 1-based
/// layer and head numbers.
pub fn write_grid_csv<T: Scalar, W: Write>(out: W, grid: &AgreeScoreGrid<T>) -> Result<(), AgreeError> {
    let err = |e: csv::Error| AgreeError::Format(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    for ((layer, head), &a) in grid.agree.indexed_iter() {
        w.serialize(GridRow {
            layer: layer + 1,
            head: head + 1,
            agree_score: a.as_f64(),
            out_score: grid.out[[layer, head]].as_f64(),
            significance: Significance::of(a.as_f64()).label().to_string(),
        })
        .map_err(err)?;
    }
    w.flush().map_err(|e| AgreeError::Format(e.to_string()))
}

/// Reads a grid CSV back into (agree, out) matrices.
pub fn read_grid_csv<R: Read>(input: R) -> Result<(Array2<f64>, Array2<f64>), AgreeError> {
    let rows: Vec<GridRow> = csv::Reader::from_reader(input)
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| AgreeError::Format(e.to_string()))?;
    let layers = rows.iter().map(|r| r.layer).max().unwrap_or(0);
    let heads = rows.iter().map(|r| r.head).max().unwrap_or(0);
    if rows.len() != layers * heads || rows.iter().any(|r| r.layer == 0 || r.head == 0) {
        return Err(AgreeError::Format(format!("{} rows do not form a {layers}x{heads} grid", rows.len())));
    }
    let mut agree = Array2::zeros((layers, heads));
    let mut out = Array2::zeros((layers, heads));
    for r in rows {
        agree[[r.layer - 1, r.head - 1]] = r.agree_score;
        out[[r.layer - 1, r.head - 1]] = r.out_score;
    }
    Ok((agree, out))
}
