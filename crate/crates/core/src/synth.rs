//! Synthetic treebanks and tensor bundles with known structure, for tests
//! and end-to-end checks without a model.
//!
//! Two kinds are produced: bundles whose hidden states encode a feature value
//! linearly, and bundles with an attention head that concentrates mass inside
//! an agree set.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use ndarray::{Array3, Array4};
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::conllu::{Token, TreebankSentence};
use crate::morphdata::{AgreeExample, ClassificationSplit, Feature, FeatureSchema, MorphError};
use crate::rng;
use crate::tensorio::{BundleHeader, SentenceTensors, TensorBundle};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthProbeConfig {
    pub feature: Feature,
    pub n_sentences: usize,
    /// Inclusive range of words per sentence.
    pub words: (usize, usize),
    pub max_tokens_per_word: usize,
    pub layers: u32,
    pub dim: u32,
    /// Standard deviation of the noise added to every hidden coordinate;
    /// the signal has unit size.
    pub noise: f64,
    /// Layers carrying the signal (`None` = all).
    pub signal_layers: Option<BTreeSet<usize>>,
    pub seed: u64,
}

impl Default for SynthProbeConfig {
    fn default() -> Self {
        SynthProbeConfig {
            feature: Feature::Number,
            n_sentences: 400,
            words: (3, 6),
            max_tokens_per_word: 2,
            layers: 2,
            dim: 16,
            noise: 0.01,
            signal_layers: None,
            seed: 0,
        }
    }
}

fn spans_for<R: Rng>(n_words: usize, max_tokens: usize, rng: &mut R) -> Vec<Range<usize>> {
    let mut spans = Vec::with_capacity(n_words);
    let mut cursor = 0;
    for _ in 0..n_words {
        let len = rng.random_range(1..=max_tokens.max(1));
        spans.push(cursor..cursor + len);
        cursor += len;
    }
    spans
}

fn sentence(id: String, feats: Vec<BTreeMap<String, String>>) -> TreebankSentence {
    let tokens: Vec<Token> = feats
        .into_iter()
        .enumerate()
        .map(|(i, feats)| Token {
            index: i + 1,
            form: format!("w{}", i + 1),
            lemma: format!("w{}", i + 1),
            upos: "NOUN".into(),
            feats,
            head: if i == 0 { 0 } else { 1 },
            deprel: if i == 0 { "root".into() } else { "dep".into() },
        })
        .collect();
    let text = tokens.iter().map(|t| t.form.as_str()).collect::<Vec<_>>().join(" ");
    TreebankSentence { sentence_id: id, tokens, text }
}

/// A treebank whose words all carry `feature` with a uniformly drawn value,
/// and a bundle whose hidden states put a one-hot code of that value in the
/// first `k` coordinates (plus Gaussian noise). Attention is uniform.
pub fn planted_probe_bundle(
    schema: &FeatureSchema,
    config: &SynthProbeConfig,
) -> Result<(Vec<TreebankSentence>, TensorBundle), MorphError> {
    let values = schema.values(config.feature).ok_or_else(|| MorphError::FeatureNotInSchema {
        feature: config.feature,
        language: schema.language.clone(),
    })?;
    let k = values.len();
    if (config.dim as usize) < k {
        return Err(MorphError::InvalidSampling(format!("dim {} cannot hold {k} one-hot values", config.dim)));
    }
    let (lo, hi) = config.words;
    if lo < 1 || hi < lo {
        return Err(MorphError::InvalidSampling(format!("bad words-per-sentence range {lo}..={hi}")));
    }
    let mut rng = rng::stream(config.seed, &[rng::tags::SYNTH, 1]);
    let noise = Normal::new(0.0, config.noise).map_err(|e| MorphError::InvalidSampling(e.to_string()))?;
    let (layers, dim) = (config.layers as usize, config.dim as usize);

    let mut treebank = Vec::with_capacity(config.n_sentences);
    let mut tensors = Vec::with_capacity(config.n_sentences);
    for s in 0..config.n_sentences {
        let n_words = rng.random_range(lo..=hi);
        let classes: Vec<usize> = (0..n_words).map(|_| rng.random_range(0..k)).collect();
        let feats = classes
            .iter()
            .map(|&c| BTreeMap::from([(config.feature.as_str().to_string(), values[c].clone())]))
            .collect();
        let id = format!("synth-{s:05}");
        treebank.push(sentence(id.clone(), feats));

        let spans = spans_for(n_words, config.max_tokens_per_word, &mut rng);
        let n_tokens = spans.last().map_or(0, |r| r.end);
        let mut hidden = Array3::<f32>::zeros((layers + 1, n_tokens, dim));
        for layer in 0..=layers {
            let signal = config.signal_layers.as_ref().is_none_or(|set| set.contains(&layer));
            for (w, span) in spans.iter().enumerate() {
                for t in span.clone() {
                    for d in 0..dim {
                        let base = if signal && d == classes[w] { 1.0 } else { 0.0 };
                        hidden[[layer, t, d]] = (base + noise.sample(&mut rng)) as f32;
                    }
                }
            }
        }
        let attention = Array4::from_elem((layers, 1, n_tokens, n_tokens), 1.0 / n_tokens as f32);
        tensors.push(SentenceTensors { sentence_id: id, n_tokens, spans, hidden: Some(hidden), attention: Some(attention) });
    }
    let header = BundleHeader { layers: config.layers, heads: 1, dim: config.dim };
    Ok((treebank, TensorBundle { header, sentences: tensors }))
}

/// Reassigns values across a split's examples at random (train and test
/// separately), keeping every value's count.
pub fn shuffle_labels(split: &ClassificationSplit, seed: u64) -> ClassificationSplit {
    let mut out = split.clone();
    for (part, examples) in [&mut out.train, &mut out.test].into_iter().enumerate() {
        let mut rng = rng::stream(seed, &[rng::tags::PERMUTE, part as u64]);
        let mut labels: Vec<String> = examples.iter().map(|e| e.value.clone()).collect();
        labels.shuffle(&mut rng);
        for (e, v) in examples.iter_mut().zip(labels) {
            e.value = v;
        }
    }
    out
}

/// Attention outside the planted head.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Background {
    /// Every word attends to every word (itself included) equally.
    Uniform,
    /// Word-level weights `exp(N(0, sigma))`, normalized per row.
    Random { sigma: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthAgreeConfig {
    pub n_sentences: usize,
    pub n_words: usize,
    pub agree_size: usize,
    pub max_tokens_per_word: usize,
    pub layers: u32,
    pub heads: u32,
    /// 0-based (layer, head) of the planted head.
    pub planted: Option<(usize, usize)>,
    /// Share of an agree word's off-diagonal mass that the planted head puts
    /// on the other agree words.
    pub planted_mass: f64,
    pub background: Background,
    pub seed: u64,
}

impl Default for SynthAgreeConfig {
    fn default() -> Self {
        SynthAgreeConfig {
            n_sentences: 200,
            n_words: 12,
            agree_size: 4,
            max_tokens_per_word: 2,
            layers: 2,
            heads: 2,
            planted: Some((1, 0)),
            planted_mass: 0.9,
            background: Background::Uniform,
            seed: 0,
        }
    }
}

/// Word-level attention rows for one head; `rows[u][v]` is the mass word `u`
/// puts on word `v`.
fn background_rows(n: usize, background: Background, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    match background {
        Background::Uniform => vec![vec![1.0 / n as f64; n]; n],
        Background::Random { sigma } => {
            let normal = Normal::new(0.0, sigma).expect("finite sigma");
            (0..n)
                .map(|_| {
                    let w: Vec<f64> = (0..n).map(|_| normal.sample(rng).exp()).collect();
                    let total: f64 = w.iter().sum();
                    w.into_iter().map(|v| v / total).collect()
                })
                .collect()
        }
    }
}

fn planted_rows(n: usize, agree: &BTreeSet<usize>, mass: f64) -> Vec<Vec<f64>> {
    let inside = agree.len() - 1;
    let outside = n - agree.len();
    (0..n)
        .map(|u| {
            (0..n)
                .map(|v| {
                    if u == v {
                        0.0
                    } else if !agree.contains(&u) {
                        1.0 / (n - 1) as f64
                    } else if agree.contains(&v) {
                        mass / inside as f64
                    } else if outside == 0 {
                        0.0
                    } else {
                        (1.0 - mass) / outside as f64
                    }
                })
                .collect()
        })
        .collect()
}

/// Spreads word-level rows over tokens so that pooling recovers them: every
/// token of `u` gives word `v`'s mass in equal shares to `v`'s tokens.
fn token_block(rows: &[Vec<f64>], spans: &[Range<usize>], n_tokens: usize) -> ndarray::Array2<f32> {
    let mut block = ndarray::Array2::<f32>::zeros((n_tokens, n_tokens));
    for (u, src) in spans.iter().enumerate() {
        for t in src.clone() {
            for (v, dst) in spans.iter().enumerate() {
                let share = rows[u][v] / dst.len() as f64;
                for s in dst.clone() {
                    block[[t, s]] = share as f32;
                }
            }
        }
    }
    block
}

/// Agree examples plus an attention-only bundle in which the planted head
/// (if any) focuses agree words on each other.
pub fn planted_agree_bundle(config: &SynthAgreeConfig) -> Result<(Vec<AgreeExample>, TensorBundle), MorphError> {
    let n = config.n_words;
    if config.agree_size < 2 || config.agree_size >= n {
        return Err(MorphError::InvalidSampling(format!("agree set of {} in {n}-word sentences", config.agree_size)));
    }
    if !(0.0..=1.0).contains(&config.planted_mass) {
        return Err(MorphError::InvalidSampling(format!("planted mass {} outside [0, 1]", config.planted_mass)));
    }
    if let Some((l, h)) = config.planted {
        if l >= config.layers as usize || h >= config.heads as usize {
            return Err(MorphError::InvalidSampling(format!("planted head ({l}, {h}) outside the grid")));
        }
    }
    let mut rng = rng::stream(config.seed, &[rng::tags::SYNTH, 2]);
    let (layers, heads) = (config.layers as usize, config.heads as usize);
    let mut examples = Vec::with_capacity(config.n_sentences);
    let mut sentences = Vec::with_capacity(config.n_sentences);
    for s in 0..config.n_sentences {
        let id = format!("agree-{s:05}");
        let agree: BTreeSet<usize> = index::sample(&mut rng, n, config.agree_size).into_iter().collect();
        let spans = spans_for(n, config.max_tokens_per_word, &mut rng);
        let n_tokens = spans.last().map_or(0, |r| r.end);
        let mut attention = Array4::<f32>::zeros((layers, heads, n_tokens, n_tokens));
        for layer in 0..layers {
            for head in 0..heads {
                let rows = if config.planted == Some((layer, head)) {
                    planted_rows(n, &agree, config.planted_mass)
                } else {
                    background_rows(n, config.background, &mut rng)
                };
                attention.slice_mut(ndarray::s![layer, head, .., ..]).assign(&token_block(&rows, &spans, n_tokens));
            }
        }
        examples.push(AgreeExample::new(id.clone(), n, agree, Feature::Number)?);
        sentences.push(SentenceTensors { sentence_id: id, n_tokens, spans, hidden: None, attention: Some(attention) });
    }
    let header = BundleHeader { layers: config.layers, heads: config.heads, dim: 1 };
    Ok((examples, TensorBundle { header, sentences }))
}
