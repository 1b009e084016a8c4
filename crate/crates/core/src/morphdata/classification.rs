use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::conllu::TreebankSentence;
use crate::rng;

use super::lexicon::AmbiguityLexicon;
use super::schema::{Feature, FeatureSchema};
use super::MorphError;

/// One (word, sentence, value) probe example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationExample {
    pub sentence_id: String,
    /// 0-based word position in the sentence.
    pub word_index: usize,
    pub word: String,
    pub feature: Feature,
    pub value: String,
    pub ambiguity_degree: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingConfig {
    pub target_per_value: usize,
    /// Train share of each value's sample.
    pub split: f64,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig { target_per_value: 750, split: 0.85, seed: 0 }
    }
}

/// A balanced, stratified dataset for one feature.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassificationSplit {
    pub feature: Feature,
    /// Ordered value labels; a label's position is its class id.
    pub values: Vec<String>,
    pub train: Vec<ClassificationExample>,
    pub test: Vec<ClassificationExample>,
    pub per_value: usize,
}

impl ClassificationSplit {
    pub fn all_examples(&self) -> impl Iterator<Item = &ClassificationExample> {
        self.train.iter().chain(self.test.iter())
    }
}

/// Number of training examples out of `count` for a train share, rounded
/// half-up.
pub fn train_count(count: usize, split: f64) -> usize {
    // the epsilon absorbs binary representation error in e.g. 0.85 * 750
    let exact = split * count as f64;
    ((exact + 0.5 + 1e-9).floor() as usize).min(count)
}

/// Samples a class-balanced dataset for `feature`.
///
/// Candidates are words whose FEATS carry exactly one schema value for the
/// feature. Every value is sampled down to `min(target, scarcest value)`
/// without replacement, then split per value.
pub fn build_classification_dataset(
    corpora: &[TreebankSentence],
    schema: &FeatureSchema,
    lexicon: &AmbiguityLexicon,
    feature: Feature,
    config: &SamplingConfig,
) -> Result<ClassificationSplit, MorphError> {
    let values = schema
        .values(feature)
        .ok_or_else(|| MorphError::FeatureNotInSchema {
            feature,
            language: schema.language.clone(),
        })?
        .to_vec();
    if config.target_per_value == 0 {
        return Err(MorphError::InvalidSampling("target_per_value must be at least 1".into()));
    }
    if !(config.split > 0.0 && config.split <= 1.0) {
        return Err(MorphError::InvalidSampling(format!("split {} outside (0, 1]", config.split)));
    }

    let mut candidates: Vec<Vec<ClassificationExample>> = vec![Vec::new(); values.len()];
    for sentence in corpora {
        for token in &sentence.tokens {
            let Some(raw) = token.feat(feature.as_str()) else { continue };
            if raw.contains(',') {
                continue;
            }
            let Some(value) = schema.resolve(feature, raw) else { continue };
            let class = schema.value_index(feature, value).expect("resolved value is in schema");
            candidates[class].push(ClassificationExample {
                sentence_id: sentence.sentence_id.clone(),
                word_index: token.position(),
                word: token.form.clone(),
                feature,
                value: value.to_string(),
                ambiguity_degree: lexicon.degree(feature, &token.form),
            });
        }
    }

    if let Some(class) = candidates.iter().position(Vec::is_empty) {
        return Err(MorphError::MissingValue { feature, value: values[class].clone() });
    }
    let available = candidates.iter().map(Vec::len).min().unwrap_or(0);
    let per_value = config.target_per_value.min(available);
    let n_train = train_count(per_value, config.split);

    let mut train = Vec::with_capacity(per_value * values.len());
    let mut test = Vec::new();
    for (class, mut pool) in candidates.into_iter().enumerate() {
        let mut rng = rng::stream(config.seed, &[rng::tags::SAMPLE, feature.code(), class as u64]);
        let (chosen, _) = pool.partial_shuffle(&mut rng, per_value);
        let chosen = chosen.to_vec();
        let (tr, te) = chosen.split_at(n_train);
        train.extend_from_slice(tr);
        test.extend_from_slice(te);
    }
    Ok(ClassificationSplit { feature, values, train, test, per_value })
}
