//! Feature schemas, probe datasets and dataset statistics.

mod agree;
mod classification;
mod io;
mod lexicon;
mod schema;
mod stats;

pub use agree::{build_agree_dataset_en, build_agree_dataset_rich, AgreeExample};
pub use classification::{
    build_classification_dataset, train_count, ClassificationExample, ClassificationSplit,
    SamplingConfig,
};
pub use io::{
    read_agree_csv, read_classification_csv, write_agree_csv, write_classification_csv,
    write_sentence_list, DatasetRow, Split,
};
pub use lexicon::{build_lexicon, read_lexicon_tsv, AmbiguityLexicon, LexiconBuild, LexiconRow};
pub use schema::{avg_feature_length, Feature, FeatureSchema, Language};
pub use stats::{ambiguity_stats, AmbiguityStats};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MorphError {
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
    #[error("unknown language {0:?}")]
    UnknownLanguage(String),
    #[error("invalid schema: {0}")]
    SchemaConfig(String),
    #[error("feature {feature} is not part of the {language} schema")]
    FeatureNotInSchema { feature: Feature, language: String },
    #[error("no candidates for {feature}={value}; the dataset cannot be balanced")]
    MissingValue { feature: Feature, value: String },
    #[error("invalid sampling configuration: {0}")]
    InvalidSampling(String),
    #[error("invalid agree partition for {sentence_id}: {reason}")]
    InvalidPartition { sentence_id: String, reason: String },
    #[error("empty dataset{}", .0.map(|f| format!(" for {f}")).unwrap_or_default())]
    EmptyDataset(Option<Feature>),
    #[error("dataset file: {0}")]
    Format(String),
}
