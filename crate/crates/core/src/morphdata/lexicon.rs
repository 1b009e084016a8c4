use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;

use crate::conllu::TreebankSentence;

use super::schema::{Feature, FeatureSchema};
use super::MorphError;

/// Attested values per (feature, surface form). Forms are compared verbatim.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AmbiguityLexicon {
    pub entries: BTreeMap<Feature, BTreeMap<String, BTreeSet<String>>>,
}

impl AmbiguityLexicon {
    pub fn insert(&mut self, feature: Feature, form: &str, value: &str) {
        self.entries
            .entry(feature)
            .or_default()
            .entry(form.to_string())
            .or_default()
            .insert(value.to_string());
    }

    pub fn values(&self, feature: Feature, form: &str) -> Option<&BTreeSet<String>> {
        self.entries.get(&feature)?.get(form)
    }

    /// Number of values `form` can realize for `feature`; 1 for unseen forms.
    pub fn degree(&self, feature: Feature, form: &str) -> usize {
        self.values(feature, form).map_or(1, |v| v.len().max(1))
    }
}

/// One row of an external lexicon TSV: form, feature, value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconRow {
    pub form: String,
    pub feature: String,
    pub value: String,
}

/// Reads a 3-column TSV lexicon. Lines that do not have three columns are
/// returned as rejects (1-based line numbers) rather than failing the read.
pub fn read_lexicon_tsv<R: BufRead>(input: R) -> std::io::Result<(Vec<LexiconRow>, Vec<usize>)> {
    let mut rows = Vec::new();
    let mut rejected = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            rejected.push(n + 1);
            continue;
        }
        rows.push(LexiconRow {
            form: cols[0].to_string(),
            feature: cols[1].to_string(),
            value: cols[2].to_string(),
        });
    }
    Ok((rows, rejected))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LexiconBuild {
    pub lexicon: AmbiguityLexicon,
    /// External rows whose feature or value is not in the schema.
    pub rejected_rows: usize,
}

/// Union of treebank-attested and external (form, feature, value) triples.
/// Comma-joined treebank values (`Case=Acc,Nom`) contribute each part.
pub fn build_lexicon(
    corpora: &[TreebankSentence],
    schema: &FeatureSchema,
    external: &[LexiconRow],
) -> Result<LexiconBuild, MorphError> {
    let mut lexicon = AmbiguityLexicon::default();
    for sentence in corpora {
        for token in &sentence.tokens {
            for feature in schema.features.keys() {
                let Some(raw) = token.feat(feature.as_str()) else { continue };
                for part in raw.split(',') {
                    if let Some(value) = schema.resolve(*feature, part) {
                        lexicon.insert(*feature, &token.form, value);
                    }
                }
            }
        }
    }
    let mut rejected_rows = 0;
    for row in external {
        let resolved = row
            .feature
            .parse::<Feature>()
            .ok()
            .and_then(|f| schema.resolve(f, &row.value).map(|v| (f, v)));
        match resolved {
            Some((feature, value)) => lexicon.insert(feature, &row.form, value),
            None => rejected_rows += 1,
        }
    }
    Ok(LexiconBuild { lexicon, rejected_rows })
}
