use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::conllu::{filter_single_nsubj, NsubjPair, Token, TreebankSentence};

use super::schema::Feature;
use super::MorphError;

/// A sentence partitioned into the words that agree and the rest.
/// Indices are 0-based word positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreeExample {
    pub sentence_id: String,
    pub n_words: usize,
    pub agree_indices: BTreeSet<usize>,
    pub out_indices: BTreeSet<usize>,
    pub feature: Feature,
}

impl AgreeExample {
    /// Builds the partition, taking the Out-set as the complement.
    pub fn new(
        sentence_id: impl Into<String>,
        n_words: usize,
        agree_indices: BTreeSet<usize>,
        feature: Feature,
    ) -> Result<Self, MorphError> {
        let sentence_id = sentence_id.into();
        let out_indices: BTreeSet<usize> =
            (0..n_words).filter(|i| !agree_indices.contains(i)).collect();
        let example = AgreeExample { sentence_id, n_words, agree_indices, out_indices, feature };
        example.validate()?;
        Ok(example)
    }

    pub fn validate(&self) -> Result<(), MorphError> {
        let bad = |why: &str| MorphError::InvalidPartition {
            sentence_id: self.sentence_id.clone(),
            reason: why.to_string(),
        };
        if self.agree_indices.len() < 2 {
            return Err(bad("agree set needs at least two words"));
        }
        if self.out_indices.is_empty() {
            return Err(bad("out set is empty"));
        }
        if !self.agree_indices.is_disjoint(&self.out_indices) {
            return Err(bad("agree and out sets overlap"));
        }
        let covered = self.agree_indices.len() + self.out_indices.len();
        let in_range = self.agree_indices.iter().chain(&self.out_indices).all(|&i| i < self.n_words);
        if covered != self.n_words || !in_range {
            return Err(bad("sets do not partition the sentence"));
        }
        Ok(())
    }

    pub fn is_agree(&self, word: usize) -> bool {
        self.agree_indices.contains(&word)
    }
}

fn is_verb(token: &Token) -> bool {
    token.upos == "VERB" || token.upos == "AUX"
}

fn agreeing_number<'a>(tokens: impl IntoIterator<Item = &'a Token>) -> bool {
    let mut values = tokens.into_iter().map(|t| t.feat("Number"));
    match values.next() {
        Some(Some(first)) => values.all(|v| v == Some(first)),
        _ => false,
    }
}

fn emit(pair: &NsubjPair<'_>, words: &[&Token]) -> Option<AgreeExample> {
    let agree: BTreeSet<usize> = words.iter().map(|t| t.position()).collect();
    AgreeExample::new(pair.sentence.sentence_id.clone(), pair.sentence.len(), agree, Feature::Number)
        .ok()
}

/// Subject-verb Number agreement pairs: a single `nsubj` NOUN whose VERB or
/// AUX head carries the same Number value. Stops after `cap` examples.
pub fn build_agree_dataset_en(corpora: &[TreebankSentence], cap: usize) -> Vec<AgreeExample> {
    filter_single_nsubj(corpora)
        .iter()
        .filter_map(|pair| {
            let subject = pair.subject_token();
            let head = pair.head_token()?;
            if subject.upos != "NOUN" || !is_verb(head) || !agreeing_number([subject, head]) {
                return None;
            }
            emit(pair, &[subject, head])
        })
        .take(cap)
        .collect()
}

/// Det-Adj-Noun (or Det-Noun-Adj) subjects agreeing in Number with their
/// verb head. The three subject words must form a contiguous span and the
/// noun must govern exactly one `det` and exactly one `amod`.
pub fn build_agree_dataset_rich(corpora: &[TreebankSentence], cap: usize) -> Vec<AgreeExample> {
    filter_single_nsubj(corpora)
        .iter()
        .filter_map(|pair| {
            let sentence = pair.sentence;
            let noun = pair.subject_token();
            let head = pair.head_token()?;
            if noun.upos != "NOUN" || !is_verb(head) {
                return None;
            }
            let mut dets = sentence.children(noun.index).filter(|t| t.deprel == "det");
            let mut amods = sentence.children(noun.index).filter(|t| t.deprel == "amod");
            let (det, adj) = (dets.next()?, amods.next()?);
            if dets.next().is_some() || amods.next().is_some() {
                return None;
            }
            let n = noun.index;
            let det_adj_noun = det.index + 2 == n && adj.index + 1 == n;
            let det_noun_adj = det.index + 1 == n && adj.index == n + 1;
            if !(det_adj_noun || det_noun_adj) {
                return None;
            }
            if !agreeing_number([det, adj, noun, head]) {
                return None;
            }
            emit(pair, &[det, adj, noun, head])
        })
        .take(cap)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conllu::parse_str;

    fn line(i: usize, form: &str, upos: &str, feats: &str, head: usize, rel: &str) -> String {
        format!("{i}\t{form}\t{form}\t{upos}\t_\t{feats}\t{head}\t{rel}\t_\t_\n")
    }

    fn men_were_tired(subject_number: &str) -> String {
        [
            line(1, "The", "DET", "Definite=Def", 2, "det"),
            line(2, "men", "NOUN", &format!("Number={subject_number}"), 4, "nsubj"),
            line(3, "were", "AUX", "Number=Plur|Tense=Past", 4, "cop"),
            line(4, "tired", "ADJ", "Degree=Pos", 0, "root"),
        ]
        .concat()
    }

    #[test]
    fn english_pair_agrees() {
        // "were" heads "men" directly in this simplified tree
        let text = [
            line(1, "The", "DET", "Definite=Def", 2, "det"),
            line(2, "men", "NOUN", "Number=Plur", 3, "nsubj"),
            line(3, "were", "AUX", "Number=Plur|Tense=Past", 0, "root"),
            line(4, "tired", "ADJ", "_", 3, "xcomp"),
        ]
        .concat();
        let corpus = parse_str(&text, "en").sentences;
        let ex = build_agree_dataset_en(&corpus, 10);
        assert_eq!(ex.len(), 1);
        assert_eq!(ex[0].agree_indices, BTreeSet::from([1, 2]));
        assert_eq!(ex[0].out_indices, BTreeSet::from([0, 3]));
    }

    #[test]
    fn english_exclusions() {
        // head is ADJ, not a verb
        let corpus = parse_str(&men_were_tired("Plur"), "a").sentences;
        assert!(build_agree_dataset_en(&corpus, 10).is_empty());

        let mismatch = [
            line(1, "men", "NOUN", "Number=Sing", 2, "nsubj"),
            line(2, "were", "VERB", "Number=Plur", 0, "root"),
            line(3, "here", "ADV", "_", 2, "advmod"),
        ]
        .concat();
        assert!(build_agree_dataset_en(&parse_str(&mismatch, "b").sentences, 10).is_empty());

        let missing = [
            line(1, "men", "NOUN", "_", 2, "nsubj"),
            line(2, "were", "VERB", "Number=Plur", 0, "root"),
            line(3, "here", "ADV", "_", 2, "advmod"),
        ]
        .concat();
        assert!(build_agree_dataset_en(&parse_str(&missing, "c").sentences, 10).is_empty());

        // two words: no out set left
        let short = [line(1, "men", "NOUN", "Number=Plur", 2, "nsubj"), line(2, "ran", "VERB", "Number=Plur", 0, "root")]
            .concat();
        assert!(build_agree_dataset_en(&parse_str(&short, "d").sentences, 10).is_empty());
    }

    #[test]
    fn english_cap_in_corpus_order() {
        let mut text = String::new();
        for i in 0..5 {
            text.push_str(&format!("# sent_id = s{i}\n"));
            text.push_str(&line(1, "dogs", "NOUN", "Number=Plur", 2, "nsubj"));
            text.push_str(&line(2, "bark", "VERB", "Number=Plur", 0, "root"));
            text.push_str(&line(3, "loudly", "ADV", "_", 2, "advmod"));
            text.push('\n');
        }
        let corpus = parse_str(&text, "cap").sentences;
        let ex = build_agree_dataset_en(&corpus, 3);
        let ids: Vec<_> = ex.iter().map(|e| e.sentence_id.as_str()).collect();
        assert_eq!(ids, ["s0", "s1", "s2"]);
    }

    fn french(adjs: &[(usize, &str)], det_pos: usize, noun_pos: usize) -> String {
        let mut rows = vec![(det_pos, "Les", "DET", "det")];
        for (p, form) in adjs {
            rows.push((*p, form, "ADJ", "amod"));
        }
        rows.push((noun_pos, "garçons", "NOUN", "nsubj"));
        rows.sort();
        let n = rows.len();
        let mut text = String::new();
        for (p, form, upos, rel) in &rows {
            let head = if *rel == "nsubj" { n + 2 } else { noun_pos };
            text.push_str(&line(*p, form, upos, "Number=Plur", head, rel));
        }
        text.push_str(&line(n + 1, "sont", "AUX", "Number=Plur", n + 2, "aux"));
        text.push_str(&line(n + 2, "allés", "VERB", "Number=Plur", 0, "root"));
        text.push_str(&line(n + 3, "tous", "PRON", "Number=Plur", n + 2, "obl"));
        text
    }

    #[test]
    fn rich_det_adj_noun() {
        let corpus = parse_str(&french(&[(2, "grands")], 1, 3), "fr").sentences;
        let ex = build_agree_dataset_rich(&corpus, 10);
        assert_eq!(ex.len(), 1);
        assert_eq!(ex[0].agree_indices, BTreeSet::from([0, 1, 2, 4]));
        assert_eq!(ex[0].n_words, 6);
    }

    #[test]
    fn rich_det_noun_adj() {
        let corpus = parse_str(&french(&[(3, "grands")], 1, 2), "fr").sentences;
        let ex = build_agree_dataset_rich(&corpus, 10);
        assert_eq!(ex.len(), 1);
        assert_eq!(ex[0].agree_indices, BTreeSet::from([0, 1, 2, 4]));
    }

    #[test]
    fn rich_exclusions() {
        let two_adjs = french(&[(2, "grands"), (3, "beaux")], 1, 4);
        assert!(build_agree_dataset_rich(&parse_str(&two_adjs, "a").sentences, 10).is_empty());

        // Det _ Adj Noun with a gap: the determiner is not adjacent
        let mut gap = String::new();
        gap.push_str(&line(1, "Les", "DET", "Number=Plur", 4, "det"));
        gap.push_str(&line(2, "très", "ADV", "_", 3, "advmod"));
        gap.push_str(&line(3, "grands", "ADJ", "Number=Plur", 4, "amod"));
        gap.push_str(&line(4, "garçons", "NOUN", "Number=Plur", 5, "nsubj"));
        gap.push_str(&line(5, "partent", "VERB", "Number=Plur", 0, "root"));
        gap.push_str(&line(6, "vite", "ADV", "_", 5, "advmod"));
        assert!(build_agree_dataset_rich(&parse_str(&gap, "b").sentences, 10).is_empty());

        let sing = french(&[(2, "grands")], 1, 3).replacen("Number=Plur", "Number=Sing", 1);
        assert!(build_agree_dataset_rich(&parse_str(&sing, "c").sentences, 10).is_empty());
    }

    #[test]
    fn partition_validation() {
        assert!(AgreeExample::new("x", 3, BTreeSet::from([0]), Feature::Number).is_err());
        assert!(AgreeExample::new("x", 2, BTreeSet::from([0, 1]), Feature::Number).is_err());
        assert!(AgreeExample::new("x", 3, BTreeSet::from([0, 5]), Feature::Number).is_err());
        let ok = AgreeExample::new("x", 4, BTreeSet::from([0, 3]), Feature::Number).unwrap();
        assert_eq!(ok.out_indices, BTreeSet::from([1, 2]));
    }
}
