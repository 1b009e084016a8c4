use std::collections::BTreeSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::conllu::TreebankSentence;

use super::agree::AgreeExample;
use super::classification::ClassificationExample;
use super::schema::Feature;
use super::MorphError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One line of a dataset CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub sentence_id: String,
    pub word_index: usize,
    pub word: String,
    pub feature: Feature,
    pub value: String,
    pub ambiguity_degree: usize,
    pub split: Split,
}

fn format_err(e: impl std::fmt::Display) -> MorphError {
    MorphError::Format(e.to_string())
}

/// Writes `sentence_id,word_index,word,feature,value,ambiguity_degree,split`.
pub fn write_classification_csv<W: Write>(
    out: W,
    train: &[ClassificationExample],
    test: &[ClassificationExample],
) -> Result<(), MorphError> {
    let mut w = csv::Writer::from_writer(out);
    let tagged = train.iter().map(|e| (e, Split::Train)).chain(test.iter().map(|e| (e, Split::Test)));
    for (e, split) in tagged {
        w.serialize(DatasetRow {
            sentence_id: e.sentence_id.clone(),
            word_index: e.word_index,
            word: e.word.clone(),
            feature: e.feature,
            value: e.value.clone(),
            ambiguity_degree: e.ambiguity_degree,
            split,
        })
        .map_err(format_err)?;
    }
    w.flush().map_err(format_err)
}

/// Reads a dataset CSV back into (train, test).
pub fn read_classification_csv<R: Read>(
    input: R,
) -> Result<(Vec<ClassificationExample>, Vec<ClassificationExample>), MorphError> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for row in csv::Reader::from_reader(input).deserialize::<DatasetRow>() {
        let row = row.map_err(format_err)?;
        let example = ClassificationExample {
            sentence_id: row.sentence_id,
            word_index: row.word_index,
            word: row.word,
            feature: row.feature,
            value: row.value,
            ambiguity_degree: row.ambiguity_degree,
        };
        match row.split {
            Split::Train => train.push(example),
            Split::Test => test.push(example),
        }
    }
    Ok((train, test))
}

#[derive(Serialize, Deserialize)]
struct AgreeRow {
    sentence_id: String,
    n_words: usize,
    agree_indices: String,
    out_indices: String,
    feature: Feature,
}

fn join(set: &BTreeSet<usize>) -> String {
    set.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

fn split_indices(text: &str) -> Result<BTreeSet<usize>, MorphError> {
    text.split_whitespace().map(|t| t.parse().map_err(format_err)).collect()
}

/// Writes `sentence_id,n_words,agree_indices,out_indices,feature`, indices
/// space-separated and 0-based.
pub fn write_agree_csv<W: Write>(out: W, examples: &[AgreeExample]) -> Result<(), MorphError> {
    let mut w = csv::Writer::from_writer(out);
    for e in examples {
        w.serialize(AgreeRow {
            sentence_id: e.sentence_id.clone(),
            n_words: e.n_words,
            agree_indices: join(&e.agree_indices),
            out_indices: join(&e.out_indices),
            feature: e.feature,
        })
        .map_err(format_err)?;
    }
    w.flush().map_err(format_err)
}

pub fn read_agree_csv<R: Read>(input: R) -> Result<Vec<AgreeExample>, MorphError> {
    let mut out = Vec::new();
    for row in csv::Reader::from_reader(input).deserialize::<AgreeRow>() {
        let row = row.map_err(format_err)?;
        let example = AgreeExample {
            sentence_id: row.sentence_id,
            n_words: row.n_words,
            agree_indices: split_indices(&row.agree_indices)?,
            out_indices: split_indices(&row.out_indices)?,
            feature: row.feature,
        };
        example.validate()?;
        out.push(example);
    }
    Ok(out)
}

/// Writes `sentence_id<TAB>text<TAB>space-separated words`, one sentence per
/// line. This is the exact sentence set the embedding extractor must cover.
pub fn write_sentence_list<'a, W: Write>(
    mut out: W,
    sentences: impl IntoIterator<Item = &'a TreebankSentence>,
) -> std::io::Result<()> {
    for s in sentences {
        let words: Vec<&str> = s.tokens.iter().map(|t| t.form.as_str()).collect();
        writeln!(out, "{}\t{}\t{}", s.sentence_id, s.text.replace('\t', " "), words.join(" "))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(i: usize, value: &str) -> ClassificationExample {
        ClassificationExample {
            sentence_id: format!("s,{i}"),
            word_index: i,
            word: format!("w\"{i}"),
            feature: Feature::Number,
            value: value.into(),
            ambiguity_degree: 1 + i % 2,
        }
    }

    #[test]
    fn classification_csv_round_trip() {
        let train = vec![ex(0, "Sing"), ex(1, "Plur")];
        let test = vec![ex(2, "Sing")];
        let mut buf = Vec::new();
        write_classification_csv(&mut buf, &train, &test).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("sentence_id,word_index,word,feature,value,ambiguity_degree,split\n"));
        assert!(text.contains(",train\n") && text.ends_with(",test\n"));
        let (tr, te) = read_classification_csv(buf.as_slice()).unwrap();
        assert_eq!(tr, train);
        assert_eq!(te, test);
    }

    #[test]
    fn agree_csv_round_trip() {
        let e = AgreeExample::new("s1", 5, BTreeSet::from([1, 3]), Feature::Number).unwrap();
        let mut buf = Vec::new();
        write_agree_csv(&mut buf, std::slice::from_ref(&e)).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "sentence_id,n_words,agree_indices,out_indices,feature\ns1,5,1 3,0 2 4,Number\n"
        );
        assert_eq!(read_agree_csv(buf.as_slice()).unwrap(), vec![e]);
    }

    #[test]
    fn agree_csv_rejects_bad_partition() {
        let text = "sentence_id,n_words,agree_indices,out_indices,feature\ns1,3,1 2,1,Number\n";
        assert!(read_agree_csv(text.as_bytes()).is_err());
    }

    #[test]
    fn sentence_list_format() {
        let s = crate::conllu::parse_str("# sent_id = a\n# text = Hi there\n1\tHi\thi\tX\t_\t_\t0\troot\t_\t_\n2\tthere\tthere\tX\t_\t_\t1\tdep\t_\t_\n", "x");
        let mut buf = Vec::new();
        write_sentence_list(&mut buf, &s.sentences).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "a\tHi there\tHi there\n");
    }
}
