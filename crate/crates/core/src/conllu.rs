//! CoNLL-U ingestion.
//!
//! Sentences are indexed by syntactic words: multiword-token range lines
//! (`3-4`) and empty nodes (`5.1`) are dropped, the word lines under a range
//! are kept. A block with any malformed line is excluded as a whole and
//! reported as a [`ParseError`].

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::io::{self, BufRead};

use thiserror::Error;

/// A syntactic word line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    /// 1-based word index.
    pub index: usize,
    pub form: String,
    pub lemma: String,
    pub upos: String,
    pub feats: BTreeMap<String, String>,
    /// Head word index, 0 for the root.
    pub head: usize,
    pub deprel: String,
}

impl Token {
    pub fn feat(&self, name: &str) -> Option<&str> {
        self.feats.get(name).map(String::as_str)
    }

    /// 0-based position in the sentence.
    pub fn position(&self) -> usize {
        self.index - 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreebankSentence {
    pub sentence_id: String,
    pub tokens: Vec<Token>,
    pub text: String,
}

impl TreebankSentence {
    /// Looks up a word by its 1-based index.
    pub fn word(&self, index: usize) -> Option<&Token> {
        index.checked_sub(1).and_then(|i| self.tokens.get(i))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Dependents of the word at `index`.
    pub fn children(&self, index: usize) -> impl Iterator<Item = &Token> {
        self.tokens.iter().filter(move |t| t.head == index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("expected 10 tab-separated columns, found {0}")]
    ColumnCount(usize),
    #[error("invalid word id {0:?}")]
    BadId(String),
    #[error("word id {found} out of sequence, expected {expected}")]
    IdSequence { expected: usize, found: usize },
    #[error("invalid head {0:?}")]
    BadHead(String),
    #[error("head {head} of word {word} is outside the sentence")]
    DanglingHead { word: usize, head: usize },
    #[error("malformed FEATS entry {0:?}")]
    BadFeats(String),
    #[error("sentence has {0} roots")]
    RootCount(usize),
    #[error("duplicate sentence id {0:?}")]
    DuplicateId(String),
}

/// A rejected sentence block, located by source name and 1-based line.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{source_name}:{line}: {kind}")]
pub struct ParseError {
    pub source_name: String,
    pub line: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParseOutcome {
    pub sentences: Vec<TreebankSentence>,
    pub errors: Vec<ParseError>,
}

#[derive(Default)]
struct Block {
    start_line: usize,
    sent_id: Option<String>,
    text: Option<String>,
    lines: Vec<(usize, String)>,
    has_content: bool,
}

/// Parses a CoNLL-U stream. `source_name` is used for synthesized sentence
/// ids (`source:line`) and error locations.
pub fn parse_conllu<R: BufRead>(input: R, source_name: &str) -> io::Result<ParseOutcome> {
    let mut outcome = ParseOutcome::default();
    let mut seen = HashSet::new();
    let mut block = Block::default();

    for (n, line) in input.lines().enumerate() {
        let line_no = n + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            finish_block(std::mem::take(&mut block), source_name, &mut seen, &mut outcome);
            continue;
        }
        if block.start_line == 0 {
            block.start_line = line_no;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((key, value)) = comment.split_once('=') {
                match key.trim() {
                    "sent_id" => block.sent_id = Some(value.trim().to_string()),
                    "text" => block.text = Some(value.trim().to_string()),
                    _ => {}
                }
            }
        } else {
            block.has_content = true;
            block.lines.push((line_no, line.to_string()));
        }
    }
    finish_block(block, source_name, &mut seen, &mut outcome);
    Ok(outcome)
}

/// Convenience wrapper over [`parse_conllu`] for in-memory text.
pub fn parse_str(text: &str, source_name: &str) -> ParseOutcome {
    parse_conllu(text.as_bytes(), source_name).expect("reading from memory cannot fail")
}

fn finish_block(
    block: Block,
    source_name: &str,
    seen: &mut HashSet<String>,
    outcome: &mut ParseOutcome,
) {
    if !block.has_content {
        return;
    }
    let error = |line: usize, kind: ParseErrorKind| ParseError {
        source_name: source_name.to_string(),
        line,
        kind,
    };
    match parse_block(&block) {
        Ok(tokens) => {
            let sentence_id = block
                .sent_id
                .clone()
                .unwrap_or_else(|| format!("{source_name}:{}", block.start_line));
            if !seen.insert(sentence_id.clone()) {
                outcome
                    .errors
                    .push(error(block.start_line, ParseErrorKind::DuplicateId(sentence_id)));
                return;
            }
            let text = block.text.clone().unwrap_or_else(|| {
                tokens.iter().map(|t| t.form.as_str()).collect::<Vec<_>>().join(" ")
            });
            outcome.sentences.push(TreebankSentence { sentence_id, tokens, text });
        }
        Err((line, kind)) => outcome.errors.push(error(line, kind)),
    }
}

fn parse_block(block: &Block) -> Result<Vec<Token>, (usize, ParseErrorKind)> {
    let mut tokens = Vec::new();
    for (line_no, line) in &block.lines {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err((*line_no, ParseErrorKind::ColumnCount(cols.len())));
        }
        let id = cols[0];
        if id.contains('-') || id.contains('.') {
            continue;
        }
        let index: usize = id
            .parse()
            .map_err(|_| (*line_no, ParseErrorKind::BadId(id.to_string())))?;
        let expected = tokens.len() + 1;
        if index != expected {
            return Err((*line_no, ParseErrorKind::IdSequence { expected, found: index }));
        }
        let head: usize = cols[6]
            .parse()
            .map_err(|_| (*line_no, ParseErrorKind::BadHead(cols[6].to_string())))?;
        let feats = parse_feats(cols[5]).map_err(|k| (*line_no, k))?;
        tokens.push(Token {
            index,
            form: cols[1].to_string(),
            lemma: cols[2].to_string(),
            upos: cols[3].to_string(),
            feats,
            head,
            deprel: cols[7].to_string(),
        });
    }
    let n = tokens.len();
    if let Some(t) = tokens.iter().find(|t| t.head > n) {
        return Err((block.start_line, ParseErrorKind::DanglingHead { word: t.index, head: t.head }));
    }
    let roots = tokens.iter().filter(|t| t.head == 0).count();
    if roots != 1 {
        return Err((block.start_line, ParseErrorKind::RootCount(roots)));
    }
    Ok(tokens)
}

fn parse_feats(column: &str) -> Result<BTreeMap<String, String>, ParseErrorKind> {
    let mut feats = BTreeMap::new();
    if column == "_" {
        return Ok(feats);
    }
    for pair in column.split('|') {
        match pair.split_once('=') {
            Some((k, v)) if !k.is_empty() && !v.is_empty() => {
                feats.insert(k.to_string(), v.to_string());
            }
            _ => return Err(ParseErrorKind::BadFeats(pair.to_string())),
        }
    }
    Ok(feats)
}

/// Serializes sentences back to CoNLL-U. Columns the parser ignores
/// (XPOS, DEPS, MISC) are written as `_`.
pub fn write_conllu(sentences: &[TreebankSentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        let _ = writeln!(out, "# sent_id = {}", s.sentence_id);
        let _ = writeln!(out, "# text = {}", s.text);
        for t in &s.tokens {
            let feats = if t.feats.is_empty() {
                "_".to_string()
            } else {
                t.feats.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join("|")
            };
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t_\t{}\t{}\t{}\t_\t_",
                t.index, t.form, t.lemma, t.upos, feats, t.head, t.deprel
            );
        }
        out.push('\n');
    }
    out
}

/// A sentence with exactly one `nsubj` arc, with the subject and its head.
#[derive(Debug, Clone, Copy)]
pub struct NsubjPair<'a> {
    pub sentence: &'a TreebankSentence,
    /// 1-based index of the subject word.
    pub subject: usize,
    /// 1-based index of the subject's head.
    pub head: usize,
}

impl NsubjPair<'_> {
    pub fn subject_token(&self) -> &Token {
        &self.sentence.tokens[self.subject - 1]
    }

    pub fn head_token(&self) -> Option<&Token> {
        self.sentence.word(self.head)
    }
}

/// Keeps sentences with exactly one word whose deprel is `nsubj`.
pub fn filter_single_nsubj(sentences: &[TreebankSentence]) -> Vec<NsubjPair<'_>> {
    sentences
        .iter()
        .filter_map(|s| {
            let mut subjects = s.tokens.iter().filter(|t| t.deprel == "nsubj");
            let subject = subjects.next()?;
            if subjects.next().is_some() {
                return None;
            }
            Some(NsubjPair { sentence: s, subject: subject.index, head: subject.head })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_TOKENS: &str = "# sent_id = s1\n# text = He runs\n\
        1\tHe\the\tPRON\t_\tNumber=Sing|Person=3\t2\tnsubj\t_\t_\n\
        2\truns\trun\tVERB\t_\t_\t0\troot\t_\t_\n\n";

    #[test]
    fn parses_feats_and_empty_feats() {
        let out = parse_str(TWO_TOKENS, "t");
        assert!(out.errors.is_empty());
        let s = &out.sentences[0];
        assert_eq!(s.sentence_id, "s1");
        assert_eq!(s.text, "He runs");
        assert_eq!(s.tokens[0].feat("Number"), Some("Sing"));
        assert_eq!(s.tokens[0].feat("Person"), Some("3"));
        assert_eq!(s.tokens[0].feats.len(), 2);
        assert!(s.tokens[1].feats.is_empty());
    }

    #[test]
    fn malformed_block_is_excluded_and_counted() {
        let text = format!(
            "{TWO_TOKENS}# sent_id = s2\n1\tBad\tbad\tX\t_\n2\tx\tx\tX\t_\t_\t0\troot\t_\t_\n\n\
             # sent_id = s3\n1\tOk\tok\tX\t_\t_\t0\troot\t_\t_\n"
        );
        let out = parse_str(&text, "fixture.conllu");
        assert_eq!(out.sentences.len(), 2);
        assert_eq!(out.errors.len(), 1);
        assert_eq!(out.errors[0].line, 7);
        assert_eq!(out.errors[0].kind, ParseErrorKind::ColumnCount(5));
        assert_eq!(out.errors[0].to_string(), "fixture.conllu:7: expected 10 tab-separated columns, found 5");
    }

    #[test]
    fn multiword_ranges_and_empty_nodes_are_skipped() {
        let text = "1-2\tdu\t_\t_\t_\t_\t_\t_\t_\t_\n\
            1\tde\tde\tADP\t_\t_\t2\tcase\t_\t_\n\
            2\tle\tle\tDET\t_\tNumber=Sing\t0\troot\t_\t_\n\
            2.1\tx\tx\tX\t_\t_\t_\t_\t_\t_\n";
        let out = parse_str(text, "mw");
        assert!(out.errors.is_empty());
        let s = &out.sentences[0];
        assert_eq!(s.sentence_id, "mw:1");
        assert_eq!(s.tokens.len(), 2);
        assert_eq!(s.tokens[1].form, "le");
        assert_eq!(s.text, "de le");
    }

    #[test]
    fn invalid_trees_are_rejected() {
        let two_roots = "1\ta\ta\tX\t_\t_\t0\troot\t_\t_\n2\tb\tb\tX\t_\t_\t0\troot\t_\t_\n";
        let out = parse_str(two_roots, "r");
        assert_eq!(out.errors[0].kind, ParseErrorKind::RootCount(2));
        let dangling = "1\ta\ta\tX\t_\t_\t0\troot\t_\t_\n2\tb\tb\tX\t_\t_\t7\tdep\t_\t_\n";
        let out = parse_str(dangling, "d");
        assert_eq!(out.errors[0].kind, ParseErrorKind::DanglingHead { word: 2, head: 7 });
        let gap = "1\ta\ta\tX\t_\t_\t0\troot\t_\t_\n3\tb\tb\tX\t_\t_\t1\tdep\t_\t_\n";
        let out = parse_str(gap, "g");
        assert_eq!(out.errors[0].kind, ParseErrorKind::IdSequence { expected: 2, found: 3 });
        let feats = "1\ta\ta\tX\t_\tNumber\t0\troot\t_\t_\n";
        let out = parse_str(feats, "f");
        assert_eq!(out.errors[0].kind, ParseErrorKind::BadFeats("Number".into()));
    }

    #[test]
    fn duplicate_ids_are_errors() {
        let text = format!("{TWO_TOKENS}{TWO_TOKENS}");
        let out = parse_str(&text, "dup");
        assert_eq!(out.sentences.len(), 1);
        assert_eq!(out.errors[0].kind, ParseErrorKind::DuplicateId("s1".into()));
    }

    #[test]
    fn single_nsubj_filter() {
        let one = parse_str(TWO_TOKENS, "a").sentences;
        let pairs = filter_single_nsubj(&one);
        assert_eq!(pairs.len(), 1);
        assert_eq!((pairs[0].subject, pairs[0].head), (1, 2));
        assert_eq!(pairs[0].head_token().unwrap().form, "runs");

        let two = parse_str(
            "1\ta\ta\tNOUN\t_\t_\t3\tnsubj\t_\t_\n2\tb\tb\tNOUN\t_\t_\t3\tnsubj\t_\t_\n\
             3\tc\tc\tVERB\t_\t_\t0\troot\t_\t_\n",
            "b",
        )
        .sentences;
        assert!(filter_single_nsubj(&two).is_empty());

        let zero = parse_str("1\ta\ta\tVERB\t_\t_\t0\troot\t_\t_\n", "c").sentences;
        assert!(filter_single_nsubj(&zero).is_empty());
    }

    #[test]
    fn crlf_input() {
        let text = TWO_TOKENS.replace('\n', "\r\n");
        let out = parse_str(&text, "crlf");
        assert!(out.errors.is_empty());
        assert_eq!(out.sentences[0].tokens[1].deprel, "root");
    }
}
