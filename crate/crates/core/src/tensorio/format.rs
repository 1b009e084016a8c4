//! The MPRB1 container.
//!
//! ```text
//! magic      "MPRB1\n"
//! header     u32 L, u32 H, u32 D, u32 n_sentences         (little-endian)
//! sentence   u32 id_len, id bytes (UTF-8)
//!            u32 n_words, u32 n_tokens
//!            n_words x (u32 start, u32 end)
//!            u8 has_hidden, u8 has_attention
//!            [f32; (L+1) * n_tokens * D]                   layer-major
//!            [f32; L * H * n_tokens * n_tokens]            layer, head, row
//! ```

use std::io::{self, Read, Write};
use std::ops::Range;

use ndarray::{Array3, Array4};

use super::TensorIoError;

pub const MAGIC: &[u8; 6] = b"MPRB1\n";

/// Tolerance on attention row sums checked when reading.
pub const ROW_SUM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BundleHeader {
    /// Transformer layers; hidden states carry `layers + 1` entries.
    pub layers: u32,
    pub heads: u32,
    pub dim: u32,
}

/// Token-level tensors of one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceTensors {
    pub sentence_id: String,
    pub n_tokens: usize,
    /// Token interval of each word; sorted, disjoint, covering `0..n_tokens`.
    pub spans: Vec<Range<usize>>,
    /// `(L+1) x n_tokens x D`.
    pub hidden: Option<Array3<f32>>,
    /// `L x H x n_tokens x n_tokens`, row-stochastic.
    pub attention: Option<Array4<f32>>,
}

impl SentenceTensors {
    pub fn n_words(&self) -> usize {
        self.spans.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorBundle {
    pub header: BundleHeader,
    pub sentences: Vec<SentenceTensors>,
}

impl TensorBundle {
    pub fn find(&self, sentence_id: &str) -> Option<&SentenceTensors> {
        self.sentences.iter().find(|s| s.sentence_id == sentence_id)
    }
}

/// Checks spans partition `0..n_tokens` in order with no empty word.
pub fn check_spans(spans: &[Range<usize>], n_tokens: usize) -> Result<(), String> {
    if spans.is_empty() {
        return Err("sentence has no words".into());
    }
    let mut cursor = 0;
    for (i, span) in spans.iter().enumerate() {
        if span.start != cursor {
            return Err(format!("word {i} starts at token {} but previous word ended at {cursor}", span.start));
        }
        if span.end <= span.start {
            return Err(format!("word {i} has empty span {}..{}", span.start, span.end));
        }
        cursor = span.end;
    }
    if cursor != n_tokens {
        return Err(format!("spans cover 0..{cursor} but n_tokens is {n_tokens}"));
    }
    Ok(())
}

fn check_sentence(header: &BundleHeader, s: &SentenceTensors) -> Result<(), TensorIoError> {
    let shape_err = |detail: String| TensorIoError::Shape(format!("{}: {detail}", s.sentence_id));
    check_spans(&s.spans, s.n_tokens).map_err(shape_err)?;
    let (l, h, d, n) = (header.layers as usize, header.heads as usize, header.dim as usize, s.n_tokens);
    if let Some(hidden) = &s.hidden {
        if hidden.dim() != (l + 1, n, d) {
            return Err(shape_err(format!("hidden shape {:?}, expected {:?}", hidden.dim(), (l + 1, n, d))));
        }
    }
    if let Some(att) = &s.attention {
        if att.dim() != (l, h, n, n) {
            return Err(shape_err(format!("attention shape {:?}, expected {:?}", att.dim(), (l, h, n, n))));
        }
    }
    Ok(())
}

fn put_u32<W: Write>(out: &mut W, value: usize) -> Result<(), TensorIoError> {
    let v = u32::try_from(value).map_err(|_| TensorIoError::Shape(format!("{value} exceeds u32")))?;
    out.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f32s<'a, W: Write>(out: &mut W, values: impl Iterator<Item = &'a f32>) -> io::Result<()> {
    let mut buf = Vec::with_capacity(4096);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
        if buf.len() >= 4096 {
            out.write_all(&buf)?;
            buf.clear();
        }
    }
    out.write_all(&buf)
}

/// Sequential MPRB1 writer. The sentence count is fixed up front.
pub struct BundleWriter<W: Write> {
    out: W,
    header: BundleHeader,
    remaining: usize,
}

impl<W: Write> BundleWriter<W> {
    pub fn new(mut out: W, header: BundleHeader, n_sentences: usize) -> Result<Self, TensorIoError> {
        if header.layers == 0 || header.heads == 0 || header.dim == 0 {
            return Err(TensorIoError::Shape("L, H and D must be positive".into()));
        }
        out.write_all(MAGIC)?;
        for v in [header.layers as usize, header.heads as usize, header.dim as usize, n_sentences] {
            put_u32(&mut out, v)?;
        }
        Ok(BundleWriter { out, header, remaining: n_sentences })
    }

    pub fn write_sentence(&mut self, s: &SentenceTensors) -> Result<(), TensorIoError> {
        if self.remaining == 0 {
            return Err(TensorIoError::Shape("more sentences than declared in the header".into()));
        }
        check_sentence(&self.header, s)?;
        let out = &mut self.out;
        put_u32(out, s.sentence_id.len())?;
        out.write_all(s.sentence_id.as_bytes())?;
        put_u32(out, s.n_words())?;
        put_u32(out, s.n_tokens)?;
        for span in &s.spans {
            put_u32(out, span.start)?;
            put_u32(out, span.end)?;
        }
        out.write_all(&[u8::from(s.hidden.is_some()), u8::from(s.attention.is_some())])?;
        if let Some(hidden) = &s.hidden {
            put_f32s(out, hidden.iter())?;
        }
        if let Some(att) = &s.attention {
            put_f32s(out, att.iter())?;
        }
        self.remaining -= 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W, TensorIoError> {
        if self.remaining != 0 {
            return Err(TensorIoError::Shape(format!("{} declared sentences not written", self.remaining)));
        }
        self.out.flush()?;
        Ok(self.out)
    }
}

pub fn write_bundle<W: Write>(out: W, bundle: &TensorBundle) -> Result<W, TensorIoError> {
    let mut w = BundleWriter::new(out, bundle.header, bundle.sentences.len())?;
    for s in &bundle.sentences {
        w.write_sentence(s)?;
    }
    w.finish()
}

/// Streaming MPRB1 reader; yields sentences in file order.
pub struct BundleReader<R: Read> {
    input: R,
    offset: u64,
    header: BundleHeader,
    remaining: usize,
}

impl<R: Read> BundleReader<R> {
    pub fn new(mut input: R) -> Result<Self, TensorIoError> {
        let mut magic = [0u8; 6];
        let got = read_up_to(&mut input, &mut magic)?;
        if got < magic.len() || &magic != MAGIC {
            return Err(TensorIoError::BadMagic { offset: 0 });
        }
        let mut reader =
            BundleReader { input, offset: 6, header: BundleHeader { layers: 0, heads: 0, dim: 0 }, remaining: 0 };
        let layers = reader.u32("header")?;
        let heads = reader.u32("header")?;
        let dim = reader.u32("header")?;
        let n_sentences = reader.u32("header")?;
        if layers == 0 || heads == 0 || dim == 0 {
            return Err(TensorIoError::BadHeader { offset: 6 });
        }
        reader.header = BundleHeader { layers, heads, dim };
        reader.remaining = n_sentences as usize;
        Ok(reader)
    }

    pub fn header(&self) -> BundleHeader {
        self.header
    }

    /// Sentences not yet read.
    pub fn remaining(&self) -> usize {
        self.remaining
    }

    fn bytes(&mut self, len: usize, what: &'static str) -> Result<Vec<u8>, TensorIoError> {
        let start = self.offset;
        let mut buf = Vec::new();
        // grows with the data actually present, so a corrupt length cannot
        // force a huge allocation
        (&mut self.input).take(len as u64).read_to_end(&mut buf)?;
        self.offset += buf.len() as u64;
        if buf.len() < len {
            return Err(TensorIoError::Truncated { offset: start, what });
        }
        Ok(buf)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, TensorIoError> {
        let b = self.bytes(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, count: usize, what: &'static str) -> Result<Vec<f32>, TensorIoError> {
        let offset = self.offset;
        let len = count.checked_mul(4).ok_or(TensorIoError::Overflow { offset })?;
        let b = self.bytes(len, what)?;
        Ok(b.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }

    fn read_sentence(&mut self) -> Result<SentenceTensors, TensorIoError> {
        let record_start = self.offset;
        let id_len = self.u32("sentence id length")? as usize;
        let id_offset = self.offset;
        let id_bytes = self.bytes(id_len, "sentence id")?;
        let sentence_id = String::from_utf8(id_bytes).map_err(|_| TensorIoError::BadId { offset: id_offset })?;
        let n_words = self.u32("word count")? as usize;
        let n_tokens = self.u32("token count")? as usize;
        let spans_offset = self.offset;
        let mut spans = Vec::with_capacity(n_words.min(1 << 16));
        for _ in 0..n_words {
            let start = self.u32("span")? as usize;
            let end = self.u32("span")? as usize;
            spans.push(start..end);
        }
        check_spans(&spans, n_tokens).map_err(|detail| TensorIoError::SpanMismatch {
            offset: spans_offset,
            sentence_id: sentence_id.clone(),
            detail,
        })?;
        let flags_offset = self.offset;
        let flags = self.bytes(2, "presence flags")?;
        for &f in &flags {
            if f > 1 {
                return Err(TensorIoError::BadFlag { offset: flags_offset, value: f });
            }
        }
        let (l, h, d) = (self.header.layers as usize, self.header.heads as usize, self.header.dim as usize);
        let hidden = if flags[0] == 1 {
            let count = (l + 1)
                .checked_mul(n_tokens)
                .and_then(|x| x.checked_mul(d))
                .ok_or(TensorIoError::Overflow { offset: record_start })?;
            let data = self.f32s(count, "hidden block")?;
            Some(Array3::from_shape_vec((l + 1, n_tokens, d), data).expect("length checked"))
        } else {
            None
        };
        let attention = if flags[1] == 1 {
            let att_offset = self.offset;
            let count = l
                .checked_mul(h)
                .and_then(|x| x.checked_mul(n_tokens))
                .and_then(|x| x.checked_mul(n_tokens))
                .ok_or(TensorIoError::Overflow { offset: record_start })?;
            let data = self.f32s(count, "attention block")?;
            let att = Array4::from_shape_vec((l, h, n_tokens, n_tokens), data).expect("length checked");
            check_rows(&att, &sentence_id, att_offset)?;
            Some(att)
        } else {
            None
        };
        Ok(SentenceTensors { sentence_id, n_tokens, spans, hidden, attention })
    }
}

fn check_rows(att: &Array4<f32>, sentence_id: &str, offset: u64) -> Result<(), TensorIoError> {
    let (layers, heads, rows, _) = att.dim();
    for layer in 0..layers {
        for head in 0..heads {
            for row in 0..rows {
                let sum: f64 = att.slice(ndarray::s![layer, head, row, ..]).iter().map(|&v| f64::from(v)).sum();
                if !sum.is_finite() || (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                    return Err(TensorIoError::NotStochastic {
                        offset,
                        sentence_id: sentence_id.to_string(),
                        layer,
                        head,
                        row,
                        sum,
                    });
                }
            }
        }
    }
    Ok(())
}

fn read_up_to<R: Read>(input: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match input.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

impl<R: Read> Iterator for BundleReader<R> {
    type Item = Result<SentenceTensors, TensorIoError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        let item = self.read_sentence();
        // stop after the first error; the stream position is unreliable
        self.remaining = if item.is_ok() { self.remaining - 1 } else { 0 };
        Some(item)
    }
}

pub fn read_bundle<R: Read>(input: R) -> Result<TensorBundle, TensorIoError> {
    let reader = BundleReader::new(input)?;
    let header = reader.header();
    let sentences = reader.collect::<Result<Vec<_>, _>>()?;
    Ok(TensorBundle { header, sentences })
}
