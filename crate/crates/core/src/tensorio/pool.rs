//! Token-to-word pooling and diagonal removal.

use ndarray::{s, Array2, Array3, Array4, ArrayView2, Axis};

use crate::num::Scalar;

use super::format::SentenceTensors;
use super::TensorIoError;

/// Word-level view of a sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct WordTensors<T> {
    /// `(L+1) x n_words x D`.
    pub embeddings: Array3<T>,
    /// `L x H x n_words x n_words`.
    pub word_attention: Array4<T>,
}

/// Averages each word's token vectors, per layer.
pub fn pool_word_embeddings<T: Scalar>(st: &SentenceTensors) -> Result<Array3<T>, TensorIoError> {
    let hidden = st.hidden.as_ref().ok_or_else(|| TensorIoError::MissingHidden(st.sentence_id.clone()))?;
    let (layers, _, dim) = hidden.dim();
    let mut out = Array3::<T>::zeros((layers, st.n_words(), dim));
    for (w, span) in st.spans.iter().enumerate() {
        let scale = T::one() / T::from_usize_lossy(span.len());
        for layer in 0..layers {
            let mut target = out.slice_mut(s![layer, w, ..]);
            for t in span.clone() {
                for (acc, &v) in target.iter_mut().zip(hidden.slice(s![layer, t, ..])) {
                    *acc += T::from_f32_lossy(v);
                }
            }
            target.mapv_inplace(|v| v * scale);
        }
    }
    Ok(out)
}

/// Word attention: for source word `u` and target word `v`, the mean over
/// `u`'s tokens of the mass those tokens put on `v`'s tokens. Rows stay
/// stochastic because spans partition the tokens.
pub fn pool_word_attention<T: Scalar>(st: &SentenceTensors) -> Result<Array4<T>, TensorIoError> {
    let att = st.attention.as_ref().ok_or_else(|| TensorIoError::MissingAttention(st.sentence_id.clone()))?;
    let (layers, heads, _, _) = att.dim();
    let n = st.n_words();
    let mut out = Array4::<T>::zeros((layers, heads, n, n));
    for layer in 0..layers {
        for head in 0..heads {
            let m = att.slice(s![layer, head, .., ..]);
            for (u, src) in st.spans.iter().enumerate() {
                let scale = T::one() / T::from_usize_lossy(src.len());
                for (v, dst) in st.spans.iter().enumerate() {
                    let mut mass = T::zero();
                    for t in src.clone() {
                        for sidx in dst.clone() {
                            mass += T::from_f32_lossy(m[[t, sidx]]);
                        }
                    }
                    out[[layer, head, u, v]] = mass * scale;
                }
            }
        }
    }
    Ok(out)
}

pub fn pool_word_tensors<T: Scalar>(st: &SentenceTensors) -> Result<WordTensors<T>, TensorIoError> {
    Ok(WordTensors { embeddings: pool_word_embeddings(st)?, word_attention: pool_word_attention(st)? })
}

/// Off-diagonal mass at or below this makes a row degenerate.
pub const DEGENERATE_MASS: f64 = 1e-12;

/// Zeroes the diagonal of a row-stochastic matrix and rescales each row's
/// remaining mass to one.
pub fn zero_diag_renorm<T: Scalar>(matrix: ArrayView2<T>) -> Result<Array2<T>, TensorIoError> {
    let (rows, cols) = matrix.dim();
    if rows != cols || rows < 2 {
        return Err(TensorIoError::Shape(format!("expected a square matrix with n >= 2, got {rows}x{cols}")));
    }
    let mut out = matrix.to_owned();
    for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        row[i] = T::zero();
        let off: T = row.iter().copied().sum();
        if off.as_f64().is_nan() || off.as_f64() <= DEGENERATE_MASS {
            return Err(TensorIoError::DegenerateRow { row: i });
        }
        row.mapv_inplace(|v| v / off);
    }
    Ok(out)
}
