//! Confusion matrices and support-weighted F1.

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use super::ProbeError;

/// `counts[t * k + p]` = examples of true class `t` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

impl ConfusionMatrix {
    pub fn new(y_true: &[usize], y_pred: &[usize], k: usize) -> Result<Self, ProbeError> {
        if y_true.len() != y_pred.len() {
            return Err(ProbeError::LengthMismatch { left: y_true.len(), right: y_pred.len() });
        }
        if y_true.is_empty() {
            return Err(ProbeError::Empty);
        }
        let mut counts = vec![0u64; k * k];
        for (&t, &p) in y_true.iter().zip(y_pred) {
            if t >= k || p >= k {
                return Err(ProbeError::LabelOutOfRange { label: t.max(p), k });
            }
            counts[t * k + p] += 1;
        }
        Ok(ConfusionMatrix { k, counts })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn count(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.k + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        (0..self.k).map(|p| self.count(class, p)).sum()
    }

    pub fn predicted(&self, class: usize) -> u64 {
        (0..self.k).map(|t| self.count(t, class)).sum()
    }

    /// Precision and recall are 0 when undefined; F1 is 0 when P + R = 0.
    pub fn class_metrics(&self) -> Vec<ClassMetrics> {
        (0..self.k)
            .map(|c| {
                let tp = self.count(c, c) as f64;
                let support = self.support(c);
                let predicted = self.predicted(c);
                let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
                let recall = if support == 0 { 0.0 } else { tp / support as f64 };
                let f1 = if precision + recall == 0.0 {
                    0.0
                } else {
                    2.0 * precision * recall / (precision + recall)
                };
                ClassMetrics { precision, recall, f1, support }
            })
            .collect()
    }

    pub fn weighted_f1(&self) -> f64 {
        let n = self.total() as f64;
        self.class_metrics().iter().map(|m| m.support as f64 / n * m.f1).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let correct: u64 = (0..self.k).map(|c| self.count(c, c)).sum();
        correct as f64 / self.total() as f64
    }

    /// Rows as CSV: `truth,pred_0,...,pred_{k-1}`.
    pub fn to_csv(&self, labels: &[String]) -> String {
        let name = |i: usize| labels.get(i).cloned().unwrap_or_else(|| i.to_string());
        let mut out = format!("truth,{}\n", (0..self.k).map(name).join(","));
        for t in 0..self.k {
            out.push_str(&format!("{},{}\n", name(t), (0..self.k).map(|p| self.count(t, p)).join(",")));
        }
        out
    }

    /// Relabels predicted columns: column `c` moves to `mapping[c]`.
    pub fn remap_predictions(&self, mapping: &[usize]) -> ConfusionMatrix {
        let mut counts = vec![0u64; self.k * self.k];
        for t in 0..self.k {
            for c in 0..self.k {
                counts[t * self.k + mapping[c]] += self.count(t, c);
            }
        }
        ConfusionMatrix { k: self.k, counts }
    }
}

/// Support-weighted mean of per-class F1 over the classes in either list.
pub fn weighted_f1(y_true: &[usize], y_pred: &[usize]) -> Result<f64, ProbeError> {
    let k = y_true.iter().chain(y_pred).max().map_or(0, |m| m + 1);
    Ok(ConfusionMatrix::new(y_true, y_pred, k)?.weighted_f1())
}

/// Largest number of classes for which cluster labels are matched by
/// exhaustive permutation (8! = 40320).
pub const MAX_PERMUTATION_CLASSES: usize = 8;

/// Maps cluster ids onto labels by trying every permutation and keeping the
/// one with the highest weighted F1 (first one on ties).
pub fn best_permutation(y_true: &[usize], clusters: &[usize], k: usize) -> Result<(Vec<usize>, ConfusionMatrix), ProbeError> {
    if k > MAX_PERMUTATION_CLASSES {
        return Err(ProbeError::TooManyClasses { k, max: MAX_PERMUTATION_CLASSES });
    }
    let raw = ConfusionMatrix::new(y_true, clusters, k)?;
    let mut best: Option<(f64, Vec<usize>, ConfusionMatrix)> = None;
    for perm in (0..k).permutations(k) {
        let mapped = raw.remap_predictions(&perm);
        let f1 = mapped.weighted_f1();
        if best.as_ref().is_none_or(|(b, _, _)| f1 > *b) {
            best = Some((f1, perm, mapped));
        }
    }
    let (_, perm, matrix) = best.expect("at least one permutation");
    Ok((perm, matrix))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 2, 2, 1, 0];
        assert_eq!(weighted_f1(&y, &y).unwrap(), 1.0);
    }

    #[test]
    fn majority_class_prediction() {
        let truth = [0, 0, 1, 1];
        let pred = [0, 0, 0, 0];
        // class 0: P = 0.5, R = 1, F1 = 2/3; class 1: F1 = 0
        let f1 = weighted_f1(&truth, &pred).unwrap();
        assert!((f1 - 1.0 / 3.0).abs() < 1e-15);
        let m = ConfusionMatrix::new(&truth, &pred, 2).unwrap();
        let per = m.class_metrics();
        assert!((per[0].f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(per[1].f1, 0.0);
        assert_eq!(per[1].precision, 0.0);
    }

    #[test]
    fn length_mismatch_and_empty() {
        assert!(matches!(weighted_f1(&[0, 1], &[0]), Err(ProbeError::LengthMismatch { .. })));
        assert!(matches!(weighted_f1(&[], &[]), Err(ProbeError::Empty)));
    }

    #[test]
    fn permutation_recovers_swapped_clusters() {
        let truth = [0, 0, 1, 1, 2, 2];
        let clusters = [2, 2, 0, 0, 1, 1];
        let (perm, m) = best_permutation(&truth, &clusters, 3).unwrap();
        assert_eq!(perm, vec![1, 2, 0]);
        assert_eq!(m.weighted_f1(), 1.0);
    }

    #[test]
    fn csv_layout() {
        let m = ConfusionMatrix::new(&[0, 1, 1], &[0, 0, 1], 2).unwrap();
        assert_eq!(m.to_csv(&["Sing".into(), "Plur".into()]), "truth,Sing,Plur\nSing,1,0\nPlur,1,1\n");
    }
}
