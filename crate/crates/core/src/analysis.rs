//! Correlation statistics and comparison against random-weight baselines.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use itertools::Itertools;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::morphdata::Feature;
use crate::num::Scalar;
use crate::probes::{ProbeTask, ResultRecord};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least 3 paired observations, got {0}")]
    TooFewPoints(usize),
    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),
    #[error("exact permutation p-values are limited to n <= {max}, got {n}")]
    TooManyForPermutation { n: usize, max: usize },
    #[error("result sets differ; missing cells: {}", .0.join("; "))]
    CellMismatch(Vec<String>),
    #[error("report file: {0}")]
    Format(String),
}

/// A correlation coefficient with its two-sided p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation<T> {
    pub coefficient: T,
    pub p_value: T,
    pub n: usize,
}

fn check_pair<T>(x: &[T], y: &[T]) -> Result<(), AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::LengthMismatch { left: x.len(), right: y.len() });
    }
    if x.len() < 3 {
        return Err(AnalysisError::TooFewPoints(x.len()));
    }
    Ok(())
}

fn product_moment<T: Scalar>(x: &[T], y: &[T]) -> Result<T, AnalysisError> {
    let n = T::from_usize_lossy(x.len());
    let mx = x.iter().copied().sum::<T>() / n;
    let my = y.iter().copied().sum::<T>() / n;
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= T::zero() {
        return Err(AnalysisError::ZeroVariance("x"));
    }
    if syy <= T::zero() {
        return Err(AnalysisError::ZeroVariance("y"));
    }
    let r = sxy / (sxx * syy).sqrt();
    Ok(r.max(-T::one()).min(T::one()))
}

/// Two-sided p-value of `r` from the t-distribution with n - 2 degrees of
/// freedom.
pub fn t_approx_p(r: f64, n: usize) -> f64 {
    let dof = (n - 2) as f64;
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let t = r * (dof / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, dof).expect("positive degrees of freedom");
    (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
}

/// Pearson product-moment correlation.
pub fn pearson_r<T: Scalar>(x: &[T], y: &[T]) -> Result<Correlation<T>, AnalysisError> {
    check_pair(x, y)?;
    let r = product_moment(x, y)?;
    Ok(Correlation { coefficient: r, p_value: T::lit(t_approx_p(r.as_f64(), x.len())), n: x.len() })
}

/// Fractional ranks, 1-based; tied values share the mean of their ranks.
pub fn fractional_ranks<T: Scalar>(values: &[T]) -> Vec<T> {
    let order: Vec<usize> = (0..values.len())
        .sorted_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("comparable values"))
        .collect();
    let mut ranks = vec![T::zero(); values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let rank = T::from_usize_lossy(start + 1 + end) / T::lit(2.0);
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation: Pearson on fractional ranks.
pub fn spearman_rho<T: Scalar>(x: &[T], y: &[T]) -> Result<Correlation<T>, AnalysisError> {
    check_pair(x, y)?;
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(AnalysisError::ZeroVariance("ranks (NaN input)"));
    }
    pearson_r(&fractional_ranks(x), &fractional_ranks(y))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorrelationKind {
    Pearson,
    Spearman,
}

/// Largest sample size for the exhaustive permutation test (8! = 40320).
pub const MAX_PERMUTATION_N: usize = 8;

/// Exact two-sided permutation p-value: the share of orderings of `y` whose
/// coefficient is at least as extreme as the observed one.
pub fn permutation_p(x: &[f64], y: &[f64], kind: CorrelationKind) -> Result<f64, AnalysisError> {
    check_pair(x, y)?;
    if x.len() > MAX_PERMUTATION_N {
        return Err(AnalysisError::TooManyForPermutation { n: x.len(), max: MAX_PERMUTATION_N });
    }
    let (x, y) = match kind {
        CorrelationKind::Pearson => (x.to_vec(), y.to_vec()),
        CorrelationKind::Spearman => (fractional_ranks(x), fractional_ranks(y)),
    };
    let observed = product_moment(&x, &y)?.abs();
    let mut extreme = 0usize;
    let mut total = 0usize;
    for perm in (0..y.len()).permutations(y.len()) {
        let shuffled: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        if product_moment(&x, &shuffled)?.abs() >= observed - 1e-12 {
            extreme += 1;
        }
        total += 1;
    }
    Ok(extreme as f64 / total as f64)
}

/// What the per-feature performance is correlated against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationTarget {
    AmbiguityPct,
    FeatureLength,
}

impl fmt::Display for CorrelationTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorrelationTarget::AmbiguityPct => "ambiguity_pct",
            CorrelationTarget::FeatureLength => "feature_length",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub language: String,
    pub target: CorrelationTarget,
    pub spearman: f64,
    pub p_s: f64,
    pub pearson: f64,
    pub p_p: f64,
    pub n: usize,
}

/// Correlates per-feature performance with a per-feature target over the
/// features present in both maps.
pub fn correlation_report(
    language: &str,
    target: CorrelationTarget,
    performance: &BTreeMap<Feature, f64>,
    target_values: &BTreeMap<Feature, f64>,
    exact: bool,
) -> Result<CorrelationReport, AnalysisError> {
    let (x, y): (Vec<f64>, Vec<f64>) =
        performance.iter().filter_map(|(f, &p)| target_values.get(f).map(|&t| (p, t))).unzip();
    let s = spearman_rho(&x, &y)?;
    let p = pearson_r(&x, &y)?;
    let (p_s, p_p) = if exact && x.len() <= MAX_PERMUTATION_N {
        (permutation_p(&x, &y, CorrelationKind::Spearman)?, permutation_p(&x, &y, CorrelationKind::Pearson)?)
    } else {
        (s.p_value, p.p_value)
    };
    Ok(CorrelationReport {
        language: language.to_string(),
        target,
        spearman: s.coefficient,
        p_s,
        pearson: p.coefficient,
        p_p,
        n: x.len(),
    })
}

/// Per-feature mean over layers of the linear probe's weighted F1 (cells
/// without an ambiguity restriction only).
pub fn linear_layer_averages(records: &[ResultRecord]) -> BTreeMap<Feature, f64> {
    let mut groups: BTreeMap<Feature, Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.task == ProbeTask::Linear && r.ambiguity.is_none()) {
        groups.entry(r.feature).or_default().push(r.weighted_f1);
    }
    groups.into_iter().map(|(f, v)| (f, v.iter().sum::<f64>() / v.len() as f64)).collect()
}

/// Writes `language,target,spearman,p_s,pearson,p_p,n`.
pub fn write_correlation_csv<W: Write>(out: W, reports: &[CorrelationReport]) -> Result<(), AnalysisError> {
    let err = |e: csv::Error| AnalysisError::Format(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["language", "target", "spearman", "p_s", "pearson", "p_p", "n"]).map_err(err)?;
    for r in reports {
        w.write_record([
            r.language.clone(),
            r.target.to_string(),
            r.spearman.to_string(),
            r.p_s.to_string(),
            r.pearson.to_string(),
            r.p_p.to_string(),
            r.n.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| AnalysisError::Format(e.to_string()))
}

/// Pretrained vs random-weight score for one cell; `layer` is `None` for the
/// layer-averaged rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineCell {
    pub feature: Feature,
    pub task: ProbeTask,
    pub layer: Option<usize>,
    pub pretrained: f64,
    pub random: f64,
    pub delta: f64,
    pub at_or_below_baseline: bool,
}

impl BaselineCell {
    fn new(feature: Feature, task: ProbeTask, layer: Option<usize>, pretrained: f64, random: f64) -> Self {
        let delta = pretrained - random;
        BaselineCell { feature, task, layer, pretrained, random, delta, at_or_below_baseline: delta <= 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineComparison {
    pub cells: Vec<BaselineCell>,
    /// Per (feature, task), averaged over layers.
    pub averages: Vec<BaselineCell>,
}

impl BaselineComparison {
    pub fn flagged(&self) -> impl Iterator<Item = &BaselineCell> {
        self.cells.iter().filter(|c| c.at_or_below_baseline)
    }
}

type CellKey = (Feature, ProbeTask, usize, Option<Vec<usize>>);

fn key_of(r: &ResultRecord) -> CellKey {
    (r.feature, r.task, r.layer, r.ambiguity.clone())
}

fn describe(k: &CellKey) -> String {
    let mut s = format!("{}/{}/layer {}", k.0, k.1, k.2);
    if let Some(d) = &k.3 {
        s.push_str(&format!("/ambiguity {}", d.iter().join(" ")));
    }
    s
}

/// Subtracts random-weight scores from pretrained ones cell by cell. Only
/// unrestricted cells (no ambiguity filter) take part in the averages.
pub fn compare_baseline(pretrained: &[ResultRecord], random: &[ResultRecord]) -> Result<BaselineComparison, AnalysisError> {
    let a: BTreeMap<CellKey, f64> = pretrained.iter().map(|r| (key_of(r), r.weighted_f1)).collect();
    let b: BTreeMap<CellKey, f64> = random.iter().map(|r| (key_of(r), r.weighted_f1)).collect();
    let keys_a: BTreeSet<&CellKey> = a.keys().collect();
    let keys_b: BTreeSet<&CellKey> = b.keys().collect();
    let mut missing: Vec<String> = keys_a
        .difference(&keys_b)
        .map(|k| format!("{} (random)", describe(k)))
        .chain(keys_b.difference(&keys_a).map(|k| format!("{} (pretrained)", describe(k))))
        .collect();
    if !missing.is_empty() {
        missing.sort();
        return Err(AnalysisError::CellMismatch(missing));
    }
    let mut cells = Vec::with_capacity(a.len());
    let mut groups: BTreeMap<(Feature, ProbeTask), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (key, &p) in &a {
        let r = b[key];
        cells.push(BaselineCell::new(key.0, key.1, Some(key.2), p, r));
        if key.3.is_none() {
            let g = groups.entry((key.0, key.1)).or_default();
            g.0.push(p);
            g.1.push(r);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let averages = groups
        .into_iter()
        .map(|((f, t), (p, r))| BaselineCell::new(f, t, None, mean(&p), mean(&r)))
        .collect();
    Ok(BaselineComparison { cells, averages })
}

/// Writes `feature,task,layer,pretrained,random,delta,at_or_below_baseline`;
/// layer-averaged rows carry `avg` in the layer column.
pub fn write_baseline_csv<W: Write>(out: W, comparison: &BaselineComparison) -> Result<(), AnalysisError> {
    let err = |e: csv::Error| AnalysisError::Format(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["feature", "task", "layer", "pretrained", "random", "delta", "at_or_below_baseline"])
        .map_err(err)?;
    for c in comparison.cells.iter().chain(&comparison.averages) {
        w.write_record([
            c.feature.to_string(),
            c.task.to_string(),
            c.layer.map_or_else(|| "avg".to_string(), |l| l.to_string()),
            c.pretrained.to_string(),
            c.random.to_string(),
            c.delta.to_string(),
            c.at_or_below_baseline.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| AnalysisError::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_linear_relations() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let up: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let down: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(pearson_r(&x, &up).unwrap().coefficient, 1.0);
        assert_eq!(pearson_r(&x, &down).unwrap().coefficient, -1.0);
        assert_eq!(pearson_r(&x, &up).unwrap().p_value, 0.0);
    }

    #[test]
    fn monotone_gives_unit_rho() {
        let x = [0.1, 0.5, 0.2, 3.0, 1.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| v.exp() * 10.0).collect();
        assert_eq!(spearman_rho(&x, &y).unwrap().coefficient, 1.0);
    }

    #[test]
    fn tied_ranks() {
        assert_eq!(fractional_ranks(&[1.0, 1.0, 2.0]), vec![1.5, 1.5, 3.0]);
        assert_eq!(fractional_ranks(&[3.0, 1.0, 3.0, 3.0]), vec![3.0, 1.0, 3.0, 3.0]);
    }

    #[test]
    fn errors() {
        assert!(matches!(pearson_r(&[1.0, 2.0], &[1.0, 2.0]), Err(AnalysisError::TooFewPoints(2))));
        assert!(matches!(pearson_r(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(AnalysisError::ZeroVariance("x"))));
        assert!(matches!(spearman_rho(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]), Err(AnalysisError::ZeroVariance("y"))));
        assert!(matches!(pearson_r(&[1.0, 2.0, 3.0], &[1.0]), Err(AnalysisError::LengthMismatch { .. })));
    }

    #[test]
    fn t_approx_reference_value() {
        // r = 0.5, n = 10: t = 0.5 * sqrt(8 / 0.75) = 1.63299, two-sided p = 0.1411
        assert!((t_approx_p(0.5, 10) - 0.14111).abs() < 1e-4);
    }

    #[test]
    fn p_decreases_with_strength() {
        let ps: Vec<f64> = [0.1, 0.4, 0.7, 0.95].iter().map(|&r| t_approx_p(r, 6)).collect();
        assert!(ps.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn permutation_p_of_perfect_ranks() {
        // only the identity and the reversal reach |rho| = 1 among 5! orderings
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let p = permutation_p(&x, &x, CorrelationKind::Spearman).unwrap();
        assert!((p - 2.0 / 120.0).abs() < 1e-15);
        assert!(permutation_p(&[0.0; 9], &[0.0; 9], CorrelationKind::Pearson).is_err());
    }

    fn rec(feature: Feature, task: ProbeTask, layer: usize, f1: f64) -> ResultRecord {
        ResultRecord {
            language: "en".into(),
            feature,
            task,
            layer,
            weighted_f1: f1,
            n_train: 10,
            n_test: 2,
            ambiguity: None,
        }
    }

    #[test]
    fn baseline_deltas_and_flags() {
        let pre = vec![rec(Feature::Number, ProbeTask::Linear, 0, 0.9), rec(Feature::Number, ProbeTask::Linear, 1, 0.7)];
        let rnd = vec![rec(Feature::Number, ProbeTask::Linear, 0, 0.6), rec(Feature::Number, ProbeTask::Linear, 1, 0.75)];
        let cmp = compare_baseline(&pre, &rnd).unwrap();
        assert_eq!(cmp.flagged().count(), 1);
        assert!((cmp.averages[0].delta - 0.125).abs() < 1e-12);

        let same = compare_baseline(&pre, &pre).unwrap();
        assert!(same.cells.iter().all(|c| c.delta == 0.0 && c.at_or_below_baseline));
    }

    #[test]
    fn baseline_cell_mismatch() {
        let pre = vec![rec(Feature::Number, ProbeTask::Linear, 0, 0.9)];
        let rnd = vec![rec(Feature::Number, ProbeTask::Nn, 0, 0.6)];
        match compare_baseline(&pre, &rnd) {
            Err(AnalysisError::CellMismatch(cells)) => assert_eq!(cells.len(), 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn report_aligns_features() {
        let perf = BTreeMap::from([(Feature::Mood, 0.9), (Feature::Number, 0.95), (Feature::Tense, 0.99), (Feature::Case, 0.5)]);
        let target = BTreeMap::from([(Feature::Mood, 0.3), (Feature::Number, 0.2), (Feature::Tense, 0.1)]);
        let r = correlation_report("en", CorrelationTarget::AmbiguityPct, &perf, &target, false).unwrap();
        assert_eq!(r.n, 3);
        assert_eq!(r.spearman, -1.0);
        let mut buf = Vec::new();
        write_correlation_csv(&mut buf, &[r]).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("language,target,spearman,p_s,pearson,p_p,n\nen,ambiguity_pct,-1,"));
    }
}
