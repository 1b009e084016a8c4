use std::collections::BTreeMap;

use super::classification::ClassificationExample;
use super::schema::Feature;
use super::MorphError;

/// Share of examples whose form realizes two or more values.
#[derive(Debug, Clone, PartialEq)]
pub struct AmbiguityStats {
    /// Pooled over every feature's examples.
    pub pct_ambiguous: f64,
    pub per_feature: BTreeMap<Feature, f64>,
}

fn fraction(examples: &[ClassificationExample]) -> Option<f64> {
    if examples.is_empty() {
        return None;
    }
    let ambiguous = examples.iter().filter(|e| e.ambiguity_degree >= 2).count();
    Some(ambiguous as f64 / examples.len() as f64)
}

pub fn ambiguity_stats(
    datasets: &BTreeMap<Feature, Vec<ClassificationExample>>,
) -> Result<AmbiguityStats, MorphError> {
    let mut per_feature = BTreeMap::new();
    let mut total = 0usize;
    let mut ambiguous = 0usize;
    for (feature, examples) in datasets {
        let pct = fraction(examples).ok_or(MorphError::EmptyDataset(Some(*feature)))?;
        per_feature.insert(*feature, pct);
        total += examples.len();
        ambiguous += examples.iter().filter(|e| e.ambiguity_degree >= 2).count();
    }
    if total == 0 {
        return Err(MorphError::EmptyDataset(None));
    }
    Ok(AmbiguityStats { pct_ambiguous: ambiguous as f64 / total as f64, per_feature })
}
