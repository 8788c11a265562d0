use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::infer::SimilarityReport;
use crate::data::EntityPair;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RelaxedMetrics {
    pub hits1: f64,
    pub hits10: f64,
    pub mrr: f64,
}

/// Precision, recall and F1; each is 0 when its denominator is empty.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub p: f64,
    pub r: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(tp: usize, predicted: usize, actual: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let (p, r) = (ratio(tp, predicted), ratio(tp, actual));
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        Prf { p, r, f1 }
    }
}

/// Hits@1, Hits@10 and MRR of each gold target in its source's ranking. A
/// gold pair whose source is missing from the report, or whose target is
/// not ranked, contributes zero.
pub fn evaluate_relaxed(report: &SimilarityReport, gold: &[EntityPair]) -> RelaxedMetrics {
    if gold.is_empty() {
        return RelaxedMetrics::default();
    }
    let by_source: HashMap<usize, usize> = report
        .sources
        .iter()
        .enumerate()
        .map(|(k, s)| (s.source, k))
        .collect();
    let mut m = RelaxedMetrics::default();
    for &(s, t) in gold {
        let rank = by_source
            .get(&s)
            .and_then(|&k| report.sources[k].ranked.iter().position(|&(c, _)| c == t));
        if let Some(r) = rank {
            let r = r + 1;
            m.hits1 += (r == 1) as u8 as f64;
            m.hits10 += (r <= 10) as u8 as f64;
            m.mrr += 1.0 / r as f64;
        }
    }
    let n = gold.len() as f64;
    RelaxedMetrics {
        hits1: m.hits1 / n,
        hits10: m.hits10 / n,
        mrr: m.mrr / n,
    }
}

/// Alignment and dangling-detection scores from the report's verdicts.
///
/// Alignment precision counts correct top-1 candidates among sources
/// predicted matchable; recall divides the same count by the number of gold
/// matchable sources.
pub fn evaluate_consolidated(
    report: &SimilarityReport,
    gold: &[EntityPair],
    gold_dangling: &BTreeSet<usize>,
) -> (Prf, Prf) {
    let target: HashMap<usize, usize> = gold.iter().copied().collect();
    let mut predicted_matchable = 0;
    let mut correct = 0;
    let mut predicted_dangling = 0;
    let mut dangling_hits = 0;
    for s in &report.sources {
        if s.dangling {
            predicted_dangling += 1;
            dangling_hits += gold_dangling.contains(&s.source) as usize;
        } else {
            predicted_matchable += 1;
            let top = s.ranked.first().map(|&(c, _)| c);
            if top.is_some() && top == target.get(&s.source).copied() {
                correct += 1;
            }
        }
    }
    let actual_dangling = report
        .sources
        .iter()
        .filter(|s| gold_dangling.contains(&s.source))
        .count();
    (
        Prf::from_counts(correct, predicted_matchable, gold.len()),
        Prf::from_counts(dangling_hits, predicted_dangling, actual_dangling),
    )
}
