use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::metrics::{evaluate_consolidated, evaluate_relaxed, Prf, RelaxedMetrics};
use crate::data::{AlignmentCorpus, EntityPair, KnowledgeGraph};
use crate::diff::Tensor;
use crate::ggan::{encode, EncoderState};
use crate::ppr::{
    composite_similarity, csls_adjust, hos_matrix, sample_sources, score_vectors, PprConfig,
};
use crate::{par, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferConfig {
    pub use_hos: bool,
    pub hos_weight: f64,
    pub use_csls: bool,
    pub csls_k: usize,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            use_hos: true,
            hos_weight: 1.0,
            use_csls: true,
            csls_k: 10,
        }
    }
}

impl InferConfig {
    pub fn validate(&self) -> Result<()> {
        if self.csls_k == 0 {
            return Err(Error::Config("infer.csls_k must be positive".into()));
        }
        if !self.hos_weight.is_finite() {
            return Err(Error::Config("infer.hos_weight must be finite".into()));
        }
        Ok(())
    }
}

/// PPR score vector tables for the two KGs, in KG order.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTables {
    pub kg1: Tensor,
    pub kg2: Tensor,
}

impl ScoreTables {
    /// Tables from the configured sample of `seeds`.
    pub fn compute(
        kg1: &KnowledgeGraph,
        kg2: &KnowledgeGraph,
        seeds: &[EntityPair],
        cfg: &PprConfig,
    ) -> Result<Self> {
        let sources = sample_sources(seeds, cfg);
        let (kg1, kg2) = score_vectors(kg1, kg2, &sources, cfg)?;
        Ok(ScoreTables { kg1, kg2 })
    }
}

/// Composite (cosine + weighted HOS) similarity between `rows` of the first
/// side and `cols` of the second, optionally CSLS-adjusted. The CSLS
/// neighborhood is clamped to the matrix size.
pub fn similarity_matrix(
    emb: (&Tensor, &Tensor),
    tables: Option<(&Tensor, &Tensor)>,
    rows: &[usize],
    cols: &[usize],
    cfg: &InferConfig,
) -> Result<Tensor> {
    let e1 = emb.0.select_rows(rows);
    let e2 = emb.1.select_rows(cols);
    let hos = match tables {
        Some((t1, t2)) if cfg.use_hos && cfg.hos_weight != 0.0 => Some(hos_matrix(t1, t2, rows, cols)?),
        _ => None,
    };
    let sim = composite_similarity(&e1, &e2, hos.as_ref(), cfg.hos_weight)?;
    if cfg.use_csls && !rows.is_empty() && !cols.is_empty() {
        csls_adjust(&sim, cfg.csls_k.min(rows.len()).min(cols.len()))
    } else {
        Ok(sim)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceRanking {
    pub source: usize,
    /// `(candidate, score)`, best first.
    pub ranked: Vec<(usize, f64)>,
    pub best: f64,
    pub dangling: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub sources: Vec<SourceRanking>,
    pub threshold: f64,
}

impl SimilarityReport {
    /// Ranks every column for every row of `sim`; `keep` truncates the lists.
    pub fn from_matrix(
        sim: &Tensor,
        rows: &[usize],
        cols: &[usize],
        threshold: f64,
        keep: Option<usize>,
    ) -> Self {
        let sources = par::map_indices(rows.len(), cols.len(), |i| {
            let mut ranked: Vec<(usize, f64)> = cols.iter().copied().zip(sim.row(i).iter().copied()).collect();
            // Stable sort keeps candidate order on ties.
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
            if let Some(k) = keep {
                ranked.truncate(k);
            }
            let best = ranked.first().map_or(f64::NEG_INFINITY, |c| c.1);
            SourceRanking {
                source: rows[i],
                ranked,
                best,
                dangling: best < threshold,
            }
        });
        SimilarityReport { sources, threshold }
    }

    /// Re-applies the verdict rule under a new threshold.
    pub fn with_threshold(mut self, threshold: f64) -> Self {
        for s in &mut self.sources {
            s.dangling = s.best < threshold;
        }
        self.threshold = threshold;
        self
    }
}

/// Rankings of `rows` against `cols` under the full similarity pipeline.
pub fn infer(
    emb: (&Tensor, &Tensor),
    tables: Option<(&Tensor, &Tensor)>,
    rows: &[usize],
    cols: &[usize],
    cfg: &InferConfig,
    dangling_threshold: f64,
) -> Result<SimilarityReport> {
    let sim = similarity_matrix(emb, tables, rows, cols, cfg)?;
    Ok(SimilarityReport::from_matrix(&sim, rows, cols, dangling_threshold, None))
}

/// Threshold maximizing dangling-detection F1 on a labelled report.
///
/// Candidates are the lowest best-score, the midpoints between consecutive
/// distinct best-scores, and the next float above the highest. Ties go to
/// the lowest candidate.
pub fn calibrate_threshold(report: &SimilarityReport, dangling: &BTreeSet<usize>) -> Result<f64> {
    if report.sources.is_empty() {
        return Err(Error::InvalidArgument("cannot calibrate on an empty validation report".into()));
    }
    let mut scored: Vec<(f64, bool)> = report
        .sources
        .iter()
        .map(|s| (s.best, dangling.contains(&s.source)))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let actual = scored.iter().filter(|s| s.1).count();
    let lo = scored[0].0;
    let hi = scored[scored.len() - 1].0;
    let mut candidates = vec![lo];
    for w in scored.windows(2) {
        if w[1].0 > w[0].0 {
            candidates.push(0.5 * (w[0].0 + w[1].0));
        }
    }
    candidates.push(hi.next_up());

    // Everything strictly below the threshold is flagged.
    let mut best = (f64::NEG_INFINITY, lo);
    let mut idx = 0;
    let mut flagged = 0;
    let mut tp = 0;
    for &t in &candidates {
        while idx < scored.len() && scored[idx].0 < t {
            flagged += 1;
            tp += scored[idx].1 as usize;
            idx += 1;
        }
        let f1 = Prf::from_counts(tp, flagged, actual).f1;
        if f1 > best.0 {
            best = (f1, t);
        }
    }
    Ok(best.1)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DirectionEval {
    pub direction: String,
    pub relaxed: RelaxedMetrics,
    pub alignment: Prf,
    pub dangling: Prf,
    pub threshold: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub relaxed: RelaxedMetrics,
    pub alignment: Prf,
    pub dangling: Prf,
    pub config_hash: String,
    pub corpus_hash: String,
    pub per_direction: Vec<DirectionEval>,
}

fn flip(pairs: &[EntityPair], swap: bool) -> Vec<EntityPair> {
    pairs.iter().map(|&(a, b)| if swap { (b, a) } else { (a, b) }).collect()
}

/// Both evaluation protocols for every direction of `corpus.direction`.
///
/// Relaxed: test link sources ranked against test link targets.
/// Consolidated: test link sources plus test dangling entities ranked
/// against every target-side entity outside the training seeds, with the
/// dangling threshold calibrated on the validation split the same way.
pub fn evaluate(
    corpus: &AlignmentCorpus,
    state: &EncoderState,
    ppr: &PprConfig,
    cfg: &InferConfig,
) -> Result<EvalResult> {
    cfg.validate()?;
    let (z1, z2) = encode(&corpus.kg1, &corpus.kg2, state)?;
    let tables = if cfg.use_hos && cfg.hos_weight != 0.0 {
        Some(ScoreTables::compute(&corpus.kg1, &corpus.kg2, &corpus.seed_train, ppr)?)
    } else {
        None
    };
    let labels = corpus.dangling();
    let mut per_direction = Vec::new();
    for &swap in corpus.direction.passes() {
        let (emb, tabs, target_count) = if swap {
            ((&z2, &z1), tables.as_ref().map(|t| (&t.kg2, &t.kg1)), corpus.kg1.entity_count())
        } else {
            ((&z1, &z2), tables.as_ref().map(|t| (&t.kg1, &t.kg2)), corpus.kg2.entity_count())
        };
        let (dangling_valid, dangling_test) = if swap {
            (&labels.kg2_valid, &labels.kg2_test)
        } else {
            (&labels.kg1_valid, &labels.kg1_test)
        };
        let train = flip(&corpus.seed_train, swap);
        let valid = flip(&corpus.links_valid, swap);
        let test = flip(&corpus.links_test, swap);

        let rows: Vec<usize> = test.iter().map(|p| p.0).collect();
        let cols: Vec<usize> = test.iter().map(|p| p.1).collect();
        let relaxed_report = infer(emb, tabs, &rows, &cols, cfg, f64::NEG_INFINITY)?;
        let relaxed = evaluate_relaxed(&relaxed_report, &test);

        let seeded: BTreeSet<usize> = train.iter().map(|p| p.1).collect();
        let candidates: Vec<usize> = (0..target_count).filter(|e| !seeded.contains(e)).collect();
        let with_dangling = |links: &[EntityPair], extra: &BTreeSet<usize>| -> Vec<usize> {
            links.iter().map(|p| p.0).chain(extra.iter().copied()).collect()
        };
        let valid_rows = with_dangling(&valid, dangling_valid);
        let threshold = if valid_rows.is_empty() {
            f64::NEG_INFINITY
        } else {
            let report = infer(emb, tabs, &valid_rows, &candidates, cfg, f64::NEG_INFINITY)?;
            calibrate_threshold(&report, dangling_valid)?
        };
        let test_rows = with_dangling(&test, dangling_test);
        let report = infer(emb, tabs, &test_rows, &candidates, cfg, threshold)?;
        let (alignment, dangling) = evaluate_consolidated(&report, &test, dangling_test);
        per_direction.push(DirectionEval {
            direction: if swap { "kg2_to_kg1" } else { "kg1_to_kg2" }.to_string(),
            relaxed,
            alignment,
            dangling,
            threshold,
        });
    }
    Ok(average(per_direction))
}

fn average(per_direction: Vec<DirectionEval>) -> EvalResult {
    let n = per_direction.len().max(1) as f64;
    let mut out = EvalResult::default();
    for d in &per_direction {
        out.relaxed.hits1 += d.relaxed.hits1 / n;
        out.relaxed.hits10 += d.relaxed.hits10 / n;
        out.relaxed.mrr += d.relaxed.mrr / n;
        for (acc, v) in [(&mut out.alignment, &d.alignment), (&mut out.dangling, &d.dangling)] {
            acc.p += v.p / n;
            acc.r += v.r / n;
            acc.f1 += v.f1 / n;
        }
    }
    out.per_direction = per_direction;
    out
}
