use std::collections::BTreeSet;

use super::infer::{similarity_matrix, InferConfig};
use crate::data::EntityPair;
use crate::diff::Tensor;
use crate::{Error, Result};

fn argmax(vals: impl Iterator<Item = f64>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in vals.enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best
}

/// Pairs `(rows[i], cols[j])` that are each other's best match in `sim`
/// and score at least `threshold`, ordered by row. Ties resolve to the
/// lowest index.
pub fn mutual_nearest(
    sim: &Tensor,
    rows: &[usize],
    cols: &[usize],
    threshold: f64,
) -> Result<Vec<EntityPair>> {
    if sim.shape() != [rows.len(), cols.len()] {
        return Err(Error::shape(
            "mutual_nearest",
            format!("{:?} for {}x{} ids", sim.shape(), rows.len(), cols.len()),
        ));
    }
    if rows.is_empty() || cols.is_empty() {
        return Ok(Vec::new());
    }
    let col_best: Vec<usize> = (0..cols.len())
        .map(|j| argmax((0..rows.len()).map(|i| sim.get(i, j))).unwrap().0)
        .collect();
    let mut out = Vec::new();
    for i in 0..rows.len() {
        let (j, score) = argmax(sim.row(i).iter().copied()).unwrap();
        if col_best[j] == i && score >= threshold {
            out.push((rows[i], cols[j]));
        }
    }
    Ok(out)
}

/// New pseudo-seeds among entities not covered by `seeds`: mutual nearest
/// neighbors of the similarity pipeline scoring at least `threshold`.
///
/// Every returned pair is re-checked as a mutual nearest neighbor of the
/// matrix it came from; a failed check is an error.
pub fn iterative_expand(
    emb: (&Tensor, &Tensor),
    tables: Option<(&Tensor, &Tensor)>,
    seeds: &[EntityPair],
    threshold: f64,
    cfg: &InferConfig,
) -> Result<Vec<EntityPair>> {
    let used1: BTreeSet<usize> = seeds.iter().map(|p| p.0).collect();
    let used2: BTreeSet<usize> = seeds.iter().map(|p| p.1).collect();
    let rows: Vec<usize> = (0..emb.0.rows()).filter(|e| !used1.contains(e)).collect();
    let cols: Vec<usize> = (0..emb.1.rows()).filter(|e| !used2.contains(e)).collect();
    if rows.is_empty() || cols.is_empty() || threshold == f64::INFINITY {
        return Ok(Vec::new());
    }
    let sim = similarity_matrix(emb, tables, &rows, &cols, cfg)?;
    let pairs = mutual_nearest(&sim, &rows, &cols, threshold)?;
    let pos1 = |e: usize| rows.binary_search(&e).unwrap();
    let pos2 = |e: usize| cols.binary_search(&e).unwrap();
    for &(a, b) in &pairs {
        let (i, j) = (pos1(a), pos2(b));
        let v = sim.get(i, j);
        let row_ok = sim.row(i).iter().all(|&x| x <= v);
        let col_ok = (0..rows.len()).all(|k| sim.get(k, j) <= v);
        if !row_ok || !col_ok {
            return Err(Error::InvalidArgument(format!(
                "pseudo-seed ({a}, {b}) is not a mutual nearest neighbor"
            )));
        }
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_sided_match_is_excluded() {
        // Row 0 prefers col 0, but col 0 prefers row 1.
        let sim = Tensor::matrix(2, 2, vec![0.8, 0.1, 0.9, 0.95]);
        let pairs = mutual_nearest(&sim, &[10, 11], &[20, 21], f64::NEG_INFINITY).unwrap();
        assert_eq!(pairs, vec![(11, 21)]);
        assert!(mutual_nearest(&sim, &[10, 11], &[20, 21], 0.96).unwrap().is_empty());
    }

    #[test]
    fn identical_tables_yield_diagonal() {
        let e = Tensor::matrix(
            4,
            3,
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.6, 0.8, 0.0],
        );
        let cfg = InferConfig {
            use_hos: false,
            csls_k: 1,
            ..InferConfig::default()
        };
        let pairs = iterative_expand((&e, &e), None, &[(1, 1)], f64::NEG_INFINITY, &cfg).unwrap();
        assert_eq!(pairs, vec![(0, 0), (2, 2), (3, 3)]);
        assert!(iterative_expand((&e, &e), None, &[], f64::INFINITY, &cfg).unwrap().is_empty());
    }
}
