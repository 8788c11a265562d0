//! Two-KG generator with a shared core and KG-private dangling entities.
//!
//! The core is a random recursive tree topped up with uniform random edges
//! until the target mean degree is reached. Each KG keeps every core edge
//! independently with probability `1 - edge_dropout`, then grows its own
//! dangling entities, each attaching `avg_degree / 2` edges to random
//! entities of the same KG. Entity ids are shuffled per KG so the
//! correspondence is only recoverable from the links.

use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AlignmentCorpus, DanglingLabels, Direction, KnowledgeGraph, Triple};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub core_size: usize,
    pub dangling_fraction_1: f64,
    pub dangling_fraction_2: f64,
    pub relation_count: usize,
    pub avg_degree: f64,
    pub edge_dropout: f64,
    pub rng_seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            core_size: 500,
            dangling_fraction_1: 0.3,
            dangling_fraction_2: 0.3,
            relation_count: 20,
            avg_degree: 4.0,
            edge_dropout: 0.05,
            rng_seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic spec: {m}")));
        if self.core_size < 2 {
            return bad("core_size must be at least 2");
        }
        if !(self.avg_degree >= 1.0) {
            return bad("avg_degree must be at least 1");
        }
        if self.relation_count == 0 {
            return bad("relation_count must be positive");
        }
        for (name, v) in [
            ("dangling_fraction_1", self.dangling_fraction_1),
            ("dangling_fraction_2", self.dangling_fraction_2),
            ("edge_dropout", self.edge_dropout),
        ] {
            if !(0.0..1.0).contains(&v) {
                return bad(&format!("{name} must lie in [0, 1)"));
            }
        }
        let n = self.core_size as f64;
        if self.core_edge_target() as f64 > n * (n - 1.0) / 2.0 {
            return bad("avg_degree too high for core_size");
        }
        Ok(())
    }

    fn core_edge_target(&self) -> usize {
        ((self.core_size as f64 * self.avg_degree / 2.0).round() as usize).max(self.core_size - 1)
    }

    /// Dangling entities needed so that they make up `fraction` of the KG.
    pub fn dangling_count(&self, fraction: f64) -> usize {
        (self.core_size as f64 * fraction / (1.0 - fraction)).round() as usize
    }
}

fn key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

struct Edge {
    a: usize,
    b: usize,
    relation: usize,
    flip: bool,
}

fn core_edges(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<Edge> {
    let n = spec.core_size;
    let mut seen = HashSet::new();
    let mut edges = Vec::new();
    let mut add = |a: usize, b: usize, rng: &mut ChaCha8Rng, edges: &mut Vec<Edge>| {
        if a != b && seen.insert(key(a, b)) {
            edges.push(Edge {
                a,
                b,
                relation: rng.random_range(0..spec.relation_count),
                flip: rng.random(),
            });
        }
    };
    for v in 1..n {
        let u = rng.random_range(0..v);
        add(u, v, rng, &mut edges);
    }
    let target = spec.core_edge_target();
    while edges.len() < target {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        add(a, b, rng, &mut edges);
    }
    edges
}

struct BuiltKg {
    kg: KnowledgeGraph,
    /// generator node → KG id
    relabel: Vec<usize>,
    dangling_nodes: Vec<usize>,
}

fn build_kg(
    spec: &SyntheticSpec,
    core: &[Edge],
    fraction: f64,
    tag: u8,
    rng: &mut ChaCha8Rng,
) -> Result<BuiltKg> {
    let n_core = spec.core_size;
    let n_dangling = spec.dangling_count(fraction);
    let total = n_core + n_dangling;
    let mut seen = HashSet::new();
    let mut raw = Vec::new();
    for e in core {
        if rng.random::<f64>() >= spec.edge_dropout {
            seen.insert(key(e.a, e.b));
            raw.push(if e.flip {
                (e.b, e.relation, e.a)
            } else {
                (e.a, e.relation, e.b)
            });
        }
    }
    let half = spec.avg_degree / 2.0;
    let base = half.floor() as usize;
    let frac = half - base as f64;
    for v in n_core..total {
        let want = (base + usize::from(rng.random::<f64>() < frac)).max(1);
        let mut placed = 0;
        let mut attempts = 0;
        while placed < want && attempts < 100 * want {
            attempts += 1;
            let u = rng.random_range(0..total);
            if u != v && seen.insert(key(u, v)) {
                let rel = rng.random_range(0..spec.relation_count);
                raw.push(if rng.random() { (u, rel, v) } else { (v, rel, u) });
                placed += 1;
            }
        }
    }
    let mut relabel: Vec<usize> = (0..total).collect();
    relabel.shuffle(rng);
    let mut triples: Vec<Triple> = raw
        .into_iter()
        .map(|(h, r, t)| Triple::new(relabel[h], r, relabel[t]))
        .collect();
    triples.sort_unstable();
    let entity_labels = (0..total)
        .map(|i| format!("http://kg{tag}.example.org/resource/E{i}"))
        .collect();
    let relation_labels = (0..spec.relation_count)
        .map(|r| format!("http://kg{tag}.example.org/property/R{r}"))
        .collect();
    let kg = KnowledgeGraph::new(total, spec.relation_count, triples)?
        .with_labels(entity_labels, relation_labels)?;
    Ok(BuiltKg {
        kg,
        dangling_nodes: (n_core..total).collect(),
        relabel,
    })
}

/// 30 / 20 / 50 split sizes.
fn split_sizes(n: usize) -> (usize, usize) {
    let train = (n as f64 * 0.3).floor() as usize;
    let valid = (n as f64 * 0.2).floor() as usize;
    (train, valid)
}

fn split_dangling(mut ids: Vec<usize>, rng: &mut ChaCha8Rng) -> (BTreeSet<usize>, BTreeSet<usize>) {
    ids.shuffle(rng);
    let (train, valid) = split_sizes(ids.len());
    let valid_set = ids[train..train + valid].iter().copied().collect();
    let test_set = ids[train + valid..].iter().copied().collect();
    (valid_set, test_set)
}

/// Deterministic for a fixed `rng_seed`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<AlignmentCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let core = core_edges(spec, &mut rng);
    let b1 = build_kg(spec, &core, spec.dangling_fraction_1, 1, &mut rng)?;
    let b2 = build_kg(spec, &core, spec.dangling_fraction_2, 2, &mut rng)?;

    let mut links: Vec<(usize, usize)> = (0..spec.core_size)
        .map(|c| (b1.relabel[c], b2.relabel[c]))
        .collect();
    links.shuffle(&mut rng);
    let (n_train, n_valid) = split_sizes(links.len());
    let test = links.split_off(n_train + n_valid);
    let valid = links.split_off(n_train);
    let train = links;

    let d1: Vec<usize> = b1.dangling_nodes.iter().map(|&v| b1.relabel[v]).collect();
    let d2: Vec<usize> = b2.dangling_nodes.iter().map(|&v| b2.relabel[v]).collect();
    let (kg1_valid, kg1_test) = split_dangling(d1, &mut rng);
    let (kg2_valid, kg2_test) = split_dangling(d2, &mut rng);
    let dangling = DanglingLabels {
        kg1_valid,
        kg1_test,
        kg2_valid,
        kg2_test,
    };
    AlignmentCorpus::new(b1.kg, b2.kg, train, valid, test, dangling, Direction::Kg1ToKg2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::degree_histogram;

    fn spec(core: usize, f1: f64, dropout: f64) -> SyntheticSpec {
        SyntheticSpec {
            core_size: core,
            dangling_fraction_1: f1,
            dangling_fraction_2: 0.0,
            edge_dropout: dropout,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn no_perturbation_gives_isomorphic_graphs() {
        let c = generate_synthetic(&spec(100, 0.0, 0.0)).unwrap();
        let all: Vec<_> = c
            .seed_train
            .iter()
            .chain(&c.links_valid)
            .chain(&c.links_test)
            .copied()
            .collect();
        assert_eq!(all.len(), 100);
        let mut map = vec![usize::MAX; c.kg1.entity_count()];
        for &(a, b) in &all {
            map[a] = b;
        }
        let mut e1: Vec<_> = c
            .kg1
            .triples()
            .iter()
            .map(|t| (map[t.head], t.relation, map[t.tail]))
            .collect();
        let mut e2: Vec<_> = c.kg2.triples().iter().map(|t| (t.head, t.relation, t.tail)).collect();
        e1.sort_unstable();
        e2.sort_unstable();
        assert_eq!(e1, e2);
    }

    #[test]
    fn dangling_count_arithmetic() {
        let c = generate_synthetic(&spec(100, 0.3, 0.0)).unwrap();
        assert_eq!(c.kg1.entity_count(), 143);
        assert_eq!(c.kg2.entity_count(), 100);
        let d = c.dangling();
        // 43 dangling: 12 train (dropped), 8 valid, 23 test
        assert_eq!(d.kg1_valid.len() + d.kg1_test.len(), 43 - 12);
    }

    #[test]
    fn deterministic_for_seed() {
        let s = spec(120, 0.2, 0.1);
        let a = generate_synthetic(&s).unwrap();
        let b = generate_synthetic(&s).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.content_hash(), b.content_hash());
        let other = generate_synthetic(&SyntheticSpec { rng_seed: 8, ..s }).unwrap();
        assert_ne!(a.content_hash(), other.content_hash());
    }

    #[test]
    fn mean_degree_tracks_target() {
        let c = generate_synthetic(&SyntheticSpec {
            edge_dropout: 0.0,
            ..SyntheticSpec::default()
        })
        .unwrap();
        for kg in [&c.kg1, &c.kg2] {
            let h = degree_histogram(kg);
            let n: usize = h.values().sum();
            assert_eq!(n, kg.entity_count());
            let mean = h.iter().map(|(d, c)| d * c).sum::<usize>() as f64 / n as f64;
            assert!((mean - 4.0).abs() <= 0.4, "mean degree {mean}");
        }
    }

    #[test]
    fn dangling_only_touch_their_own_kg() {
        let c = generate_synthetic(&SyntheticSpec::default()).unwrap();
        let d = c.dangling();
        for &e in d.kg1_test.iter().chain(&d.kg1_valid) {
            assert!(c.kg1.degree(e) >= 1);
        }
        assert!(d.kg1_test.iter().all(|&e| e < c.kg1.entity_count()));
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(generate_synthetic(&spec(1, 0.0, 0.0)).is_err());
        assert!(generate_synthetic(&spec(10, 1.0, 0.0)).is_err());
        assert!(generate_synthetic(&SyntheticSpec {
            avg_degree: 0.5,
            ..SyntheticSpec::default()
        })
        .is_err());
    }
}
