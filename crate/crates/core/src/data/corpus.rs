use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::KnowledgeGraph;
use crate::{Error, Result};

/// `(kg1 entity, kg2 entity)`
pub type EntityPair = (usize, usize);

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    Kg1ToKg2,
    Kg2ToKg1,
    Both,
}

impl Direction {
    /// Concrete directions to evaluate, as `swap` flags (false = kg1→kg2).
    pub fn passes(self) -> &'static [bool] {
        match self {
            Direction::Kg1ToKg2 => &[false],
            Direction::Kg2ToKg1 => &[true],
            Direction::Both => &[false, true],
        }
    }
}

/// Held-out dangling entities. Only evaluation code reads these.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DanglingLabels {
    pub kg1_valid: BTreeSet<usize>,
    pub kg1_test: BTreeSet<usize>,
    pub kg2_valid: BTreeSet<usize>,
    pub kg2_test: BTreeSet<usize>,
}

/// Two KGs, seed alignments and evaluation splits.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentCorpus {
    pub kg1: KnowledgeGraph,
    pub kg2: KnowledgeGraph,
    pub seed_train: Vec<EntityPair>,
    pub links_valid: Vec<EntityPair>,
    pub links_test: Vec<EntityPair>,
    dangling: DanglingLabels,
    pub direction: Direction,
}

/// What the training loop is allowed to see: graphs and seed pairs only.
#[derive(Clone, Copy, Debug)]
pub struct TrainingData<'a> {
    pub kg1: &'a KnowledgeGraph,
    pub kg2: &'a KnowledgeGraph,
    pub seeds: &'a [EntityPair],
}

impl AlignmentCorpus {
    pub fn new(
        kg1: KnowledgeGraph,
        kg2: KnowledgeGraph,
        seed_train: Vec<EntityPair>,
        links_valid: Vec<EntityPair>,
        links_test: Vec<EntityPair>,
        dangling: DanglingLabels,
        direction: Direction,
    ) -> Result<Self> {
        let corpus = AlignmentCorpus {
            kg1,
            kg2,
            seed_train,
            links_valid,
            links_test,
            dangling,
            direction,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    fn validate(&self) -> Result<()> {
        let (n1, n2) = (self.kg1.entity_count(), self.kg2.entity_count());
        let mut used1 = HashSet::new();
        let mut used2 = HashSet::new();
        for (name, split) in [
            ("train", &self.seed_train),
            ("valid", &self.links_valid),
            ("test", &self.links_test),
        ] {
            for &(a, b) in split {
                if a >= n1 || b >= n2 {
                    return Err(Error::Corpus(format!("{name} link ({a}, {b}) out of range")));
                }
                if !used1.insert(a) || !used2.insert(b) {
                    return Err(Error::Corpus(format!(
                        "{name} link ({a}, {b}) overlaps another link"
                    )));
                }
            }
        }
        let d = &self.dangling;
        for (name, set, used, n) in [
            ("kg1 valid", &d.kg1_valid, &used1, n1),
            ("kg1 test", &d.kg1_test, &used1, n1),
            ("kg2 valid", &d.kg2_valid, &used2, n2),
            ("kg2 test", &d.kg2_test, &used2, n2),
        ] {
            if let Some(e) = set.iter().find(|&&e| e >= n || used.contains(&e)) {
                return Err(Error::Corpus(format!(
                    "{name} dangling entity {e} is out of range or also linked"
                )));
            }
        }
        if !d.kg1_valid.is_disjoint(&d.kg1_test) || !d.kg2_valid.is_disjoint(&d.kg2_test) {
            return Err(Error::Corpus("dangling valid/test sets overlap".into()));
        }
        Ok(())
    }

    pub fn training_view(&self) -> TrainingData<'_> {
        TrainingData {
            kg1: &self.kg1,
            kg2: &self.kg2,
            seeds: &self.seed_train,
        }
    }

    /// Held-out dangling labels; evaluation only.
    pub fn dangling(&self) -> &DanglingLabels {
        &self.dangling
    }

    /// SHA-256 over graphs, labels and splits (direction excluded).
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for kg in [&self.kg1, &self.kg2] {
            h.update((kg.entity_count() as u64).to_le_bytes());
            h.update((kg.relation_count() as u64).to_le_bytes());
            for t in kg.triples() {
                for v in [t.head, t.relation, t.tail] {
                    h.update((v as u64).to_le_bytes());
                }
            }
            for labels in [kg.entity_labels(), kg.relation_labels()] {
                for l in labels.unwrap_or_default() {
                    h.update(l.as_bytes());
                    h.update([0]);
                }
                h.update([1]);
            }
        }
        for split in [&self.seed_train, &self.links_valid, &self.links_test] {
            for &(a, b) in split {
                h.update((a as u64).to_le_bytes());
                h.update((b as u64).to_le_bytes());
            }
            h.update([2]);
        }
        let d = &self.dangling;
        for set in [&d.kg1_valid, &d.kg1_test, &d.kg2_valid, &d.kg2_test] {
            for &e in set {
                h.update((e as u64).to_le_bytes());
            }
            h.update([3]);
        }
        hex::encode(h.finalize())
    }
}
