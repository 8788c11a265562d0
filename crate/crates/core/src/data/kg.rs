use std::collections::BTreeMap;

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triple {
    pub fn new(head: usize, relation: usize, tail: usize) -> Self {
        Triple {
            head,
            relation,
            tail,
        }
    }
}

/// One relation-only knowledge graph with dense integer ids.
///
/// The neighbor index is undirected: a triple `(h, r, t)` makes `t` a
/// neighbor of `h` and `h` a neighbor of `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct KnowledgeGraph {
    entity_count: usize,
    relation_count: usize,
    triples: Vec<Triple>,
    // CSR over (neighbor, relation), deduplicated and sorted per entity.
    rel_offsets: Vec<usize>,
    rel_entries: Vec<(usize, usize)>,
    // CSR over distinct neighbor ids.
    adj_offsets: Vec<usize>,
    adj_targets: Vec<usize>,
    entity_labels: Option<Vec<String>>,
    relation_labels: Option<Vec<String>>,
}

impl KnowledgeGraph {
    pub fn new(entity_count: usize, relation_count: usize, triples: Vec<Triple>) -> Result<Self> {
        for (i, t) in triples.iter().enumerate() {
            if t.head >= entity_count || t.tail >= entity_count {
                return Err(Error::Corpus(format!(
                    "triple {i} references entity outside 0..{entity_count}"
                )));
            }
            if t.relation >= relation_count {
                return Err(Error::Corpus(format!(
                    "triple {i} references relation outside 0..{relation_count}"
                )));
            }
        }
        let mut per_entity: Vec<Vec<(usize, usize)>> = vec![Vec::new(); entity_count];
        for t in &triples {
            per_entity[t.head].push((t.tail, t.relation));
            per_entity[t.tail].push((t.head, t.relation));
        }
        let mut rel_offsets = Vec::with_capacity(entity_count + 1);
        let mut rel_entries = Vec::new();
        let mut adj_offsets = Vec::with_capacity(entity_count + 1);
        let mut adj_targets = Vec::new();
        rel_offsets.push(0);
        adj_offsets.push(0);
        for list in &mut per_entity {
            list.sort_unstable();
            list.dedup();
            rel_entries.extend_from_slice(list);
            rel_offsets.push(rel_entries.len());
            let start = adj_targets.len();
            for &(n, _) in list.iter() {
                if adj_targets.len() == start || *adj_targets.last().unwrap() != n {
                    adj_targets.push(n);
                }
            }
            adj_offsets.push(adj_targets.len());
        }
        Ok(KnowledgeGraph {
            entity_count,
            relation_count,
            triples,
            rel_offsets,
            rel_entries,
            adj_offsets,
            adj_targets,
            entity_labels: None,
            relation_labels: None,
        })
    }

    pub fn with_labels(
        mut self,
        entity_labels: Vec<String>,
        relation_labels: Vec<String>,
    ) -> Result<Self> {
        if entity_labels.len() != self.entity_count || relation_labels.len() != self.relation_count {
            return Err(Error::Corpus(format!(
                "label tables ({} entities, {} relations) do not match graph ({}, {})",
                entity_labels.len(),
                relation_labels.len(),
                self.entity_count,
                self.relation_count
            )));
        }
        self.entity_labels = Some(entity_labels);
        self.relation_labels = Some(relation_labels);
        Ok(self)
    }

    pub fn entity_count(&self) -> usize {
        self.entity_count
    }

    pub fn relation_count(&self) -> usize {
        self.relation_count
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    /// Distinct one-hop neighbors of `e`, sorted.
    pub fn neighbors(&self, e: usize) -> &[usize] {
        &self.adj_targets[self.adj_offsets[e]..self.adj_offsets[e + 1]]
    }

    /// `(neighbor, relation)` pairs of `e`, deduplicated.
    pub fn neighbor_relations(&self, e: usize) -> &[(usize, usize)] {
        &self.rel_entries[self.rel_offsets[e]..self.rel_offsets[e + 1]]
    }

    pub fn degree(&self, e: usize) -> usize {
        self.adj_offsets[e + 1] - self.adj_offsets[e]
    }

    pub fn entity_labels(&self) -> Option<&[String]> {
        self.entity_labels.as_deref()
    }

    pub fn relation_labels(&self) -> Option<&[String]> {
        self.relation_labels.as_deref()
    }

    pub fn entity_label(&self, e: usize) -> Option<&str> {
        self.entity_labels.as_ref().map(|l| l[e].as_str())
    }

    pub fn entity_by_label(&self, label: &str) -> Option<usize> {
        self.entity_labels.as_ref()?.iter().position(|l| l == label)
    }
}

/// Number of entities per (distinct-neighbor) degree.
pub fn degree_histogram(kg: &KnowledgeGraph) -> BTreeMap<usize, usize> {
    let mut hist = BTreeMap::new();
    for e in 0..kg.entity_count() {
        *hist.entry(kg.degree(e)).or_insert(0) += 1;
    }
    hist
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_triple_histogram() {
        let kg = KnowledgeGraph::new(2, 1, vec![Triple::new(0, 0, 1)]).unwrap();
        assert_eq!(degree_histogram(&kg), BTreeMap::from([(1, 2)]));
    }

    #[test]
    fn triangle_histogram() {
        let kg = KnowledgeGraph::new(
            3,
            1,
            vec![Triple::new(0, 0, 1), Triple::new(1, 0, 2), Triple::new(2, 0, 0)],
        )
        .unwrap();
        assert_eq!(degree_histogram(&kg), BTreeMap::from([(2, 3)]));
    }

    #[test]
    fn neighbor_index_is_undirected_and_deduplicated() {
        let kg = KnowledgeGraph::new(
            4,
            2,
            vec![
                Triple::new(0, 0, 1),
                Triple::new(1, 0, 0),
                Triple::new(0, 1, 1),
                Triple::new(0, 0, 1),
            ],
        )
        .unwrap();
        assert_eq!(kg.neighbors(0), &[1]);
        assert_eq!(kg.neighbors(1), &[0]);
        assert_eq!(kg.neighbor_relations(0), &[(1, 0), (1, 1)]);
        assert_eq!(kg.degree(3), 0);
        assert_eq!(degree_histogram(&kg).values().sum::<usize>(), 4);
    }

    #[test]
    fn out_of_range_ids_rejected() {
        assert!(KnowledgeGraph::new(2, 1, vec![Triple::new(0, 0, 2)]).is_err());
        assert!(KnowledgeGraph::new(2, 1, vec![Triple::new(0, 1, 1)]).is_err());
    }
}
