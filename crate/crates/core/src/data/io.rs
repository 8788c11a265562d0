//! Tab-separated dataset directories.
//!
//! ```text
//! rel_triples_1, rel_triples_2     head<TAB>relation<TAB>tail
//! ent_links                        uri1<TAB>uri2 (every matchable pair)
//! splits/{train,valid,test}_links  subsets of ent_links
//! splits/{valid,test}_dangling_{1,2}   one URI per line (optional)
//! entities_{1,2}, relations_{1,2}  optional id-order tables written by
//!                                  write_corpus so isolated entities and
//!                                  id order survive a round trip
//! ```

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use super::{AlignmentCorpus, DanglingLabels, Direction, EntityPair, KnowledgeGraph, Triple};
use crate::{Error, Result};

fn read_text(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Non-blank lines split on tabs, with 1-based line numbers.
fn records(path: &Path, text: &str, fields: usize) -> Result<Vec<(usize, Vec<String>)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<String> = line.split('\t').map(str::to_owned).collect();
        if parts.len() != fields || parts.iter().any(|p| p.is_empty()) {
            return Err(Error::Parse {
                file: path.to_path_buf(),
                line: i + 1,
                msg: format!("expected {fields} non-empty tab-separated fields, got {}", parts.len()),
            });
        }
        out.push((i + 1, parts));
    }
    Ok(out)
}

struct Interner {
    ids: HashMap<String, usize>,
    labels: Vec<String>,
    frozen: bool,
}

impl Interner {
    fn new() -> Self {
        Interner {
            ids: HashMap::new(),
            labels: Vec::new(),
            frozen: false,
        }
    }

    fn from_table(path: &Path) -> Result<Option<Self>> {
        if !path.exists() {
            return Ok(None);
        }
        let text = read_text(path)?;
        let mut it = Interner::new();
        for (line, rec) in records(path, &text, 1)? {
            let uri = rec.into_iter().next().unwrap();
            if it.ids.insert(uri.clone(), it.labels.len()).is_some() {
                return Err(Error::Parse {
                    file: path.to_path_buf(),
                    line,
                    msg: format!("duplicate entry {uri}"),
                });
            }
            it.labels.push(uri);
        }
        it.frozen = true;
        Ok(Some(it))
    }

    fn intern(&mut self, s: &str, file: &Path, line: usize) -> Result<usize> {
        if let Some(&id) = self.ids.get(s) {
            return Ok(id);
        }
        if self.frozen {
            return Err(Error::Parse {
                file: file.to_path_buf(),
                line,
                msg: format!("{s} is not listed in the id table"),
            });
        }
        let id = self.labels.len();
        self.ids.insert(s.to_owned(), id);
        self.labels.push(s.to_owned());
        Ok(id)
    }
}

fn load_kg(root: &Path, k: u8) -> Result<(KnowledgeGraph, HashMap<String, usize>)> {
    let path = root.join(format!("rel_triples_{k}"));
    let text = read_text(&path)?;
    let mut ents = Interner::from_table(&root.join(format!("entities_{k}")))?.unwrap_or_else(Interner::new);
    let mut rels = Interner::from_table(&root.join(format!("relations_{k}")))?.unwrap_or_else(Interner::new);
    let mut triples = Vec::new();
    for (line, rec) in records(&path, &text, 3)? {
        let h = ents.intern(&rec[0], &path, line)?;
        let r = rels.intern(&rec[1], &path, line)?;
        let t = ents.intern(&rec[2], &path, line)?;
        triples.push(Triple::new(h, r, t));
    }
    let kg = KnowledgeGraph::new(ents.labels.len(), rels.labels.len(), triples)?
        .with_labels(ents.labels, rels.labels)?;
    Ok((kg, ents.ids))
}

fn load_pairs(
    path: &Path,
    ids1: &HashMap<String, usize>,
    ids2: &HashMap<String, usize>,
) -> Result<Vec<EntityPair>> {
    let text = read_text(path)?;
    records(path, &text, 2)?
        .into_iter()
        .map(|(line, rec)| {
            let a = ids1.get(&rec[0]).ok_or_else(|| {
                Error::Corpus(format!(
                    "{}:{line}: {} is absent from rel_triples_1",
                    path.display(),
                    rec[0]
                ))
            })?;
            let b = ids2.get(&rec[1]).ok_or_else(|| {
                Error::Corpus(format!(
                    "{}:{line}: {} is absent from rel_triples_2",
                    path.display(),
                    rec[1]
                ))
            })?;
            Ok((*a, *b))
        })
        .collect()
}

fn load_dangling(splits: &Path, split: &str, k: u8, ids: &HashMap<String, usize>) -> Result<BTreeSet<usize>> {
    let primary = splits.join(format!("{split}_dangling_{k}"));
    let alias = splits.join(format!("{split}_unlinked_ent{k}"));
    let path = if primary.exists() {
        primary
    } else if alias.exists() {
        alias
    } else {
        return Ok(BTreeSet::new());
    };
    let text = read_text(&path)?;
    let mut out = BTreeSet::new();
    for (line, rec) in records(&path, &text, 1)? {
        let id = ids.get(&rec[0]).ok_or_else(|| {
            Error::Corpus(format!(
                "{}:{line}: {} is absent from rel_triples_{k}",
                path.display(),
                rec[0]
            ))
        })?;
        out.insert(*id);
    }
    Ok(out)
}

/// Loads a dataset directory. Ids are assigned densely per KG, in the order of
/// `entities_k` when present and first appearance in `rel_triples_k`
/// otherwise. Splits are used exactly as given.
pub fn load_corpus(root: impl AsRef<Path>, direction: Direction) -> Result<AlignmentCorpus> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::MissingFile(root.to_path_buf()));
    }
    let (kg1, ids1) = load_kg(root, 1)?;
    let (kg2, ids2) = load_kg(root, 2)?;
    let all_links: HashSet<EntityPair> = load_pairs(&root.join("ent_links"), &ids1, &ids2)?
        .into_iter()
        .collect();
    let splits = root.join("splits");
    let mut split_links = Vec::new();
    for name in ["train_links", "valid_links", "test_links"] {
        let path = splits.join(name);
        let pairs = load_pairs(&path, &ids1, &ids2)?;
        if let Some(p) = pairs.iter().find(|p| !all_links.contains(p)) {
            return Err(Error::Corpus(format!(
                "{}: pair {:?} is not in ent_links",
                path.display(),
                p
            )));
        }
        split_links.push(pairs);
    }
    let dangling = DanglingLabels {
        kg1_valid: load_dangling(&splits, "valid", 1, &ids1)?,
        kg1_test: load_dangling(&splits, "test", 1, &ids1)?,
        kg2_valid: load_dangling(&splits, "valid", 2, &ids2)?,
        kg2_test: load_dangling(&splits, "test", 2, &ids2)?,
    };
    let test = split_links.pop().unwrap();
    let valid = split_links.pop().unwrap();
    let train = split_links.pop().unwrap();
    AlignmentCorpus::new(kg1, kg2, train, valid, test, dangling, direction)
}

fn labels_or_default(labels: Option<&[String]>, n: usize, prefix: &str) -> Vec<String> {
    match labels {
        Some(l) => l.to_vec(),
        None => (0..n).map(|i| format!("{prefix}{i}")).collect(),
    }
}

fn write_lines(path: PathBuf, lines: impl IntoIterator<Item = String>) -> Result<()> {
    let mut body = String::new();
    for l in lines {
        body.push_str(&l);
        body.push('\n');
    }
    fs::write(&path, body).map_err(|e| Error::io(path, e))
}

/// Writes `corpus` in the layout [`load_corpus`] reads.
pub fn write_corpus(corpus: &AlignmentCorpus, root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    let splits = root.join("splits");
    fs::create_dir_all(&splits).map_err(|e| Error::io(&splits, e))?;
    let mut ent_labels = Vec::new();
    for (k, kg) in [(1, &corpus.kg1), (2, &corpus.kg2)] {
        let ents = labels_or_default(kg.entity_labels(), kg.entity_count(), &format!("kg{k}:e"));
        let rels = labels_or_default(kg.relation_labels(), kg.relation_count(), &format!("kg{k}:r"));
        write_lines(
            root.join(format!("rel_triples_{k}")),
            kg.triples()
                .iter()
                .map(|t| format!("{}\t{}\t{}", ents[t.head], rels[t.relation], ents[t.tail])),
        )?;
        write_lines(root.join(format!("entities_{k}")), ents.iter().cloned())?;
        write_lines(root.join(format!("relations_{k}")), rels)?;
        ent_labels.push(ents);
    }
    let pair_line = |&(a, b): &EntityPair| format!("{}\t{}", ent_labels[0][a], ent_labels[1][b]);
    write_lines(
        root.join("ent_links"),
        corpus
            .seed_train
            .iter()
            .chain(&corpus.links_valid)
            .chain(&corpus.links_test)
            .map(pair_line),
    )?;
    write_lines(splits.join("train_links"), corpus.seed_train.iter().map(pair_line))?;
    write_lines(splits.join("valid_links"), corpus.links_valid.iter().map(pair_line))?;
    write_lines(splits.join("test_links"), corpus.links_test.iter().map(pair_line))?;
    let d = corpus.dangling();
    for (name, set, k) in [
        ("valid_dangling_1", &d.kg1_valid, 0),
        ("test_dangling_1", &d.kg1_test, 0),
        ("valid_dangling_2", &d.kg2_valid, 1),
        ("test_dangling_2", &d.kg2_test, 1),
    ] {
        write_lines(splits.join(name), set.iter().map(|&e| ent_labels[k][e].clone()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) {
        let p = dir.join(name);
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(p, body).unwrap();
    }

    fn minimal(dir: &Path) {
        write(dir, "rel_triples_1", "a\tr\tb\nb\tr\tc\na\ts\tc\n");
        write(dir, "rel_triples_2", "x\tq\ty\ny\tq\tz\n");
        write(dir, "ent_links", "a\tx\nb\ty\nc\tz\n");
        write(dir, "splits/train_links", "a\tx\n");
        write(dir, "splits/valid_links", "b\ty\n");
        write(dir, "splits/test_links", "c\tz\n");
    }

    #[test]
    fn counts_distinct_uris() {
        let dir = tempfile::tempdir().unwrap();
        minimal(dir.path());
        let c = load_corpus(dir.path(), Direction::Kg1ToKg2).unwrap();
        assert_eq!(c.kg1.entity_count(), 3);
        assert_eq!(c.kg1.relation_count(), 2);
        assert_eq!(c.kg1.triples().len(), 3);
        assert_eq!(c.seed_train, vec![(0, 0)]);
    }

    #[test]
    fn empty_triples_give_empty_graph() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "rel_triples_1", "");
        write(dir.path(), "rel_triples_2", "");
        write(dir.path(), "ent_links", "");
        for s in ["train", "valid", "test"] {
            write(dir.path(), &format!("splits/{s}_links"), "");
        }
        let c = load_corpus(dir.path(), Direction::Kg1ToKg2).unwrap();
        assert_eq!(c.kg1.entity_count(), 0);
        assert_eq!(c.kg1.triples().len(), 0);
    }

    #[test]
    fn missing_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        minimal(dir.path());
        fs::remove_file(dir.path().join("ent_links")).unwrap();
        let err = load_corpus(dir.path(), Direction::Kg1ToKg2).unwrap_err();
        assert!(matches!(&err, Error::MissingFile(p) if p.ends_with("ent_links")));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        minimal(dir.path());
        write(dir.path(), "rel_triples_2", "x\tq\ty\ny\tq\n");
        match load_corpus(dir.path(), Direction::Kg1ToKg2).unwrap_err() {
            Error::Parse { line, file, .. } => {
                assert_eq!(line, 2);
                assert!(file.ends_with("rel_triples_2"));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn link_uri_must_exist() {
        let dir = tempfile::tempdir().unwrap();
        minimal(dir.path());
        write(dir.path(), "ent_links", "a\tx\nb\ty\nc\tz\nq\tz\n");
        let err = load_corpus(dir.path(), Direction::Kg1ToKg2).unwrap_err();
        assert!(err.to_string().contains("absent"), "{err}");
    }

    #[test]
    fn dangling_files_are_optional_and_loaded() {
        let dir = tempfile::tempdir().unwrap();
        minimal(dir.path());
        write(dir.path(), "rel_triples_1", "a\tr\tb\nb\tr\tc\na\ts\tc\nc\tr\td\n");
        write(dir.path(), "splits/test_dangling_1", "d\n");
        let c = load_corpus(dir.path(), Direction::Kg1ToKg2).unwrap();
        assert_eq!(c.dangling().kg1_test, BTreeSet::from([3]));
        assert!(c.dangling().kg2_test.is_empty());
    }
}
