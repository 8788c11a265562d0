//! Personalized PageRank, seed-relative higher-order similarity, the
//! composite similarity matrix and CSLS rescaling.

use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{EntityPair, KnowledgeGraph};
use crate::diff::{kernels, read_tensor_records, write_tensor_records, Tensor};
use crate::{par, Error, Result};

/// Power iteration stops once the L1 change drops below this.
const POWER_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PprMethod {
    PowerIteration,
    #[default]
    ForwardPush,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PprConfig {
    /// Probability of stopping at each step.
    pub alpha: f64,
    pub method: PprMethod,
    /// Residual bound `r_max` for forward push.
    pub push_tolerance: f64,
    pub max_power_iters: usize,
    /// Number of seed pairs used as walk sources.
    pub seed_sample_size: usize,
    /// RNG seed for drawing the source sample.
    pub sample_seed: u64,
}

impl Default for PprConfig {
    fn default() -> Self {
        PprConfig {
            alpha: 0.5,
            method: PprMethod::ForwardPush,
            push_tolerance: 1e-6,
            max_power_iters: 1000,
            seed_sample_size: 64,
            sample_seed: 17,
        }
    }
}

impl PprConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config("ppr.alpha must lie in (0, 1)".into()));
        }
        if !(self.push_tolerance > 0.0) {
            return Err(Error::Config("ppr.push_tolerance must be positive".into()));
        }
        if self.seed_sample_size == 0 {
            return Err(Error::Config("ppr.seed_sample_size must be positive".into()));
        }
        Ok(())
    }
}

/// Undirected walk structure; isolated vertices get a self-loop.
#[derive(Clone, Debug)]
pub struct WalkGraph {
    offsets: Vec<usize>,
    targets: Vec<usize>,
}

impl WalkGraph {
    pub fn new(kg: &KnowledgeGraph) -> Self {
        let n = kg.entity_count();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut targets = Vec::new();
        offsets.push(0);
        for e in 0..n {
            let nb = kg.neighbors(e);
            if nb.is_empty() {
                targets.push(e);
            } else {
                targets.extend_from_slice(nb);
            }
            offsets.push(targets.len());
        }
        WalkGraph { offsets, targets }
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn neighbors(&self, v: usize) -> &[usize] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }

    fn volume(&self) -> usize {
        self.targets.len()
    }
}

/// `π(source, ·)` over `kg`.
pub fn ppr(kg: &KnowledgeGraph, source: usize, cfg: &PprConfig) -> Result<Vec<f64>> {
    ppr_on(&WalkGraph::new(kg), source, cfg)
}

/// Same as [`ppr`] on a prebuilt walk graph.
pub fn ppr_on(g: &WalkGraph, source: usize, cfg: &PprConfig) -> Result<Vec<f64>> {
    if source >= g.len() {
        return Err(Error::InvalidArgument(format!(
            "ppr source {source} outside 0..{}",
            g.len()
        )));
    }
    Ok(match cfg.method {
        PprMethod::PowerIteration => power_iteration(g, source, cfg.alpha, cfg.max_power_iters),
        PprMethod::ForwardPush => forward_push(g, source, cfg.alpha, cfg.push_tolerance),
    })
}

fn power_iteration(g: &WalkGraph, source: usize, alpha: f64, max_iters: usize) -> Vec<f64> {
    let n = g.len();
    let mut p = vec![0.0; n];
    p[source] = 1.0;
    let mut next = vec![0.0; n];
    for _ in 0..max_iters {
        next.iter_mut().for_each(|v| *v = 0.0);
        next[source] = alpha;
        for (v, &mass) in p.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            let nb = g.neighbors(v);
            let share = (1.0 - alpha) * mass / nb.len() as f64;
            for &u in nb {
                next[u] += share;
            }
        }
        let delta: f64 = p.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut p, &mut next);
        if delta < POWER_TOLERANCE {
            break;
        }
    }
    p
}

// Pushes while r(u) > r_max·d(u)/vol, so the leftover residual sums to at
// most r_max.
fn forward_push(g: &WalkGraph, source: usize, alpha: f64, r_max: f64) -> Vec<f64> {
    let n = g.len();
    let vol = g.volume() as f64;
    let mut p = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut queued = vec![false; n];
    let threshold = |u: usize| r_max * g.neighbors(u).len() as f64 / vol;
    r[source] = 1.0;
    let mut queue = VecDeque::from([source]);
    queued[source] = true;
    while let Some(u) = queue.pop_front() {
        queued[u] = false;
        let ru = r[u];
        if ru <= threshold(u) {
            continue;
        }
        p[u] += alpha * ru;
        r[u] = 0.0;
        let nb = g.neighbors(u);
        let share = (1.0 - alpha) * ru / nb.len() as f64;
        for &v in nb {
            r[v] += share;
            if !queued[v] && r[v] > threshold(v) {
                queued[v] = true;
                queue.push_back(v);
            }
        }
    }
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    p
}

/// Draws `min(seed_sample_size, |seeds|)` seed pairs without replacement.
pub fn sample_sources(seeds: &[EntityPair], cfg: &PprConfig) -> Vec<EntityPair> {
    let k = cfg.seed_sample_size.min(seeds.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.sample_seed);
    let mut idx = sample(&mut rng, seeds.len(), k).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| seeds[i]).collect()
}

/// Score vector tables `[n1 × k]` and `[n2 × k]`: column `c` holds
/// `π(s1_c, ·)` over `kg1` and `π(s2_c, ·)` over `kg2`.
pub fn score_vectors(
    kg1: &KnowledgeGraph,
    kg2: &KnowledgeGraph,
    sources: &[EntityPair],
    cfg: &PprConfig,
) -> Result<(Tensor, Tensor)> {
    cfg.validate()?;
    let left: Vec<usize> = sources.iter().map(|p| p.0).collect();
    let right: Vec<usize> = sources.iter().map(|p| p.1).collect();
    Ok((table(kg1, &left, cfg)?, table(kg2, &right, cfg)?))
}

fn table(kg: &KnowledgeGraph, sources: &[usize], cfg: &PprConfig) -> Result<Tensor> {
    let g = WalkGraph::new(kg);
    let columns = par::map_indices(sources.len(), g.volume().max(1) * 64, |c| {
        ppr_on(&g, sources[c], cfg)
    });
    let columns = columns.into_iter().collect::<Result<Vec<_>>>()?;
    let (n, k) = (g.len(), sources.len());
    let mut data = vec![0.0; n * k];
    for (c, col) in columns.iter().enumerate() {
        for (e, &v) in col.iter().enumerate() {
            data[e * k + c] = v;
        }
    }
    Ok(Tensor::matrix(n, k, data))
}

/// Score tables cached on disk under a key derived from the corpus hash,
/// the PPR settings and the source sample.
pub fn score_vectors_cached(
    cache_dir: &Path,
    corpus_hash: &str,
    kg1: &KnowledgeGraph,
    kg2: &KnowledgeGraph,
    sources: &[EntityPair],
    cfg: &PprConfig,
) -> Result<(Tensor, Tensor)> {
    let path = cache_path(cache_dir, corpus_hash, sources, cfg);
    if let Ok(bytes) = fs::read(&path) {
        if let Ok(mut records) = read_tensor_records(bytes.as_slice()) {
            if records.len() == 2 && records[0].0 == "kg1" && records[1].0 == "kg2" {
                let t2 = records.pop().unwrap().1;
                let t1 = records.pop().unwrap().1;
                return Ok((t1, t2));
            }
        }
    }
    let (t1, t2) = score_vectors(kg1, kg2, sources, cfg)?;
    fs::create_dir_all(cache_dir).map_err(|e| Error::io(cache_dir, e))?;
    let mut buf = Vec::new();
    write_tensor_records(&mut buf, &[("kg1", &t1), ("kg2", &t2)]).map_err(|e| Error::io(&path, e))?;
    fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
    Ok((t1, t2))
}

fn cache_path(dir: &Path, corpus_hash: &str, sources: &[EntityPair], cfg: &PprConfig) -> PathBuf {
    let mut h = Sha256::new();
    h.update(corpus_hash.as_bytes());
    h.update(serde_json::to_vec(cfg).expect("config serializes"));
    for &(a, b) in sources {
        h.update((a as u64).to_le_bytes());
        h.update((b as u64).to_le_bytes());
    }
    dir.join(format!("ppr-{}.bin", &hex::encode(h.finalize())[..16]))
}

/// `min(p, q) / max(p, q)`, zero when both are zero.
pub fn mu(p: f64, q: f64) -> Result<f64> {
    if p < 0.0 || q < 0.0 || p.is_nan() || q.is_nan() {
        return Err(Error::InvalidArgument(format!("mu of negative value ({p}, {q})")));
    }
    Ok(mu_unchecked(p, q))
}

#[inline]
fn mu_unchecked(p: f64, q: f64) -> f64 {
    let hi = p.max(q);
    if hi == 0.0 {
        0.0
    } else {
        p.min(q) / hi
    }
}

/// `Σ_k μ(t1[k], t2[k])`, in `[0, k]`.
pub fn hos_score(t1: &[f64], t2: &[f64]) -> Result<f64> {
    if t1.len() != t2.len() {
        return Err(Error::shape(
            "hos_score",
            format!("lengths {} and {}", t1.len(), t2.len()),
        ));
    }
    t1.iter().zip(t2).map(|(&p, &q)| mu(p, q)).sum()
}

/// HOS between selected rows of the two tables, divided by the vector
/// length so entries fall in `[0, 1]`. Result is `[rows1.len() × rows2.len()]`.
pub fn hos_matrix(t1: &Tensor, t2: &Tensor, rows1: &[usize], rows2: &[usize]) -> Result<Tensor> {
    if t1.cols() != t2.cols() {
        return Err(Error::shape(
            "hos_matrix",
            format!("{:?} vs {:?}", t1.shape(), t2.shape()),
        ));
    }
    let k = t1.cols();
    let m = rows2.len();
    let mut out = Tensor::zeros(&[rows1.len(), m]);
    if k == 0 {
        return Ok(out);
    }
    let norm = 1.0 / k as f64;
    par::for_each_row(out.data_mut(), m, |i, row| {
        let a = t1.row(rows1[i]);
        for (o, &j) in row.iter_mut().zip(rows2) {
            let b = t2.row(j);
            *o = a.iter().zip(b).map(|(&p, &q)| mu_unchecked(p, q)).sum::<f64>() * norm;
        }
    });
    Ok(out)
}

fn unit_rows(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    let cols = out.cols();
    par::for_each_row(out.data_mut(), cols, |_, row| {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    });
    out
}

/// Cosine similarity between every row of `emb1` and `emb2`.
pub fn cosine_matrix(emb1: &Tensor, emb2: &Tensor) -> Result<Tensor> {
    if emb1.cols() != emb2.cols() {
        return Err(Error::shape(
            "cosine_matrix",
            format!("{:?} vs {:?}", emb1.shape(), emb2.shape()),
        ));
    }
    let (a, b) = (unit_rows(emb1), unit_rows(emb2));
    let (m, k, n) = (a.rows(), a.cols(), b.rows());
    Ok(Tensor::matrix(m, n, kernels::gemm_nt(a.data(), b.data(), m, k, n)))
}

/// `cos(e1_i, e2_j) + weight · hos(i, j)`; `hos` must already be normalized
/// and shaped like the cosine matrix.
pub fn composite_similarity(
    emb1: &Tensor,
    emb2: &Tensor,
    hos: Option<&Tensor>,
    weight: f64,
) -> Result<Tensor> {
    let mut sim = cosine_matrix(emb1, emb2)?;
    if let Some(h) = hos {
        if h.shape() != sim.shape() {
            return Err(Error::shape(
                "composite_similarity",
                format!("hos {:?} vs cosine {:?}", h.shape(), sim.shape()),
            ));
        }
        if weight != 0.0 {
            sim.data_mut()
                .iter_mut()
                .zip(h.data())
                .for_each(|(s, h)| *s += weight * h);
        }
    }
    Ok(sim)
}

fn top_k_mean(vals: &mut [f64], k: usize) -> f64 {
    let len = vals.len();
    if k < len {
        vals.select_nth_unstable_by(len - k, |a, b| a.total_cmp(b));
    }
    vals[len - k..].iter().sum::<f64>() / k as f64
}

/// `2·sim(i, j) − rT(i) − rS(j)` with `rT`/`rS` the mean of the `k` largest
/// entries of row `i` / column `j`.
pub fn csls_adjust(sim: &Tensor, k: usize) -> Result<Tensor> {
    let (r, c) = (sim.rows(), sim.cols());
    if k == 0 || k > r || k > c {
        return Err(Error::InvalidArgument(format!(
            "csls k = {k} must lie in 1..={} for a {r}x{c} matrix",
            r.min(c)
        )));
    }
    let rt = par::map_indices(r, c, |i| top_k_mean(&mut sim.row(i).to_vec(), k));
    let st = sim.transpose();
    let rs = par::map_indices(c, r, |j| top_k_mean(&mut st.row(j).to_vec(), k));
    let mut out = sim.clone();
    par::for_each_row(out.data_mut(), c, |i, row| {
        for (j, v) in row.iter_mut().enumerate() {
            *v = 2.0 * *v - rt[i] - rs[j];
        }
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Triple;

    fn path(n: usize) -> KnowledgeGraph {
        let t = (0..n - 1).map(|i| Triple::new(i, 0, i + 1)).collect();
        KnowledgeGraph::new(n, 1, t).unwrap()
    }

    fn cfg(method: PprMethod, alpha: f64) -> PprConfig {
        PprConfig {
            alpha,
            method,
            ..PprConfig::default()
        }
    }

    #[test]
    fn lone_vertex_keeps_all_mass() {
        let kg = KnowledgeGraph::new(1, 1, vec![]).unwrap();
        for m in [PprMethod::PowerIteration, PprMethod::ForwardPush] {
            assert!((ppr(&kg, 0, &cfg(m, 0.15)).unwrap()[0] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_vertex_closed_form() {
        let kg = path(2);
        let expected = 0.2 / (1.0 - 0.8f64.powi(2));
        for m in [PprMethod::PowerIteration, PprMethod::ForwardPush] {
            let p = ppr(&kg, 0, &cfg(m, 0.2)).unwrap();
            assert!((p[0] - expected).abs() < 1e-6, "{m:?}: {p:?}");
            assert!((p[1] - (1.0 - expected)).abs() < 1e-6);
        }
    }

    #[test]
    fn invalid_source() {
        assert!(matches!(
            ppr(&path(3), 3, &PprConfig::default()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn mu_examples() {
        assert_eq!(mu(0.3, 0.3).unwrap(), 1.0);
        assert_eq!(mu(0.2, 0.1).unwrap(), 0.5);
        assert_eq!(mu(0.0, 0.0).unwrap(), 0.0);
        assert!(mu(-0.1, 0.2).is_err());
    }

    #[test]
    fn hos_examples() {
        assert_eq!(hos_score(&[0.2, 0.1, 0.4], &[0.2, 0.1, 0.4]).unwrap(), 3.0);
        assert_eq!(hos_score(&[0.2, 0.0], &[0.0, 0.3]).unwrap(), 0.0);
        assert!((hos_score(&[0.2, 0.1], &[0.1, 0.1]).unwrap() - 1.5).abs() < 1e-15);
        assert!(hos_score(&[0.1], &[0.1, 0.2]).is_err());
    }

    #[test]
    fn composite_examples() {
        let e = Tensor::matrix(1, 2, vec![0.6, 0.8]);
        let anti = Tensor::matrix(1, 2, vec![-0.6, -0.8]);
        let full = Tensor::matrix(1, 1, vec![1.0]);
        let none = Tensor::matrix(1, 1, vec![0.0]);
        let s = composite_similarity(&e, &e, Some(&full), 1.0).unwrap();
        assert!((s.get(0, 0) - 2.0).abs() < 1e-12);
        let s = composite_similarity(&e, &anti, Some(&none), 1.0).unwrap();
        assert!((s.get(0, 0) + 1.0).abs() < 1e-12);
        let s = composite_similarity(&e, &anti, Some(&full), 0.0).unwrap();
        assert!((s.get(0, 0) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn csls_examples() {
        let one = csls_adjust(&Tensor::matrix(1, 1, vec![0.7]), 1).unwrap();
        assert_eq!(one.get(0, 0), 0.0);
        let s = Tensor::matrix(2, 2, vec![0.9, 0.1, 0.1, 0.9]);
        let a = csls_adjust(&s, 1).unwrap();
        let expected = [0.0, -1.6, -1.6, 0.0];
        for (x, y) in a.data().iter().zip(expected) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(csls_adjust(&s, 0).is_err());
        assert!(csls_adjust(&s, 3).is_err());
    }

    #[test]
    fn sample_is_deterministic_and_bounded() {
        let seeds: Vec<EntityPair> = (0..10).map(|i| (i, i + 100)).collect();
        let c = PprConfig {
            seed_sample_size: 4,
            ..PprConfig::default()
        };
        let a = sample_sources(&seeds, &c);
        assert_eq!(a.len(), 4);
        assert_eq!(a, sample_sources(&seeds, &c));
        let big = PprConfig {
            seed_sample_size: 64,
            ..PprConfig::default()
        };
        assert_eq!(sample_sources(&seeds, &big).len(), 10);
    }

    #[test]
    fn seed_column_holds_at_least_alpha() {
        let kg = path(5);
        let (t1, t2) = score_vectors(&kg, &kg, &[(2, 2)], &PprConfig::default()).unwrap();
        assert_eq!(t1.shape(), &[5, 1]);
        assert!(t1.get(2, 0) >= PprConfig::default().alpha);
        assert!(t1.max_abs_diff(&t2) == 0.0);
    }
}
