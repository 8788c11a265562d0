use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use structalign::data::{generate_synthetic, KnowledgeGraph, SyntheticSpec, Triple};
use structalign::diff::Tensor;
use structalign::ppr::{
    csls_adjust, hos_score, mu, ppr, sample_sources, score_vectors, score_vectors_cached,
    PprConfig, PprMethod,
};

fn random_graph(rng: &mut ChaCha8Rng, n: usize, edges: usize) -> Vec<Triple> {
    (0..edges)
        .map(|_| Triple::new(rng.random_range(0..n), 0, rng.random_range(0..n)))
        .collect()
}

fn with_method(method: PprMethod) -> PprConfig {
    PprConfig {
        method,
        ..PprConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn push_agrees_with_power_iteration(seed in any::<u64>(), n in 2usize..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let edges = rng.random_range(n / 2..3 * n);
        let kg = KnowledgeGraph::new(n, 1, random_graph(&mut rng, n, edges)).unwrap();
        let s = rng.random_range(0..n);
        let exact = ppr(&kg, s, &with_method(PprMethod::PowerIteration)).unwrap();
        let push = ppr(&kg, s, &with_method(PprMethod::ForwardPush)).unwrap();
        let total: f64 = exact.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-8);
        prop_assert!((push.iter().sum::<f64>() - 1.0).abs() < 1e-8);
        for (a, b) in exact.iter().zip(&push) {
            prop_assert!((a - b).abs() <= 1e-6, "{} vs {}", a, b);
            prop_assert!((0.0..=1.0).contains(b));
        }
    }

    #[test]
    fn invariant_under_relabeling(seed in any::<u64>(), n in 2usize..200) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let triples = random_graph(&mut rng, n, 2 * n);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let relabeled = triples
            .iter()
            .map(|t| Triple::new(perm[t.head], 0, perm[t.tail]))
            .collect();
        let a = KnowledgeGraph::new(n, 1, triples).unwrap();
        let b = KnowledgeGraph::new(n, 1, relabeled).unwrap();
        let s = rng.random_range(0..n);
        let cfg = with_method(PprMethod::PowerIteration);
        let pa = ppr(&a, s, &cfg).unwrap();
        let pb = ppr(&b, perm[s], &cfg).unwrap();
        for v in 0..n {
            prop_assert!((pa[v] - pb[perm[v]]).abs() < 1e-9);
        }
    }

    #[test]
    fn mu_is_symmetric_and_bounded(p in 0.0f64..1.0, q in 0.0f64..1.0) {
        let a = mu(p, q).unwrap();
        prop_assert_eq!(a, mu(q, p).unwrap());
        prop_assert!((0.0..=1.0).contains(&a));
        if p > 0.0 {
            prop_assert_eq!(mu(p, p).unwrap(), 1.0);
        }
    }

    #[test]
    fn hos_is_symmetric(v in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..20)) {
        let (a, b): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
        let s = hos_score(&a, &b).unwrap();
        prop_assert_eq!(s, hos_score(&b, &a).unwrap());
        prop_assert!(s <= a.len() as f64);
    }

    #[test]
    fn csls_argmax_survives_shift(seed in any::<u64>(), r in 2usize..12, c in 2usize..12, shift in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sim = Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect());
        let shifted = sim.map(|v| v + shift);
        let k = 1 + (seed as usize) % r.min(c);
        let a = csls_adjust(&sim, k).unwrap();
        let b = csls_adjust(&shifted, k).unwrap();
        prop_assert!(a.max_abs_diff(&b) < 1e-9);
        for i in 0..r {
            let arg = |t: &Tensor| (0..c).max_by(|&x, &y| t.get(i, x).total_cmp(&t.get(i, y))).unwrap();
            prop_assert_eq!(arg(&a), arg(&b));
        }
    }
}

#[test]
fn isomorphic_corpus_gives_matching_score_vectors() {
    let spec = SyntheticSpec {
        core_size: 120,
        dangling_fraction_1: 0.0,
        dangling_fraction_2: 0.0,
        edge_dropout: 0.0,
        ..SyntheticSpec::default()
    };
    let corpus = generate_synthetic(&spec).unwrap();
    let sources = sample_sources(&corpus.seed_train, &PprConfig::default());
    let (t1, t2) = score_vectors(&corpus.kg1, &corpus.kg2, &sources, &PprConfig::default()).unwrap();
    let links = corpus
        .seed_train
        .iter()
        .chain(&corpus.links_valid)
        .chain(&corpus.links_test);
    for &(a, b) in links {
        for (x, y) in t1.row(a).iter().zip(t2.row(b)) {
            assert!((x - y).abs() < 1e-6);
        }
    }
    for (k, &(s1, _)) in sources.iter().enumerate() {
        assert!(t1.get(s1, k) >= PprConfig::default().alpha);
    }
}

#[test]
fn cache_round_trip() {
    let corpus = generate_synthetic(&SyntheticSpec {
        core_size: 40,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cfg = PprConfig::default();
    let sources = sample_sources(&corpus.seed_train, &cfg);
    let hash = corpus.content_hash();
    let first = score_vectors_cached(dir.path(), &hash, &corpus.kg1, &corpus.kg2, &sources, &cfg).unwrap();
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    let second = score_vectors_cached(dir.path(), &hash, &corpus.kg1, &corpus.kg2, &sources, &cfg).unwrap();
    assert_eq!(first.0, second.0);
    assert_eq!(first.1, second.1);
}
