use proptest::prelude::*;
use structalign::data::{
    degree_histogram, generate_synthetic, load_corpus, write_corpus, Direction, SyntheticSpec,
};

fn spec(core: usize, d1: f64, d2: f64, dropout: f64, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        core_size: core,
        dangling_fraction_1: d1,
        dangling_fraction_2: d2,
        edge_dropout: dropout,
        rng_seed: seed,
        ..SyntheticSpec::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn written_corpus_loads_back_identically(
        core in 10usize..80,
        d1 in 0.0f64..0.5,
        d2 in 0.0f64..0.5,
        dropout in 0.0f64..0.2,
        seed in 0u64..1000,
    ) {
        let corpus = generate_synthetic(&spec(core, d1, d2, dropout, seed)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_corpus(&corpus, dir.path()).unwrap();
        let back = load_corpus(dir.path(), Direction::Kg1ToKg2).unwrap();
        prop_assert_eq!(back.content_hash(), corpus.content_hash());
        prop_assert_eq!(&back, &corpus);
    }

    #[test]
    fn histogram_counts_every_entity(core in 6usize..200, d in 0.0f64..0.6, seed in 0u64..1000) {
        let corpus = generate_synthetic(&spec(core, d, d, 0.1, seed)).unwrap();
        for kg in [&corpus.kg1, &corpus.kg2] {
            let h = degree_histogram(kg);
            prop_assert_eq!(h.values().sum::<usize>(), kg.entity_count());
            let total: usize = h.iter().map(|(deg, n)| deg * n).sum();
            prop_assert_eq!(total, (0..kg.entity_count()).map(|e| kg.degree(e)).sum::<usize>());
        }
    }
}

#[test]
fn seventy_percent_core_gives_143_entities() {
    let c = generate_synthetic(&spec(100, 0.3, 0.0, 0.0, 3)).unwrap();
    assert_eq!(c.kg1.entity_count(), 143);
    assert_eq!(c.kg2.entity_count(), 100);
    let links = c.seed_train.len() + c.links_valid.len() + c.links_test.len();
    assert_eq!(links, 100);
}
