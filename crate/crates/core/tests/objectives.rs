use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use structalign::diff::{Tape, Tensor};
use structalign::objectives::{
    contrastive_loss, ot_loss, sinkhorn_log, ContrastiveConfig, OtConfig,
};

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn brute_force(x1: &Tensor, x2: &Tensor) -> f64 {
    let n = x1.rows();
    permutations(n)
        .iter()
        .map(|p| (0..n).map(|i| sq_dist(x1.row(i), x2.row(p[i]))).sum::<f64>() / n as f64)
        .fold(f64::INFINITY, f64::min)
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor {
    Tensor::matrix(n, d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn ot_value(x1: &Tensor, x2: &Tensor, cfg: &OtConfig) -> (f64, bool) {
    let mut tape = Tape::new();
    let a = tape.constant(x1.clone());
    let b = tape.constant(x2.clone());
    let (l, stats) = ot_loss(&mut tape, a, b, cfg).unwrap();
    (tape.value(l).item(), stats.converged)
}

fn sharp() -> OtConfig {
    OtConfig {
        epsilon: 1e-3,
        max_sinkhorn_iters: 20_000,
        marginal_tolerance: 1e-9,
        ..OtConfig::default()
    }
}

#[test]
fn entropic_loss_matches_permutation_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..100 {
        let n = 2 + trial % 3;
        let x1 = random_matrix(&mut rng, n, 4);
        let x2 = random_matrix(&mut rng, n, 4);
        let (loss, _) = ot_value(&x1, &x2, &sharp());
        let exact = brute_force(&x1, &x2);
        assert!((loss - exact).abs() < 1e-3, "trial {trial}: {loss} vs {exact}");
    }
}

#[test]
fn identical_batches_cost_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_matrix(&mut rng, 4, 3);
    let (loss, _) = ot_value(&x, &x, &sharp());
    assert!(loss.abs() < 1e-6, "{loss}");
}

#[test]
fn noised_copy_costs_more() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let a = random_matrix(&mut rng, 6, 4);
        let noise = random_matrix(&mut rng, 6, 4).map(|v| v * 0.1 * 3f64.sqrt());
        let b = Tensor::matrix(6, 4, a.data().iter().zip(noise.data()).map(|(x, e)| x + e).collect());
        let cfg = OtConfig::default();
        assert!(ot_value(&a, &a, &cfg).0 <= ot_value(&a, &b, &cfg).0 + 1e-6);
    }
}

#[test]
fn gradient_flows_through_cost_only() {
    let x1 = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
    let x2 = Tensor::matrix(2, 2, vec![0.9, 0.1, 0.1, 0.9]);
    let mut tape = Tape::new();
    let a = tape.param(x1.clone());
    let b = tape.constant(x2.clone());
    let (l, _) = ot_loss(&mut tape, a, b, &sharp()).unwrap();
    let g = tape.backward(l).unwrap().get(a);
    // Near-identity plan with mass 1/2: dL/dx1_i = (x1_i − x2_i).
    for i in 0..2 {
        for j in 0..2 {
            let expected = x1.get(i, j) - x2.get(i, j);
            assert!((g.get(i, j) - expected).abs() < 1e-6);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sinkhorn_marginals_hold(n in 1usize..6, m in 1usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cost = Tensor::matrix(n, m, (0..n * m).map(|_| rng.random_range(0.0..4.0)).collect());
        let r = sinkhorn_log(&cost, 0.05, 2000, 1e-6).unwrap();
        prop_assert!(r.plan.data().iter().all(|&p| p >= 0.0));
        if r.converged {
            for i in 0..n {
                let s: f64 = r.plan.row(i).iter().sum();
                prop_assert!((s - 1.0 / n as f64).abs() < 1e-6);
            }
            for j in 0..m {
                let s: f64 = (0..n).map(|i| r.plan.get(i, j)).sum();
                prop_assert!((s - 1.0 / m as f64).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn contrastive_is_permutation_invariant(seed in any::<u64>(), n in 2usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unit = |rng: &mut ChaCha8Rng| {
            let mut t = random_matrix(rng, n, 5);
            for i in 0..n {
                let norm = t.row(i).iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
                t.row_mut(i).iter_mut().for_each(|v| *v /= norm);
            }
            t
        };
        let z1 = unit(&mut rng);
        let z2 = unit(&mut rng);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let cfg = ContrastiveConfig::default();
        let eval = |a: Tensor, b: Tensor| {
            let mut tape = Tape::new();
            let (x, y) = (tape.constant(a), tape.constant(b));
            let (l, stats) = contrastive_loss(&mut tape, x, y, &cfg).unwrap();
            (tape.value(l).item(), stats.min_negative)
        };
        let (base, floor_seen) = eval(z1.clone(), z2.clone());
        let (shuffled, _) = eval(z1.select_rows(&perm), z2.select_rows(&perm));
        prop_assert!((base - shuffled).abs() < 1e-10);
        prop_assert!(floor_seen >= cfg.negative_floor());
    }
}
