use rand::Rng;

use super::Tensor;

/// Glorot/Xavier uniform initialization for a `[rows×cols]` matrix:
/// `U(-b, b)` with `b = sqrt(6 / (rows + cols))`.
pub fn xavier_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::matrix(rows, cols, data)
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, otherwise
/// `1 / (1 - rate)`, so expected activations are unchanged.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    if rate <= 0.0 {
        return vec![1.0; len];
    }
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn xavier_respects_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = xavier_uniform(30, 10, &mut rng);
        let b = (6.0f64 / 40.0).sqrt();
        assert!(t.data().iter().all(|v| v.abs() < b));
        assert_eq!(t.shape(), &[30, 10]);
    }

    #[test]
    fn dropout_mask_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = dropout_mask(100_000, 0.3, &mut rng);
        let dropped = m.iter().filter(|&&v| v == 0.0).count() as f64 / m.len() as f64;
        assert!((dropped - 0.3).abs() < 0.01);
        let mean = m.iter().sum::<f64>() / m.len() as f64;
        assert!((mean - 1.0).abs() < 0.02);
    }
}
