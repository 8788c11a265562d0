//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature these dispatch to rayon; without it they are
//! ordinary iterator loops. Every helper writes each output slot from exactly
//! one closure call, so results never depend on scheduling.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this many output elements the sequential path is always taken.
#[cfg(feature = "parallel")]
const MIN_PARALLEL_WORK: usize = 1 << 14;

/// Returns true when this build dispatches to rayon.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

/// Calls `f(row, chunk)` for every `cols`-wide row of `out`.
pub fn for_each_row<F>(out: &mut [f64], cols: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if cols == 0 || out.is_empty() {
        return;
    }
    #[cfg(feature = "parallel")]
    {
        if out.len() >= MIN_PARALLEL_WORK {
            out.par_chunks_mut(cols)
                .enumerate()
                .for_each(|(i, row)| f(i, row));
            return;
        }
    }
    out.chunks_mut(cols).enumerate().for_each(|(i, row)| f(i, row));
}

/// Maps `f` over `0..n` and collects in index order.
///
/// `weight` is a rough per-item cost used to decide whether fanning out is
/// worth it.
pub fn map_indices<T, F>(n: usize, weight: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if n > 1 && n.saturating_mul(weight.max(1)) >= MIN_PARALLEL_WORK {
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    let _ = weight;
    (0..n).map(f).collect()
}
