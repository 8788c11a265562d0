use crate::diff::Tensor;
use crate::{Error, Result};

/// Outcome of a Sinkhorn solve.
#[derive(Clone, Debug)]
pub struct SinkhornResult {
    pub plan: Tensor,
    pub iterations: usize,
    /// Largest absolute row- or column-marginal error of `plan`.
    pub marginal_error: f64,
    pub converged: bool,
}

fn logsumexp(vals: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = vals.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + vals.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Entropic OT between uniform marginals with log-domain scaling updates.
///
/// The regularization weight is annealed geometrically from the cost scale
/// down to `epsilon`, warm-starting the dual potentials at each stage, which
/// keeps small `epsilon` solves stable. `max_iters` bounds the iteration
/// count at the final `epsilon`.
pub fn sinkhorn_log(cost: &Tensor, epsilon: f64, max_iters: usize, tol: f64) -> Result<SinkhornResult> {
    if cost.shape().len() != 2 || cost.is_empty() {
        return Err(Error::InvalidArgument("sinkhorn needs a non-empty cost matrix".into()));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Config("epsilon must be positive".into()));
    }
    let (n, m) = (cost.rows(), cost.cols());
    let log_a = -(n as f64).ln();
    let log_b = -(m as f64).ln();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];

    let scale = cost.data().iter().fold(0.0f64, |acc, &c| acc.max(c.abs()));
    let mut schedule = Vec::new();
    let mut eps = scale.max(epsilon);
    while eps > epsilon {
        schedule.push(eps);
        eps *= 0.5;
    }
    schedule.push(epsilon);

    let c = cost.data();
    let mut iterations = 0;
    for (stage, &eps) in schedule.iter().enumerate() {
        let last = stage + 1 == schedule.len();
        let budget = if last { max_iters } else { 50 };
        for _ in 0..budget {
            for i in 0..n {
                let row = &c[i * m..(i + 1) * m];
                f[i] = eps * (log_a - logsumexp((0..m).map(|j| (g[j] - row[j]) / eps)));
            }
            for j in 0..m {
                g[j] = eps * (log_b - logsumexp((0..n).map(|i| (f[i] - c[i * m + j]) / eps)));
            }
            if last {
                iterations += 1;
            }
            // Columns are exact after the g update; only rows can drift.
            let row_err = (0..n)
                .map(|i| {
                    let s: f64 = (0..m).map(|j| ((f[i] + g[j] - c[i * m + j]) / eps).exp()).sum();
                    (s - 1.0 / n as f64).abs()
                })
                .fold(0.0, f64::max);
            if row_err < tol {
                break;
            }
        }
    }

    let mut plan = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            plan[i * m + j] = ((f[i] + g[j] - c[i * m + j]) / epsilon).exp();
        }
    }
    let plan = Tensor::matrix(n, m, plan);
    let marginal_error = marginal_error(&plan);
    Ok(SinkhornResult {
        plan,
        iterations,
        marginal_error,
        converged: marginal_error < tol,
    })
}

fn marginal_error(plan: &Tensor) -> f64 {
    let (n, m) = (plan.rows(), plan.cols());
    let mut worst = 0.0f64;
    for i in 0..n {
        let s: f64 = plan.row(i).iter().sum();
        worst = worst.max((s - 1.0 / n as f64).abs());
    }
    for j in 0..m {
        let s: f64 = (0..n).map(|i| plan.get(i, j)).sum();
        worst = worst.max((s - 1.0 / m as f64).abs());
    }
    worst
}
