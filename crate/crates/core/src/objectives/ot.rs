use serde::{Deserialize, Serialize};

use super::sinkhorn::sinkhorn_log;
use crate::diff::{Axis, Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OtConfig {
    pub epsilon: f64,
    pub max_sinkhorn_iters: usize,
    pub marginal_tolerance: f64,
    /// Exponent `k` of the ground cost `Σ_d |x₁ − x₂|^k`.
    pub norm_order: u32,
    pub lambda: f64,
    /// Epochs over which `ω` decays to zero.
    pub schedule_horizon: usize,
}

impl Default for OtConfig {
    fn default() -> Self {
        OtConfig {
            epsilon: 0.05,
            max_sinkhorn_iters: 200,
            marginal_tolerance: 1e-6,
            norm_order: 2,
            lambda: 0.3,
            schedule_horizon: 20,
        }
    }
}

impl OtConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("ot.epsilon must be positive".into()));
        }
        if self.norm_order == 0 {
            return Err(Error::Config("ot.norm_order must be at least 1".into()));
        }
        if !(self.marginal_tolerance > 0.0) || !(self.lambda >= 0.0) {
            return Err(Error::Config(
                "ot.marginal_tolerance must be positive and ot.lambda non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct OtStats {
    pub converged: bool,
    pub marginal_error: f64,
    pub iterations: usize,
}

fn cost_matrix(tape: &mut Tape, x1: Var, x2: Var, k: u32) -> Result<Var> {
    let n = tape.value(x1).rows();
    let m = tape.value(x2).rows();
    if k == 2 {
        let sq1 = tape.mul(x1, x1)?;
        let sq1 = tape.sum(sq1, Axis::One)?;
        let sq2 = tape.mul(x2, x2)?;
        let sq2 = tape.sum(sq2, Axis::One)?;
        let ones_m = tape.constant(Tensor::full(&[1, m], 1.0));
        let ones_n = tape.constant(Tensor::full(&[n, 1], 1.0));
        let a = tape.matmul(sq1, ones_m)?;
        let sq2t = tape.transpose(sq2)?;
        let b = tape.matmul(ones_n, sq2t)?;
        let x2t = tape.transpose(x2)?;
        let cross = tape.matmul(x1, x2t)?;
        let cross = tape.scale(cross, -2.0);
        let c = tape.add(a, b)?;
        let c = tape.add(c, cross)?;
        // Rounding can leave tiny negatives on the diagonal of identical rows.
        return Ok(tape.max_scalar(c, 0.0));
    }
    // General k: expand to [n·m × d] pairwise differences.
    let left: Vec<usize> = (0..n * m).map(|p| p / m).collect();
    let right: Vec<usize> = (0..n * m).map(|p| p % m).collect();
    let a = tape.gather_rows(x1, &left)?;
    let b = tape.gather_rows(x2, &right)?;
    let diff = tape.sub(a, b)?;
    let powered = tape.abs_pow(diff, k as f64);
    let per_pair = tape.sum(powered, Axis::One)?;
    tape.reshape(per_pair, &[n, m])
}

/// Batch-level transport loss `⟨C, P⟩` between two embedding batches under
/// uniform marginals. `P` comes from an entropic Sinkhorn solve and enters
/// the tape as a constant, so gradients flow through `C` only.
pub fn ot_loss(tape: &mut Tape, x1: Var, x2: Var, cfg: &OtConfig) -> Result<(Var, OtStats)> {
    let (s1, s2) = (tape.value(x1).shape().to_vec(), tape.value(x2).shape().to_vec());
    if s1.len() != 2 || s2.len() != 2 || s1[1] != s2[1] {
        return Err(Error::shape("ot_loss", format!("{s1:?} vs {s2:?}")));
    }
    if s1[0] == 0 || s2[0] == 0 {
        return Err(Error::InvalidArgument("ot_loss needs non-empty batches".into()));
    }
    let cost = cost_matrix(tape, x1, x2, cfg.norm_order)?;
    let solved = sinkhorn_log(
        tape.value(cost),
        cfg.epsilon,
        cfg.max_sinkhorn_iters,
        cfg.marginal_tolerance,
    )?;
    let stats = OtStats {
        converged: solved.converged,
        marginal_error: solved.marginal_error,
        iterations: solved.iterations,
    };
    let plan = tape.constant(solved.plan);
    let weighted = tape.mul(cost, plan)?;
    Ok((tape.sum_all(weighted), stats))
}
