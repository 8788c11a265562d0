use serde::{Deserialize, Serialize};

use crate::diff::{Axis, Tape, Tensor, Var};
use crate::{Error, Result};

/// Similarities divided by the temperature are clamped to this before `exp`.
const MAX_LOGIT: f64 = 60.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContrastiveConfig {
    /// Class prior `τ⁺` of a negative secretly being positive.
    pub tau_plus: f64,
    /// Hardness concentration `β`.
    pub beta_hardness: f64,
    pub temperature: f64,
    pub batch_size: usize,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig {
            tau_plus: 0.1,
            beta_hardness: 1.0,
            temperature: 0.5,
            batch_size: 512,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.tau_plus) {
            return Err(Error::Config("tau_plus must lie in [0, 1)".into()));
        }
        if !(self.beta_hardness >= 0.0) || !(self.temperature > 0.0) {
            return Err(Error::Config(
                "beta_hardness must be non-negative and temperature positive".into(),
            ));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        Ok(())
    }

    /// `e^{-1/t}`, the floor of the debiased negative term.
    pub fn negative_floor(&self) -> f64 {
        (-1.0 / self.temperature).exp()
    }
}

/// Per-call diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveStats {
    /// Smallest `S⁻` over the batch's anchors.
    pub min_negative: f64,
    /// Anchors whose `S⁻` hit the floor.
    pub clamped: usize,
}

/// Debiased hard-negative contrastive loss over a batch of `N` aligned
/// pairs. Rows `0..N` of the anchor set come from `z1`, rows `N..2N` from
/// `z2`; anchor `i`'s positive is its counterpart and its negatives are the
/// other `2N − 2` anchors.
///
/// ```text
/// S⁺_i = exp(z_i·z_j(i) / t)
/// S̃⁻_i = (2N−2) Σ_k exp((1+β) z_i·z_k / t) / Σ_k exp(β z_i·z_k / t)
/// S⁻_i = max((S̃⁻_i − (2N−2) τ⁺ S⁺_i) / (1 − τ⁺), e^{−1/t})
/// L    = −Σ_i log(S⁺_i / (S⁺_i + S⁻_i))
/// ```
pub fn contrastive_loss(
    tape: &mut Tape,
    z1: Var,
    z2: Var,
    cfg: &ContrastiveConfig,
) -> Result<(Var, ContrastiveStats)> {
    if !(0.0..1.0).contains(&cfg.tau_plus) {
        return Err(Error::Config("tau_plus must lie in [0, 1)".into()));
    }
    let (t1, t2) = (tape.value(z1), tape.value(z2));
    if t1.shape() != t2.shape() || t1.shape().len() != 2 {
        return Err(Error::shape(
            "contrastive_loss",
            format!("{:?} vs {:?}", t1.shape(), t2.shape()),
        ));
    }
    let n = t1.rows();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "contrastive batch needs at least 2 pairs, got {n}"
        )));
    }
    let m = 2 * n;
    let negatives = (m - 2) as f64;
    let inv_t = 1.0 / cfg.temperature;

    let z = tape.concat(&[z1, z2], Axis::Zero)?;
    let zt = tape.transpose(z)?;
    let sim = tape.matmul(z, zt)?;
    let logits = tape.scale(sim, inv_t);
    let logits = tape.clamp_max(logits, MAX_LOGIT);

    let partner: Vec<usize> = (0..m).map(|i| (i + n) % m).collect();
    let zp = tape.gather_rows(z, &partner)?;
    let pos = tape.mul(z, zp)?;
    let pos = tape.sum(pos, Axis::One)?;
    let pos = tape.scale(pos, inv_t);
    let pos = tape.clamp_max(pos, MAX_LOGIT);
    let s_plus = tape.exp(pos);

    let mut mask = vec![1.0; m * m];
    for i in 0..m {
        mask[i * m + i] = 0.0;
        mask[i * m + partner[i]] = 0.0;
    }
    let mask = tape.constant(Tensor::matrix(m, m, mask));

    let hard = tape.scale(logits, 1.0 + cfg.beta_hardness);
    let hard = tape.exp(hard);
    let hard = tape.mul(hard, mask)?;
    let num = tape.sum(hard, Axis::One)?;
    let weight = tape.scale(logits, cfg.beta_hardness);
    let weight = tape.exp(weight);
    let weight = tape.mul(weight, mask)?;
    let den = tape.sum(weight, Axis::One)?;
    let reweighted = tape.div(num, den)?;
    let reweighted = tape.scale(reweighted, negatives);

    let bias = tape.scale(s_plus, -negatives * cfg.tau_plus);
    let debiased = tape.add(reweighted, bias)?;
    let debiased = tape.scale(debiased, 1.0 / (1.0 - cfg.tau_plus));
    let floor = cfg.negative_floor();
    let s_minus = tape.max_scalar(debiased, floor);

    let stats = {
        let raw = tape.value(debiased).data();
        let clamped = raw.iter().filter(|&&v| v < floor).count();
        let min_negative = tape.value(s_minus).data().iter().copied().fold(f64::INFINITY, f64::min);
        ContrastiveStats {
            min_negative,
            clamped,
        }
    };

    let total = tape.add(s_plus, s_minus)?;
    let log_total = tape.log(total);
    let per_anchor = tape.sub(log_total, pos)?;
    Ok((tape.sum_all(per_anchor), stats))
}

/// Undebiased objective `−Σ log(S⁺ / (S⁺ + Σ_k exp(z_i·z_k / t)))` over the
/// same anchor and negative sets. Used as a reference for the
/// `τ⁺ = 0, β = 0` collapse.
pub fn plain_contrastive_loss(z1: &Tensor, z2: &Tensor, temperature: f64) -> Result<f64> {
    if z1.shape() != z2.shape() || z1.shape().len() != 2 || z1.rows() < 2 {
        return Err(Error::shape(
            "plain_contrastive_loss",
            format!("{:?} vs {:?}", z1.shape(), z2.shape()),
        ));
    }
    let n = z1.rows();
    let m = 2 * n;
    let row = |i: usize| if i < n { z1.row(i) } else { z2.row(i - n) };
    let logit = |a: usize, b: usize| {
        let s: f64 = row(a).iter().zip(row(b)).map(|(x, y)| x * y).sum();
        (s / temperature).min(MAX_LOGIT)
    };
    let mut total = 0.0;
    for i in 0..m {
        let j = (i + n) % m;
        let pos = logit(i, j);
        let neg: f64 = (0..m).filter(|&k| k != i && k != j).map(|k| logit(i, k).exp()).sum();
        total += (pos.exp() + neg).ln() - pos;
    }
    Ok(total)
}
