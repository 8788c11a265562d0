//! Training objectives: hard-negative contrastive loss, batch-level
//! optimal transport, and the decaying combination of the two.

mod contrastive;
mod ot;
mod sinkhorn;

pub use contrastive::{contrastive_loss, plain_contrastive_loss, ContrastiveConfig, ContrastiveStats};
pub use ot::{ot_loss, OtConfig, OtStats};
pub use sinkhorn::{sinkhorn_log, SinkhornResult};

use crate::diff::{Tape, Var};
use crate::Result;

/// `ω(t) = max(0, 1 − t/T)`; a zero horizon disables the OT term.
pub fn omega(epoch: usize, horizon: usize) -> f64 {
    if horizon == 0 {
        return 0.0;
    }
    (1.0 - epoch as f64 / horizon as f64).max(0.0)
}

/// `L = L1 + λ·ω(t)·L2`.
pub fn combined_loss(
    tape: &mut Tape,
    contrastive: Var,
    transport: Var,
    epoch: usize,
    cfg: &OtConfig,
) -> Result<Var> {
    let w = cfg.lambda * omega(epoch, cfg.schedule_horizon);
    let scaled = tape.scale(transport, w);
    tape.add(contrastive, scaled)
}
