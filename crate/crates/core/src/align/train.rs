use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::expand::iterative_expand;
use super::infer::{InferConfig, ScoreTables};
use crate::data::{EntityPair, TrainingData};
use crate::diff::{RmsProp, RmsPropConfig, Tape};
use crate::ggan::{encode, encode_on_tape, AttentionGraph, EncoderConfig, EncoderState, Mode};
use crate::objectives::{
    combined_loss, contrastive_loss, omega, ot_loss, ContrastiveConfig, OtConfig,
};
use crate::ppr::PprConfig;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainPlan {
    /// Epochs per turn.
    pub epochs: usize,
    pub turns: usize,
    pub rng_seed: u64,
    /// Reinitialize the encoder at the start of every turn after the first.
    pub cold_restart: bool,
    /// Minimum similarity for a pseudo-seed.
    pub expand_threshold: f64,
    pub encoder: EncoderConfig,
    pub contrastive: ContrastiveConfig,
    pub ot: OtConfig,
    pub ppr: PprConfig,
    pub optimizer: RmsPropConfig,
    pub infer: InferConfig,
}

impl Default for TrainPlan {
    fn default() -> Self {
        TrainPlan {
            epochs: 20,
            turns: 5,
            rng_seed: 0,
            cold_restart: false,
            expand_threshold: 0.85,
            encoder: EncoderConfig::default(),
            contrastive: ContrastiveConfig::default(),
            ot: OtConfig::default(),
            ppr: PprConfig::default(),
            optimizer: RmsPropConfig::default(),
            infer: InferConfig::default(),
        }
    }
}

impl TrainPlan {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.turns == 0 {
            return Err(Error::Config("train epochs and turns must be positive".into()));
        }
        self.encoder.validate()?;
        self.contrastive.validate()?;
        self.ot.validate()?;
        self.ppr.validate()?;
        self.infer.validate()?;
        if !(self.optimizer.lr > 0.0) {
            return Err(Error::Config("optimizer.lr must be positive".into()));
        }
        Ok(())
    }
}

/// One telemetry line per epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub turn: usize,
    pub epoch: usize,
    #[serde(rename = "L1")]
    pub l1: f64,
    #[serde(rename = "L2")]
    pub l2: f64,
    pub omega: f64,
    pub sinkhorn_converged: bool,
    pub batches: usize,
    /// Smallest debiased negative term seen this epoch.
    pub min_negative: f64,
    pub wall_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub turn: usize,
    pub seeds: usize,
    pub accepted: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Encoder after the last turn.
    pub state: EncoderState,
    /// Encoder at the end of every turn.
    pub checkpoints: Vec<EncoderState>,
    pub epochs: Vec<EpochRecord>,
    pub turns: Vec<TurnRecord>,
    /// Training seeds plus every accepted pseudo-seed.
    pub seeds: Vec<EntityPair>,
}

// Splits shuffled pairs into batches of `size`; a trailing single pair has
// no in-batch negatives and joins the previous batch.
fn batches(pairs: &[EntityPair], size: usize) -> Vec<&[EntityPair]> {
    let mut out: Vec<&[EntityPair]> = pairs.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * size;
        *out.last_mut().unwrap() = &pairs[start..];
    }
    out
}

/// Runs `plan.turns` turns of `plan.epochs` epochs. Between turns the seed
/// set is extended with mutual-nearest-neighbor pseudo-seeds.
pub fn train(data: TrainingData<'_>, plan: &TrainPlan) -> Result<TrainOutcome> {
    plan.validate()?;
    if data.seeds.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "training needs at least 2 seed pairs, got {}",
            data.seeds.len()
        )));
    }
    let (n1, n2) = (data.kg1.entity_count(), data.kg2.entity_count());
    let g1 = AttentionGraph::new(data.kg1);
    let g2 = AttentionGraph::new(data.kg2);
    let mut rng = ChaCha8Rng::seed_from_u64(plan.rng_seed);
    let mut state = EncoderState::init(&plan.encoder, n1, n2, plan.rng_seed)?;
    let mut optimizer = RmsProp::new(plan.optimizer);
    let tables = if plan.infer.use_hos && plan.infer.hos_weight != 0.0 && plan.turns > 1 {
        Some(ScoreTables::compute(data.kg1, data.kg2, data.seeds, &plan.ppr)?)
    } else {
        None
    };
    let floor = plan.contrastive.negative_floor();

    let mut seeds = data.seeds.to_vec();
    let mut epochs = Vec::new();
    let mut turns = Vec::new();
    let mut checkpoints = Vec::new();
    for turn in 0..plan.turns {
        if turn > 0 && plan.cold_restart {
            state = EncoderState::init(&plan.encoder, n1, n2, plan.rng_seed.wrapping_add(turn as u64))?;
            optimizer = RmsProp::new(plan.optimizer);
        }
        for epoch in 0..plan.epochs {
            let started = Instant::now();
            let w = omega(epoch, plan.ot.schedule_horizon);
            let use_ot = plan.ot.lambda * w != 0.0;
            let mut order = seeds.clone();
            order.shuffle(&mut rng);
            let mut rec = EpochRecord {
                turn,
                epoch,
                l1: 0.0,
                l2: 0.0,
                omega: w,
                sinkhorn_converged: true,
                batches: 0,
                min_negative: f64::INFINITY,
                wall_ms: 0,
            };
            for batch in batches(&order, plan.contrastive.batch_size) {
                let mut tape = Tape::new();
                let vars = state.register(&mut tape, true);
                let (z1, z2) =
                    encode_on_tape(&mut tape, &vars, (&g1, &g2), &plan.encoder, Mode::Train(&mut rng))?;
                let left: Vec<usize> = batch.iter().map(|p| p.0).collect();
                let right: Vec<usize> = batch.iter().map(|p| p.1).collect();
                let b1 = tape.gather_rows(z1, &left)?;
                let b2 = tape.gather_rows(z2, &right)?;
                let (l1, stats) = contrastive_loss(&mut tape, b1, b2, &plan.contrastive)?;
                if stats.min_negative < floor {
                    return Err(Error::InvalidArgument(format!(
                        "negative term {} fell below its floor {floor}",
                        stats.min_negative
                    )));
                }
                rec.min_negative = rec.min_negative.min(stats.min_negative);
                rec.l1 += tape.value(l1).item();
                let loss = if use_ot {
                    let (l2, ot) = ot_loss(&mut tape, b1, b2, &plan.ot)?;
                    rec.l2 += tape.value(l2).item();
                    rec.sinkhorn_converged &= ot.converged;
                    combined_loss(&mut tape, l1, l2, epoch, &plan.ot)?
                } else {
                    l1
                };
                let mut grads = tape.backward(loss)?;
                let g: Vec<_> = vars.all().into_iter().map(|v| grads.take(v)).collect();
                optimizer.step(&mut state.tensors_mut(), &g)?;
                rec.batches += 1;
            }
            rec.wall_ms = started.elapsed().as_millis() as u64;
            epochs.push(rec);
        }
        checkpoints.push(state.clone());
        let mut accepted = 0;
        if turn + 1 < plan.turns {
            let (e1, e2) = encode(data.kg1, data.kg2, &state)?;
            let tabs = tables.as_ref().map(|t| (&t.kg1, &t.kg2));
            let found = iterative_expand((&e1, &e2), tabs, &seeds, plan.expand_threshold, &plan.infer)?;
            accepted = found.len();
            seeds.extend(found);
        }
        turns.push(TurnRecord {
            turn,
            seeds: seeds.len(),
            accepted,
        });
    }
    Ok(TrainOutcome {
        state,
        checkpoints,
        epochs,
        turns,
        seeds,
    })
}
