//! Experiment configuration, run artifacts and the command drivers behind
//! the CLI.
//!
//! A run directory holds:
//!
//! ```text
//! config.toml        resolved configuration
//! model.bin          final encoder (tensor records), model.json sidecar
//! turn{k}.bin        encoder after each turn
//! telemetry.jsonl    one line per epoch
//! eval.json          EvalResult, report.txt its table
//! infer.jsonl        per-source rankings and verdicts
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::align::{
    calibrate_threshold, evaluate, infer, train, EvalResult, InferConfig, ScoreTables, TrainPlan,
};
use crate::data::{generate_synthetic, load_corpus, write_corpus, AlignmentCorpus, Direction, SyntheticSpec};
use crate::diff::{read_tensor_records, write_tensor_records, RmsPropConfig};
use crate::ggan::{encode, EncoderConfig, EncoderState};
use crate::objectives::{ContrastiveConfig, OtConfig};
use crate::ppr::{ppr, PprConfig};
use crate::{Error, Result};

pub const SIDECAR_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    pub direction: Direction,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            path: PathBuf::from("data/synthetic"),
            direction: Direction::Kg1ToKg2,
        }
    }
}

/// Loop-level training settings; the module sections hold the rest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub turns: usize,
    pub lr: f64,
    pub rms_decay: f64,
    pub rms_eps: f64,
    pub cold_restart: bool,
    pub expand_threshold: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let plan = TrainPlan::default();
        TrainSection {
            epochs: plan.epochs,
            turns: plan.turns,
            lr: plan.optimizer.lr,
            rms_decay: plan.optimizer.decay,
            rms_eps: plan.optimizer.eps,
            cold_restart: plan.cold_restart,
            expand_threshold: plan.expand_threshold,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Where artifacts go. Not part of the config hash.
    pub output_dir: PathBuf,
    pub rng_seed: u64,
    pub dataset: DatasetConfig,
    pub synthetic: SyntheticSpec,
    pub train: TrainSection,
    pub encoder: EncoderConfig,
    pub contrastive: ContrastiveConfig,
    pub ot: OtConfig,
    pub ppr: PprConfig,
    pub infer: InferConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            output_dir: PathBuf::from("runs/default"),
            rng_seed: 0,
            dataset: DatasetConfig::default(),
            synthetic: SyntheticSpec::default(),
            train: TrainSection::default(),
            encoder: EncoderConfig::default(),
            contrastive: ContrastiveConfig::default(),
            ot: OtConfig::default(),
            ppr: PprConfig::default(),
            infer: InferConfig::default(),
        }
    }
}

fn parse_override_value(raw: &str) -> toml::Value {
    #[derive(Deserialize)]
    struct Probe {
        v: toml::Value,
    }
    toml::from_str::<Probe>(&format!("v = {raw}"))
        .map(|p| p.v)
        .unwrap_or_else(|_| toml::Value::String(raw.to_string()))
}

fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("bad override key `{path}`")));
    }
    let mut table = root;
    for k in &keys[..keys.len() - 1] {
        let entry = table
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{path}`: `{k}` is not a section")))?;
    }
    table.insert(keys[keys.len() - 1].to_string(), parse_override_value(raw.trim()));
    Ok(())
}

impl ExperimentConfig {
    /// Parses TOML text, then applies `a.b=value` overrides in order.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (defaults only when `None`) and applies overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => {
                if !p.exists() {
                    return Err(Error::MissingFile(p.to_path_buf()));
                }
                fs::read_to_string(p).map_err(|e| Error::io(p, e))?
            }
            None => String::new(),
        };
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.synthetic.validate()?;
        self.plan().validate()
    }

    /// SHA-256 (hex) of the resolved configuration minus `output_dir`.
    pub fn config_hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("output_dir");
        }
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }

    pub fn plan(&self) -> TrainPlan {
        TrainPlan {
            epochs: self.train.epochs,
            turns: self.train.turns,
            rng_seed: self.rng_seed,
            cold_restart: self.train.cold_restart,
            expand_threshold: self.train.expand_threshold,
            encoder: self.encoder.clone(),
            contrastive: self.contrastive.clone(),
            ot: self.ot.clone(),
            ppr: self.ppr.clone(),
            optimizer: RmsPropConfig {
                lr: self.train.lr,
                decay: self.train.rms_decay,
                eps: self.train.rms_eps,
            },
            infer: self.infer.clone(),
        }
    }

    pub fn paths(&self) -> RunPaths {
        RunPaths {
            root: self.output_dir.clone(),
        }
    }

    pub fn load_corpus(&self) -> Result<AlignmentCorpus> {
        load_corpus(&self.dataset.path, self.dataset.direction)
    }
}

/// File layout of a run directory.
#[derive(Clone, Debug)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }
    pub fn model(&self) -> PathBuf {
        self.root.join("model.bin")
    }
    pub fn turn(&self, k: usize) -> PathBuf {
        self.root.join(format!("turn{k}.bin"))
    }
    pub fn telemetry(&self) -> PathBuf {
        self.root.join("telemetry.jsonl")
    }
    pub fn eval(&self) -> PathBuf {
        self.root.join("eval.json")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report.txt")
    }
    pub fn infer(&self) -> PathBuf {
        self.root.join("infer.jsonl")
    }
}

/// JSON sidecar written next to every checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub version: u32,
    pub config_hash: String,
    pub corpus_hash: String,
    pub turn: usize,
    pub seeds: usize,
    pub tensors: Vec<String>,
}

pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("json")
}

pub fn save_checkpoint(path: &Path, state: &EncoderState, meta: &CheckpointMeta) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let named = state.named_tensors();
    let records: Vec<(&str, _)> = named.iter().map(|(n, t)| (n.as_str(), *t)).collect();
    let mut buf = Vec::new();
    write_tensor_records(&mut buf, &records).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let body = serde_json::to_string_pretty(meta).expect("meta serializes");
    fs::write(&side, body + "\n").map_err(|e| Error::io(side, e))
}

pub fn load_checkpoint(path: &Path, config: &EncoderConfig) -> Result<(EncoderState, CheckpointMeta)> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let side = sidecar_path(path);
    if !side.exists() {
        return Err(Error::MissingFile(side));
    }
    let meta: CheckpointMeta = serde_json::from_str(&fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", side.display())))?;
    if meta.version != SIDECAR_VERSION {
        return Err(Error::Checkpoint(format!("unsupported sidecar version {}", meta.version)));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let state = EncoderState::from_records(config, read_tensor_records(bytes.as_slice())?)?;
    Ok((state, meta))
}

/// Generates the configured synthetic corpus into `dataset.path`.
pub fn run_gen_synth(cfg: &ExperimentConfig) -> Result<AlignmentCorpus> {
    let corpus = generate_synthetic(&cfg.synthetic)?;
    write_corpus(&corpus, &cfg.dataset.path)?;
    Ok(corpus)
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub config_hash: String,
    pub corpus_hash: String,
    pub epochs: usize,
    pub turns: Vec<crate::align::TurnRecord>,
    pub final_l1: f64,
}

/// Trains and writes model, per-turn checkpoints, telemetry and the
/// resolved config. Refuses to overwrite a run with the same config hash
/// unless `force`.
pub fn run_train(cfg: &ExperimentConfig, force: bool) -> Result<TrainSummary> {
    let corpus = cfg.load_corpus()?;
    let paths = cfg.paths();
    let config_hash = cfg.config_hash();
    let corpus_hash = corpus.content_hash();
    let existing = sidecar_path(&paths.model());
    if !force && existing.exists() {
        if let Ok(meta) = serde_json::from_str::<CheckpointMeta>(&fs::read_to_string(&existing).unwrap_or_default()) {
            if meta.config_hash == config_hash {
                return Err(Error::Config(format!(
                    "{} already holds a run with config hash {}; pass --force to retrain",
                    paths.root.display(),
                    &config_hash[..12]
                )));
            }
        }
    }
    let outcome = train(corpus.training_view(), &cfg.plan())?;

    fs::create_dir_all(&paths.root).map_err(|e| Error::io(&paths.root, e))?;
    fs::write(paths.config(), cfg.to_toml()).map_err(|e| Error::io(paths.config(), e))?;
    let meta = |turn: usize, seeds: usize, state: &EncoderState| CheckpointMeta {
        version: SIDECAR_VERSION,
        config_hash: config_hash.clone(),
        corpus_hash: corpus_hash.clone(),
        turn,
        seeds,
        tensors: state.named_tensors().into_iter().map(|(n, _)| n).collect(),
    };
    for (k, (state, rec)) in outcome.checkpoints.iter().zip(&outcome.turns).enumerate() {
        save_checkpoint(&paths.turn(k), state, &meta(k, rec.seeds, state))?;
    }
    let last = outcome.turns.last().map_or(0, |t| t.turn);
    save_checkpoint(&paths.model(), &outcome.state, &meta(last, outcome.seeds.len(), &outcome.state))?;

    let tel = paths.telemetry();
    let mut f = fs::File::create(&tel).map_err(|e| Error::io(&tel, e))?;
    for rec in &outcome.epochs {
        let mut line = serde_json::to_value(rec).expect("record serializes");
        line["config_hash"] = config_hash.clone().into();
        writeln!(f, "{line}").map_err(|e| Error::io(&tel, e))?;
    }
    Ok(TrainSummary {
        config_hash,
        corpus_hash,
        epochs: outcome.epochs.len(),
        turns: outcome.turns,
        final_l1: outcome.epochs.last().map_or(0.0, |e| e.l1),
    })
}

/// Ablation switches for evaluation and inference.
#[derive(Clone, Copy, Debug, Default)]
pub struct Ablation {
    pub no_hos: bool,
    pub no_csls: bool,
}

impl Ablation {
    fn apply(self, cfg: &InferConfig) -> InferConfig {
        let mut c = cfg.clone();
        if self.no_hos {
            c.use_hos = false;
        }
        if self.no_csls {
            c.use_csls = false;
        }
        c
    }
}

fn load_for_eval(
    cfg: &ExperimentConfig,
    checkpoint: Option<&Path>,
) -> Result<(AlignmentCorpus, EncoderState, String, String)> {
    let corpus = cfg.load_corpus()?;
    let path = checkpoint.map_or_else(|| cfg.paths().model(), Path::to_path_buf);
    let (state, meta) = load_checkpoint(&path, &cfg.encoder)?;
    let config_hash = cfg.config_hash();
    let corpus_hash = corpus.content_hash();
    if meta.config_hash != config_hash {
        return Err(Error::Config(format!(
            "{} was trained with config hash {}, current config hashes to {}",
            path.display(),
            &meta.config_hash[..meta.config_hash.len().min(12)],
            &config_hash[..12]
        )));
    }
    if meta.corpus_hash != corpus_hash {
        return Err(Error::Config(format!(
            "{} was trained on a different corpus",
            path.display()
        )));
    }
    Ok((corpus, state, config_hash, corpus_hash))
}

/// Evaluates a checkpoint; writes `eval.json` and `report.txt`.
pub fn run_eval(cfg: &ExperimentConfig, checkpoint: Option<&Path>, ablation: Ablation) -> Result<EvalResult> {
    let (corpus, state, config_hash, corpus_hash) = load_for_eval(cfg, checkpoint)?;
    let mut result = evaluate(&corpus, &state, &cfg.ppr, &ablation.apply(&cfg.infer))?;
    result.config_hash = config_hash;
    result.corpus_hash = corpus_hash;
    let paths = cfg.paths();
    fs::create_dir_all(&paths.root).map_err(|e| Error::io(&paths.root, e))?;
    let body = serde_json::to_string_pretty(&result).expect("result serializes");
    fs::write(paths.eval(), body + "\n").map_err(|e| Error::io(paths.eval(), e))?;
    fs::write(paths.report(), format_table(&result)).map_err(|e| Error::io(paths.report(), e))?;
    Ok(result)
}

/// Two-row text table: alignment and dangling.
pub fn format_table(r: &EvalResult) -> String {
    let mut s = format!(
        "{:<10} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6}\n",
        "", "H@1", "H@10", "MRR", "P", "R", "F1"
    );
    s += &format!(
        "{:<10} {:>6.3} {:>6.3} {:>6.3} {:>6.3} {:>6.3} {:>6.3}\n",
        "alignment", r.relaxed.hits1, r.relaxed.hits10, r.relaxed.mrr, r.alignment.p, r.alignment.r, r.alignment.f1
    );
    s += &format!(
        "{:<10} {:>6} {:>6} {:>6} {:>6.3} {:>6.3} {:>6.3}\n",
        "dangling", "-", "-", "-", r.dangling.p, r.dangling.r, r.dangling.f1
    );
    s
}

#[derive(Clone, Debug, Serialize)]
pub struct PprListing {
    pub source: String,
    pub top: Vec<(String, f64)>,
    pub sum: f64,
}

/// Top-`k` PPR values from the entity labelled `uri` in KG `side` (1 or 2).
pub fn run_ppr(cfg: &ExperimentConfig, uri: &str, side: u8, k: usize) -> Result<PprListing> {
    let corpus = cfg.load_corpus()?;
    let kg = match side {
        1 => &corpus.kg1,
        2 => &corpus.kg2,
        _ => return Err(Error::InvalidArgument(format!("kg side must be 1 or 2, got {side}"))),
    };
    let source = kg
        .entity_by_label(uri)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown entity `{uri}` in kg{side}")))?;
    let pi = ppr(kg, source, &cfg.ppr)?;
    let sum = pi.iter().sum();
    let mut order: Vec<usize> = (0..pi.len()).collect();
    order.sort_by(|&a, &b| pi[b].total_cmp(&pi[a]).then(a.cmp(&b)));
    let label = |e: usize| kg.entity_label(e).map_or_else(|| e.to_string(), str::to_owned);
    Ok(PprListing {
        source: uri.to_string(),
        top: order.into_iter().take(k).map(|e| (label(e), pi[e])).collect(),
        sum,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct InferLine {
    pub direction: String,
    pub source: String,
    pub best: f64,
    pub dangling: bool,
    pub threshold: f64,
    pub candidates: Vec<(String, f64)>,
}

/// Ranks test sources (matchable and dangling) against all unseeded
/// targets with a validation-calibrated threshold; writes `infer.jsonl`.
pub fn run_infer(
    cfg: &ExperimentConfig,
    checkpoint: Option<&Path>,
    ablation: Ablation,
    top: usize,
) -> Result<Vec<InferLine>> {
    let (corpus, state, _, _) = load_for_eval(cfg, checkpoint)?;
    let icfg = ablation.apply(&cfg.infer);
    let (z1, z2) = encode(&corpus.kg1, &corpus.kg2, &state)?;
    let tables = if icfg.use_hos && icfg.hos_weight != 0.0 {
        Some(ScoreTables::compute(&corpus.kg1, &corpus.kg2, &corpus.seed_train, &cfg.ppr)?)
    } else {
        None
    };
    let labels = corpus.dangling();
    let mut lines = Vec::new();
    for &swap in corpus.direction.passes() {
        let (emb, tabs, src_kg, dst_kg) = if swap {
            ((&z2, &z1), tables.as_ref().map(|t| (&t.kg2, &t.kg1)), &corpus.kg2, &corpus.kg1)
        } else {
            ((&z1, &z2), tables.as_ref().map(|t| (&t.kg1, &t.kg2)), &corpus.kg1, &corpus.kg2)
        };
        let pick = |p: &(usize, usize)| if swap { (p.1, p.0) } else { *p };
        let (dv, dt) = if swap {
            (&labels.kg2_valid, &labels.kg2_test)
        } else {
            (&labels.kg1_valid, &labels.kg1_test)
        };
        let seeded: BTreeSet<usize> = corpus.seed_train.iter().map(|p| pick(p).1).collect();
        let cols: Vec<usize> = (0..dst_kg.entity_count()).filter(|e| !seeded.contains(e)).collect();
        let valid_rows: Vec<usize> = corpus.links_valid.iter().map(|p| pick(p).0).chain(dv.iter().copied()).collect();
        let threshold = if valid_rows.is_empty() {
            f64::NEG_INFINITY
        } else {
            calibrate_threshold(&infer(emb, tabs, &valid_rows, &cols, &icfg, f64::NEG_INFINITY)?, dv)?
        };
        let rows: Vec<usize> = corpus.links_test.iter().map(|p| pick(p).0).chain(dt.iter().copied()).collect();
        let report = infer(emb, tabs, &rows, &cols, &icfg, threshold)?;
        let name = |kg: &crate::data::KnowledgeGraph, e: usize| {
            kg.entity_label(e).map_or_else(|| e.to_string(), str::to_owned)
        };
        for s in report.sources {
            lines.push(InferLine {
                direction: if swap { "kg2_to_kg1" } else { "kg1_to_kg2" }.to_string(),
                source: name(src_kg, s.source),
                best: s.best,
                dangling: s.dangling,
                threshold,
                candidates: s.ranked.iter().take(top).map(|&(c, v)| (name(dst_kg, c), v)).collect(),
            });
        }
    }
    let path = cfg.paths().infer();
    fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    for l in &lines {
        writeln!(f, "{}", serde_json::to_string(l).expect("line serializes")).map_err(|e| Error::io(&path, e))?;
    }
    Ok(lines)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_apply_by_dot_path() {
        let cfg = ExperimentConfig::from_toml_str(
            "[train]\nepochs = 3\n",
            &["train.lr=0.01".into(), "ot.lambda=0".into(), "dataset.path=some/dir".into()],
        )
        .unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.lr, 0.01);
        assert_eq!(cfg.ot.lambda, 0.0);
        assert_eq!(cfg.dataset.path, PathBuf::from("some/dir"));
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        assert!(matches!(
            ExperimentConfig::from_toml_str("", &["train.learning_rate=1".into()]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_toml_str("", &["nonsense".into()]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_toml_str("", &["contrastive.tau_plus=1.0".into()]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig {
            output_dir: "elsewhere".into(),
            ..a.clone()
        };
        assert_eq!(a.config_hash(), b.config_hash());
        let c = ExperimentConfig::from_toml_str("", &["rng_seed=5".into()]).unwrap();
        assert_ne!(a.config_hash(), c.config_hash());
        assert_eq!(a.config_hash().len(), 64);
    }

    #[test]
    fn toml_round_trip() {
        let a = ExperimentConfig::from_toml_str("", &["ppr.method=\"power_iteration\"".into()]).unwrap();
        let b = ExperimentConfig::from_toml_str(&a.to_toml(), &[]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = EncoderConfig::default();
        let state = EncoderState::init(&cfg, 5, 4, 1).unwrap();
        let meta = CheckpointMeta {
            version: SIDECAR_VERSION,
            config_hash: "c".into(),
            corpus_hash: "d".into(),
            turn: 0,
            seeds: 3,
            tensors: vec![],
        };
        let path = dir.path().join("m.bin");
        save_checkpoint(&path, &state, &meta).unwrap();
        let (back, m) = load_checkpoint(&path, &cfg).unwrap();
        assert_eq!(back, state);
        assert_eq!(m, meta);
    }
}
