use std::path::Path;
use std::process::{Command, Output};

use structalign::experiment::{load_checkpoint, ExperimentConfig};
use structalign::ggan::encode;
use structalign::ppr::cosine_matrix;

fn structalign(dir: &Path, args: &[&str]) -> Output {
    let data = format!("dataset.path={}", dir.join("data").display());
    let out = format!("output_dir={}", dir.join("run").display());
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_structalign"));
    cmd.args(args)
        .args(["--set", &data, "--set", &out])
        .args(["--set", "synthetic.core_size=40", "--set", "train.epochs=2", "--set", "train.turns=2"]);
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&structalign(d, &["gen-synth"])), 0);
    let first = structalign(d, &["train"]);
    assert_eq!(code(&first), 0, "{}", String::from_utf8_lossy(&first.stderr));
    for f in ["model.bin", "model.json", "turn0.bin", "turn1.bin", "telemetry.jsonl", "config.toml"] {
        assert!(d.join("run").join(f).exists(), "{f}");
    }

    // Same config again: refused without --force.
    let again = structalign(d, &["train"]);
    assert_eq!(code(&again), 2);
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    assert_eq!(code(&structalign(d, &["train", "--force"])), 0);

    let table = structalign(d, &["eval"]);
    assert_eq!(code(&table), 0);
    let text = stdout(&table);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0].split_whitespace().collect::<Vec<_>>(), ["H@1", "H@10", "MRR", "P", "R", "F1"]);
    assert!(lines[1].starts_with("alignment"));
    assert!(lines[2].starts_with("dangling"));
    assert_eq!(std::fs::read_to_string(d.join("run/report.txt")).unwrap(), text);

    let json = structalign(d, &["eval", "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("run/model.json")).unwrap()).unwrap();
    assert_eq!(v["config_hash"], meta["config_hash"]);
    assert_eq!(v["corpus_hash"], meta["corpus_hash"]);

    // Eval under a different config is a hash mismatch.
    let other = structalign(d, &["eval", "--set", "infer.csls_k=3"]);
    assert_eq!(code(&other), 2);
}

#[test]
fn ablated_eval_is_pure_cosine() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&structalign(d, &["gen-synth"])), 0);
    assert_eq!(code(&structalign(d, &["train"])), 0);
    let out = structalign(d, &["eval", "--no-hos", "--no-csls", "--json"]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();

    let mut cfg = ExperimentConfig::default();
    cfg.dataset.path = d.join("data");
    let corpus = cfg.load_corpus().unwrap();
    cfg.encoder.hidden_dim = 32;
    let (state, _) = load_checkpoint(&d.join("run/model.bin"), &cfg.encoder).unwrap();
    let (z1, z2) = encode(&corpus.kg1, &corpus.kg2, &state).unwrap();
    let test = &corpus.links_test;
    let rows: Vec<usize> = test.iter().map(|p| p.0).collect();
    let cols: Vec<usize> = test.iter().map(|p| p.1).collect();
    let sim = cosine_matrix(&z1.select_rows(&rows), &z2.select_rows(&cols)).unwrap();
    let (mut h1, mut h10, mut mrr) = (0.0, 0.0, 0.0);
    for i in 0..rows.len() {
        let gold = sim.get(i, i);
        let rank = 1 + sim.row(i).iter().filter(|&&s| s > gold).count();
        h1 += (rank == 1) as u8 as f64;
        h10 += (rank <= 10) as u8 as f64;
        mrr += 1.0 / rank as f64;
    }
    let n = rows.len() as f64;
    let close = |key: &str, want: f64| {
        let got = v["relaxed"][key].as_f64().unwrap();
        assert!((got - want).abs() < 1e-12, "{key}: {got} vs {want}");
    };
    close("hits1", h1 / n);
    close("hits10", h10 / n);
    close("mrr", mrr / n);
}

#[test]
fn usage_and_missing_inputs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let bin = env!("CARGO_BIN_EXE_structalign");
    let out = Command::new(bin).arg("no-such-command").output().unwrap();
    assert_eq!(code(&out), 2);
    // No dataset generated yet.
    assert_eq!(code(&structalign(d, &["train"])), 2);
    // Unknown config key.
    assert_eq!(code(&structalign(d, &["gen-synth", "--set", "train.bogus=1"])), 2);
    let missing = Command::new(bin).args(["eval", "-c", "/nonexistent/cfg.toml"]).output().unwrap();
    assert_eq!(code(&missing), 2);
    // Unknown entity URI.
    assert_eq!(code(&structalign(d, &["gen-synth"])), 0);
    let out = structalign(d, &["ppr", "--source", "not-an-entity"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn ppr_listing_sums_to_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&structalign(d, &["gen-synth"])), 0);
    let first = std::fs::read_to_string(d.join("data/rel_triples_1")).unwrap();
    let uri = first.lines().next().unwrap().split('\t').next().unwrap().to_string();
    let out = structalign(d, &["ppr", "--source", &uri, "--top", "3"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    let sum: f64 = lines[3].split('\t').nth(1).unwrap().parse().unwrap();
    assert!((sum - 1.0).abs() < 1e-8);
}
