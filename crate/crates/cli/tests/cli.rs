use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};
use werl::ingest::{SynthConfig, TextFormat};
use werl::model::Model;
use werl::pipeline::{
    read_predictions, run_experiment, write_run_dir, ExperimentConfig, PredictionRow, DEFAULT_MAX_CROSS_PRODUCT,
};
use werl::weights::WeightVector;

fn werl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_werl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn small_synth() -> SynthConfig {
    let mut c = SynthConfig::febrl_like();
    c.records_a = 400;
    c.records_b = 400;
    c
}

fn small_experiment() -> ExperimentConfig {
    let mut c = ExperimentConfig {
        synthetic: Some(small_synth()),
        ..ExperimentConfig::febrl_like()
    };
    c.embed.dim = 8;
    c.embed.epochs = 20;
    c.weights.epochs = 30;
    c
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

/// Generate a small dataset and train a model on it; returns (data, run) dirs.
fn trained(root: &Path, extra: &[&str]) -> (PathBuf, PathBuf) {
    let synth = write(root, "synth.toml", &small_synth().to_toml());
    let config = write(root, "experiment.toml", &small_experiment().to_toml());
    let data = root.join("data");
    let run = root.join("run");
    let o = werl(&["generate", "--config", path(&synth), "--seed", "5", "--out", path(&data)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut args = vec!["train", "--data", path(&data), "--config", path(&config), "--out", path(&run)];
    args.extend_from_slice(extra);
    let o = werl(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    (data, run)
}

#[test]
fn generate_is_deterministic() {
    let root = tempfile::tempdir().unwrap();
    let synth = write(root.path(), "synth.toml", &small_synth().to_toml());
    for out in ["one", "two"] {
        let o = werl(&["generate", "--config", path(&synth), "--seed", "9", "--out", path(&root.path().join(out))]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for f in ["A.csv", "B.csv", "truth_links.csv"] {
        let one = fs::read(root.path().join("one").join(f)).unwrap();
        let two = fs::read(root.path().join("two").join(f)).unwrap();
        assert!(!one.is_empty());
        assert_eq!(one, two, "{f}");
    }
}

#[test]
fn generate_rejects_malformed_config_naming_the_key() {
    let root = tempfile::tempdir().unwrap();
    let text = small_synth().to_toml().replace("records_a", "recrods_a");
    let synth = write(root.path(), "bad.toml", &text);
    let o = werl(&["generate", "--config", path(&synth), "--out", path(&root.path().join("out"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("recrods_a"), "{}", stderr(&o));
}

#[test]
fn manifest_digests_are_recomputable() {
    let root = tempfile::tempdir().unwrap();
    let (data, run) = trained(root.path(), &[]);
    let manifest: toml::Table = fs::read_to_string(run.join("manifest.toml")).unwrap().parse().unwrap();
    assert_eq!(manifest["command"].as_str(), Some("train"));
    let inputs = manifest["inputs"].as_array().unwrap();
    assert_eq!(inputs.len(), 4);
    for input in inputs {
        let p = input["path"].as_str().unwrap();
        let digest: String = Sha256::digest(fs::read(p).unwrap()).iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(input["sha256"].as_str(), Some(digest.as_str()));
    }
    assert!(manifest["seeds"].as_table().unwrap().contains_key("embed"));
    let count = |d: &Path| {
        fs::read_dir(d)
            .unwrap()
            .filter(|e| e.as_ref().unwrap().file_name() == "manifest.toml")
            .count()
    };
    assert_eq!((count(&data), count(&run)), (1, 1));
}

#[test]
fn train_writes_model_and_losses() {
    let root = tempfile::tempdir().unwrap();
    let (_, run) = trained(root.path(), &[]);
    for f in ["model.tsv", "loss_embed.csv", "loss_weights.csv", "metrics.csv", "report.txt"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let model = Model::load(&run.join("model.tsv")).unwrap();
    assert_ne!(model.weights, WeightVector::ones(model.weights.len()));
}

#[test]
fn train_merl_keeps_unit_weights() {
    let root = tempfile::tempdir().unwrap();
    let (_, run) = trained(root.path(), &["--merl"]);
    let model = Model::load(&run.join("model.tsv")).unwrap();
    assert_eq!(model.weights, WeightVector::ones(6));
}

#[test]
fn train_missing_data_dir_exits_2() {
    let root = tempfile::tempdir().unwrap();
    let o = werl(&[
        "train",
        "--data",
        path(&root.path().join("absent")),
        "--out",
        path(&root.path().join("run")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("absent"), "{}", stderr(&o));
}

#[test]
fn experiment_matches_library_run() {
    let root = tempfile::tempdir().unwrap();
    let config = write(root.path(), "experiment.toml", &small_experiment().to_toml());
    let out = root.path().join("cli");
    let o = werl(&["experiment", "--config", path(&config), "--seed", "4", "--out", path(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));

    let lib = root.path().join("lib");
    let run = run_experiment(&small_experiment().with_seed(4)).unwrap();
    write_run_dir(&lib, &run).unwrap();
    for f in ["metrics.csv", "model.tsv", "loss_embed.csv", "loss_weights.csv", "report.txt"] {
        assert_eq!(fs::read(out.join(f)).unwrap(), fs::read(lib.join(f)).unwrap(), "{f}");
    }
    assert_eq!(stdout(&o).trim(), run.report.metrics_line());
}

#[test]
fn predict_matches_library_call() {
    let root = tempfile::tempdir().unwrap();
    let (data, run) = trained(root.path(), &[]);
    let model_path = run.join("model.tsv");
    let (a, b) = (data.join("A.csv"), data.join("B.csv"));
    let out = root.path().join("pred");
    let o = werl(&["predict", "--model", path(&model_path), "--a", path(&a), "--b", path(&b), "--out", path(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));

    let model = Model::load(&model_path).unwrap();
    let direct: Vec<PredictionRow> = model
        .predict_files(&a, &b, None, &TextFormat::comma(), None, DEFAULT_MAX_CROSS_PRODUCT)
        .unwrap()
        .iter()
        .map(PredictionRow::from)
        .collect();
    let cli = read_predictions(&out.join("predictions.csv")).unwrap();
    assert!(!cli.is_empty());
    assert_eq!(cli.len(), direct.len());
    for (x, y) in cli.iter().zip(&direct) {
        assert_eq!((x.a_id, x.b_id, x.decision), (y.a_id, y.b_id, y.decision));
        assert_eq!(x.p.to_bits(), y.p.to_bits());
        assert_eq!(x.g.map(f64::to_bits), y.g.map(f64::to_bits));
    }
}

#[test]
fn predict_identical_records_and_empty_candidates() {
    let root = tempfile::tempdir().unwrap();
    let (data, run) = trained(root.path(), &[]);
    let model = path(&run.join("model.tsv")).to_string();
    let a_text = fs::read_to_string(data.join("A.csv")).unwrap();
    let mut lines = a_text.lines();
    let header = lines.next().unwrap();
    let first = lines.next().unwrap();
    let (id, rest) = first.split_once(',').unwrap();

    let a = write(root.path(), "a.csv", &format!("{header}\n{first}\n"));
    let b = write(root.path(), "b.csv", &format!("{header}\n900000,{rest}\n"));
    let pairs = write(root.path(), "pairs.csv", &format!("a_id,b_id\n{id},900000\n"));
    let out = root.path().join("same");
    let o = werl(&[
        "predict", "--model", &model, "--a", path(&a), "--b", path(&b), "--pairs", path(&pairs), "--out", path(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("predictions.csv")).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[..4], [id, "900000", "0.0", "0.5"]);

    let model_schema = Model::load(&run.join("model.tsv")).unwrap().schema().unwrap();
    let blocking = model_schema.blocking().unwrap();
    let mut cells: Vec<String> = rest.split(',').map(str::to_string).collect();
    cells[blocking.index()] = "zzzzunseen".into();
    let far = write(root.path(), "far.csv", &format!("{header}\n900001,{}\n", cells.join(",")));
    let out = root.path().join("empty");
    let o = werl(&["predict", "--model", &model, "--a", path(&a), "--b", path(&far), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(out.join("predictions.csv")).unwrap(), "a_id,b_id,g,P,decision\n");
}

#[test]
fn predict_schema_mismatch_exits_2() {
    let root = tempfile::tempdir().unwrap();
    let (data, run) = trained(root.path(), &[]);
    let bad = write(root.path(), "bad.csv", "id,colour\n1,red\n");
    let o = werl(&[
        "predict",
        "--model",
        path(&run.join("model.tsv")),
        "--a",
        path(&bad),
        "--b",
        path(&data.join("B.csv")),
        "--out",
        path(&root.path().join("out")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("schema mismatch"), "{}", stderr(&o));
}

fn evaluate(root: &Path, predictions: &str, truth: &str) -> Output {
    let p = write(root, "predictions.csv", predictions);
    let t = write(root, "truth.csv", truth);
    werl(&["evaluate", "--predictions", path(&p), "--truth", path(&t)])
}

fn prediction_rows(rows: &[(u64, u64, bool)]) -> String {
    let mut s = String::from("a_id,b_id,g,P,decision\n");
    for &(a, b, m) in rows {
        let (g, p, d) = if m { ("1.0", "0.7310585786300049", "match") } else { ("-1.0", "0.2689414213699951", "non_match") };
        s.push_str(&format!("{a},{b},{g},{p},{d}\n"));
    }
    s
}

fn f_score(out: &Output) -> f64 {
    let text = stdout(out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("tp,fp,tn,fn,accuracy,precision,recall,f_score"));
    lines.next().unwrap().rsplit(',').next().unwrap().parse().unwrap()
}

#[test]
fn evaluate_perfect_and_all_negative() {
    let root = tempfile::tempdir().unwrap();
    let truth = "a_id,b_id\n1,11\n2,12\n";
    let o = evaluate(root.path(), &prediction_rows(&[(1, 11, true), (2, 12, true), (1, 12, false)]), truth);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(f_score(&o), 1.0);
    let o = evaluate(root.path(), &prediction_rows(&[(1, 11, false), (2, 12, false), (1, 12, false)]), truth);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(f_score(&o), 0.0);
}

#[test]
fn evaluate_reproduces_hand_confusion() {
    let root = tempfile::tempdir().unwrap();
    let mut rows = Vec::new();
    let mut truth = String::from("a_id,b_id\n");
    for i in 0..100u64 {
        let is_link = i < 12;
        let predicted = i < 9 || i == 99;
        rows.push((i, 1000 + i, predicted));
        if is_link {
            truth.push_str(&format!("{i},{}\n", 1000 + i));
        }
    }
    let o = evaluate(root.path(), &prediction_rows(&rows), &truth);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        stdout(&o).lines().nth(1),
        Some("9,1,87,3,0.960000,0.900000,0.750000,0.818182")
    );
}

#[test]
fn evaluate_disjoint_ids_exit_2() {
    let root = tempfile::tempdir().unwrap();
    let o = evaluate(root.path(), &prediction_rows(&[(1, 11, true)]), "a_id,b_id\n5,55\n");
    assert_eq!(o.status.code(), Some(2));
}
