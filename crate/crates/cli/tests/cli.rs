use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use debias_core::bias_space::{BiasSpec, Category, NamedTokens};
use debias_core::embedding::EmbeddingSet;
use debias_core::grad::SeededRng;
use debias_core::manifest::RunManifest;
use nalgebra::DMatrix;

fn debias(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_debias"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn fixture(dir: &Path) -> PathBuf {
    let fx = dir.join("fx");
    let o = debias(&["fixture", "--out", s(&fx), "--seed", "7"]);
    assert!(o.status.success(), "{o:?}");
    fx
}

/// Small random set with a he/she axis and an explicit spec.
fn small_inputs(dir: &Path, dim: usize) -> (PathBuf, PathBuf) {
    let mut rng = SeededRng::new(3);
    let words = ["he", "she", "man", "nurse", "doctor", "table", "chair", "river", "stone", "cloud"];
    let m = DMatrix::from_fn(words.len(), dim, |_, _| rng.normal());
    let set = EmbeddingSet::new("small", words.iter().map(|w| w.to_string()).collect(), m).unwrap();
    let emb = dir.join("small.txt");
    set.save_word2vec_text(&emb).unwrap();
    let spec = BiasSpec {
        version: 1,
        category: Category::Gender,
        targets: vec!["man".into()],
        neutral_words: None,
        groups: vec![NamedTokens::new("m", ["he"]), NamedTokens::new("f", ["she"])],
        attribute_sets: vec![NamedTokens::new("jobs", ["nurse", "doctor"])],
    };
    let spec_path = dir.join("spec.toml");
    spec.save(&spec_path).unwrap();
    (emb, spec_path)
}

fn table_value(out: &str, metric: &str, col: usize) -> f64 {
    let line = out
        .lines()
        .find(|l| l.split_whitespace().next() == Some(metric))
        .unwrap_or_else(|| panic!("no {metric} row in\n{out}"));
    line.split_whitespace().nth(col).unwrap().parse().unwrap()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(debias(&["--help"]).status.code(), Some(0));
    assert_eq!(debias(&["--version"]).status.code(), Some(0));
    let o = debias(&["debias", "--bias-spec", "builtin:gender", "--method", "dsd", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(debias(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "2 2\na 1 2\na 3 4\n").unwrap();
    let o = debias(&[
        "debias", "--embeddings", s(&bad), "--bias-spec", "builtin:gender", "--method", "dsd", "--out",
        s(&dir.path().join("o.txt")),
    ]);
    assert_eq!(o.status.code(), Some(3));
    let o = debias(&["eval", "--embeddings", s(&dir.path().join("missing.txt")), "--bias-spec", "builtin:gender"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let (emb, spec) = small_inputs(dir.path(), 6);
    let out = dir.path().join("o.txt");
    for flags in [["--lambda", "1.5"], ["--blocks", "0"]] {
        let mut args = vec!["debias", "--embeddings", s(&emb), "--bias-spec", s(&spec), "--method", "dsd", "--out", s(&out)];
        args.extend(flags);
        assert_eq!(debias(&args).status.code(), Some(2), "{flags:?}");
    }
    let o = debias(&["debias", "--embeddings", s(&emb), "--bias-spec", "builtin:klingon", "--method", "dsd", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn divergence_exits_4_and_keeps_last_good() {
    let dir = tempfile::tempdir().unwrap();
    let (emb, spec) = small_inputs(dir.path(), 6);
    let out = dir.path().join("o.txt");
    let o = debias(&[
        "debias", "--embeddings", s(&emb), "--bias-spec", s(&spec), "--method", "baseline", "--optimizer", "sgd",
        "--lr", "1e300", "--epochs", "5", "--out", s(&out),
    ]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("o.txt.last-good.ckpt").exists());
    assert!(!out.exists());
}

#[test]
fn zero_epochs_returns_normalized_input() {
    let dir = tempfile::tempdir().unwrap();
    let (emb, spec) = small_inputs(dir.path(), 6);
    for method in ["dsd", "baseline"] {
        let out = dir.path().join(format!("{method}.txt"));
        let o = debias(&[
            "debias", "--embeddings", s(&emb), "--bias-spec", s(&spec), "--method", method, "--epochs", "0", "--out",
            s(&out),
        ]);
        assert!(o.status.success(), "{o:?}");
        let got = EmbeddingSet::load_word2vec_text(&out).unwrap();
        let want = EmbeddingSet::load_word2vec_text(&emb).unwrap().normalize_rows().unwrap();
        assert_eq!(got.vocab(), want.vocab());
        // Values are written with nine significant digits.
        assert!((got.matrix() - want.matrix()).amax() < 1e-8, "{method}");
    }
}

#[test]
fn manifest_records_schedule_defaults_and_digests() {
    let dir = tempfile::tempdir().unwrap();
    let (emb, spec) = small_inputs(dir.path(), 768);
    let out = dir.path().join("o.txt");
    let o = debias(&[
        "debias", "--embeddings", s(&emb), "--bias-spec", s(&spec), "--method", "dsd", "--epochs", "1", "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{o:?}");
    let m = RunManifest::load(dir.path().join("o.txt.manifest.json")).unwrap();
    assert_eq!(m.config["blocks"], 1);
    assert_eq!(m.config["lr"], 5e-5);
    assert_eq!(m.config["batch_size"], 2048);
    assert_eq!(m.seed, 7);
    assert_eq!(m.inputs.len(), 2);
    assert_eq!(m.outputs.len(), 2);
    for d in m.inputs.iter().chain(&m.outputs) {
        let bytes = std::fs::read(&d.path).unwrap();
        assert_eq!(bytes.len() as u64, d.bytes);
        assert_eq!(debias_core::manifest::FileDigest::of(&d.path).unwrap().sha256, d.sha256);
    }
    assert!(m.command.iter().any(|a| a == "--epochs"));

    // Without --epochs the d=768 row of the schedule applies.
    let cfg = debias_core::dsd::TrainConfig::for_dim(768);
    assert_eq!((cfg.blocks, cfg.lr, cfg.batch_size, cfg.epochs), (1, 5e-5, 2048, 100));
}

#[test]
fn eval_same_file_twice_has_zero_deltas() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture(dir.path());
    let emb = fx.join("embeddings.txt");
    let both = format!("{},{}", s(&emb), s(&emb));
    let report = dir.path().join("r.json");
    let o = debias(&[
        "eval", "--embeddings", &both, "--bias-spec", s(&fx.join("spec.toml")), "--metrics", "mac,ss,crows,downstream",
        "--stereoset", s(&fx.join("stereo.jsonl")), "--crows", s(&fx.join("crows.csv")), "--corpus",
        s(&fx.join("corpus.tsv")), "--report", s(&report),
    ]);
    assert!(o.status.success(), "{o:?}");
    let out = stdout(&o);
    for metric in ["mac", "ss", "crows", "accuracy"] {
        assert_eq!(table_value(&out, metric, 3), 0.0, "{metric}");
    }
    assert_eq!(table_value(&out, "mac_p_value", 3), 1.0);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["mac"]["p_value"], 1.0);
    assert_eq!(json["mac"]["delta"], 0.0);
}

#[test]
fn eval_orthogonal_fixture_prints_mac_one() {
    let dir = tempfile::tempdir().unwrap();
    let set = EmbeddingSet::from_rows(
        "orth",
        [("he", vec![1.0, 0.0, 0.0]), ("she", vec![0.0, 1.0, 0.0]), ("man", vec![1.0, 1.0, 0.0]), ("nurse", vec![0.0, 0.0, 2.0])],
    )
    .unwrap();
    let emb = dir.path().join("orth.txt");
    set.save_word2vec_text(&emb).unwrap();
    let spec = BiasSpec {
        version: 1,
        category: Category::Gender,
        targets: vec!["man".into()],
        neutral_words: None,
        groups: vec![NamedTokens::new("m", ["he"]), NamedTokens::new("f", ["she"])],
        attribute_sets: vec![NamedTokens::new("jobs", ["nurse"])],
    };
    let spec_path = dir.path().join("spec.toml");
    spec.save(&spec_path).unwrap();
    let o = debias(&["eval", "--embeddings", s(&emb), "--bias-spec", s(&spec_path)]);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(table_value(&stdout(&o), "mac", 1), 1.0);
}

#[test]
fn eval_metric_without_data_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture(dir.path());
    let emb = fx.join("embeddings.txt");
    for metric in ["ss", "crows", "downstream"] {
        let o = debias(&["eval", "--embeddings", s(&emb), "--metrics", metric]);
        assert_eq!(o.status.code(), Some(2), "{metric}");
    }
    let o = debias(&["eval", "--embeddings", s(&emb)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn ablate_refuses_non_empty_dir() {
    let dir = tempfile::tempdir().unwrap();
    let (emb, spec) = small_inputs(dir.path(), 6);
    let out = dir.path().join("ab");
    std::fs::create_dir(&out).unwrap();
    std::fs::write(out.join("keep"), "x").unwrap();
    let args = ["ablate", "--embeddings", s(&emb), "--bias-spec", s(&spec), "--out", s(&out), "--epochs", "2"];
    assert_eq!(debias(&args).status.code(), Some(2));
    assert_eq!(std::fs::read_to_string(out.join("keep")).unwrap(), "x");

    let mut forced = args.to_vec();
    forced.push("--force");
    let o = debias(&forced);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("seed=7"));
    let rows: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("ablation.json")).unwrap()).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 4);
    for run in ["baseline-sgd", "baseline-adam", "dsd-sgd", "dsd-adam"] {
        let m = RunManifest::load(out.join(format!("{run}.txt.manifest.json"))).unwrap();
        assert_eq!(m.seed, 7, "{run}");
    }
    let tsv = std::fs::read_to_string(out.join("ablation.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 5);
}

#[test]
fn inputs_are_not_modified() {
    let dir = tempfile::tempdir().unwrap();
    let (emb, spec) = small_inputs(dir.path(), 6);
    let before = (std::fs::read(&emb).unwrap(), std::fs::read(&spec).unwrap());
    let o = debias(&[
        "debias", "--embeddings", s(&emb), "--bias-spec", s(&spec), "--method", "dsd", "--epochs", "3", "--out",
        s(&dir.path().join("o.txt")),
    ]);
    assert!(o.status.success());
    assert_eq!(before, (std::fs::read(&emb).unwrap(), std::fs::read(&spec).unwrap()));
}

/// The fixture pair should show MAC rising and SS moving toward 50.
#[test]
fn fixture_eval_shows_direction_of_effect() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture(dir.path());
    let out = dir.path().join("deb.txt");
    let o = debias(&[
        "debias", "--embeddings", s(&fx.join("embeddings.txt")), "--bias-spec", s(&fx.join("spec.toml")), "--method",
        "dsd", "--out", s(&out),
    ]);
    assert!(o.status.success(), "{o:?}");
    let both = format!("{},{}", s(&fx.join("embeddings.txt")), s(&out));
    let o = debias(&[
        "eval", "--embeddings", &both, "--bias-spec", s(&fx.join("spec.toml")), "--metrics", "mac,ss", "--stereoset",
        s(&fx.join("stereo.jsonl")),
    ]);
    assert!(o.status.success(), "{o:?}");
    let table = stdout(&o);
    let mac_delta = table_value(&table, "mac", 3);
    let (ss_before, ss_after) = (table_value(&table, "ss", 1), table_value(&table, "ss", 2));
    assert!(mac_delta > 0.0, "MAC did not increase:\n{table}");
    assert!((ss_after - 50.0).abs() < (ss_before - 50.0).abs(), "SS did not move toward 50:\n{table}");
}
