//! End-to-end tests of the `fairint` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fairint::data::{synth_generate, Kind, Role, Schema};
use fairint::metrics::FairnessReport;
use fairint::model::{Architecture, FairIntModel, ModelConfig};
use fairint_cli::probe::ProbeReport;
use fairint_cli::reports::{read_history, AttentionStats};

fn fairint(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairint"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = fairint(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a small synthetic experiment config and returns its path.
fn config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("exp.toml");
    std::fs::write(
        &path,
        format!(
            "output_dir = \"out\"\n\
             [synth]\nn = 1500\nbeta = 2.0\nrho = 0.8\n\
             [train]\nlambda_ifc = 1.0\nlambda_fc = 5.0\nseed = 2\nmax_epochs = 8\nlearning_rate = 0.01\n{extra}"
        ),
    )
    .unwrap();
    path
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> T {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn synth_writes_csv_and_schema() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    ok(&[
        "synth",
        "--n",
        "100",
        "--beta",
        "1",
        "--rho",
        "0.5",
        "--seed",
        "7",
        "--out",
        s(&csv),
    ]);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 101);

    let schema = Schema::from_file(&dir.path().join("d.schema.toml")).unwrap();
    let numericals = schema
        .columns
        .iter()
        .filter(|c| c.kind == Kind::Numerical && c.role == Role::NonSensitive)
        .count();
    assert_eq!(numericals, 5);
    assert_eq!(schema.columns.len(), 7);
    assert_eq!(schema.sensitive().name, "s");
    assert_eq!(schema.label().name, "y");

    let again = dir.path().join("e.csv");
    ok(&[
        "synth",
        "--n",
        "100",
        "--beta",
        "1",
        "--rho",
        "0.5",
        "--seed",
        "7",
        "--out",
        s(&again),
    ]);
    assert_eq!(std::fs::read(&again).unwrap(), text.as_bytes());
    assert_eq!(
        std::fs::read(dir.path().join("e.schema.toml")).unwrap(),
        std::fs::read(dir.path().join("d.schema.toml")).unwrap()
    );
}

#[test]
fn synth_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = fairint(&[
        "synth",
        "--n",
        "99",
        "--beta",
        "1",
        "--rho",
        "0.5",
        "--out",
        s(&dir.path().join("d.csv")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let unwritable = dir.path().join("missing").join("d.csv");
    let out = fairint(&[
        "synth",
        "--n",
        "100",
        "--beta",
        "1",
        "--rho",
        "0.5",
        "--out",
        s(&unwritable),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("missing"), "{}", stderr(&out));
}

#[test]
fn missing_schema_exits_2_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(
        &cfg,
        "output_dir = \"out\"\n[dataset]\ncsv_path = \"d.csv\"\nschema_path = \"nowhere.schema.toml\"\n",
    )
    .unwrap();
    let out = fairint(&["train", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr(&out).contains("nowhere.schema.toml"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn bad_data_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("d.csv"), "x,s,y\n1,a,0\nfoo,b,1\n").unwrap();
    std::fs::write(
        dir.path().join("d.toml"),
        "[[columns]]\nname = \"x\"\nkind = \"numerical\"\nrole = \"non_sensitive\"\n\
         [[columns]]\nname = \"s\"\nkind = \"categorical\"\ncardinality = 2\nrole = \"sensitive\"\n\
         [[columns]]\nname = \"y\"\nkind = \"categorical\"\ncardinality = 2\nrole = \"label\"\n",
    )
    .unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(
        &cfg,
        "output_dir = \"out\"\n[dataset]\ncsv_path = \"d.csv\"\nschema_path = \"d.toml\"\n",
    )
    .unwrap();
    let out = fairint(&["train", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));
}

#[test]
fn train_writes_artifacts_and_eval_reproduces_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "[train.ablation]\nenable_fc = false\n");
    ok(&["train", "--config", s(&cfg)]);
    let out = dir.path().join("out");
    for f in [
        "model.bin",
        "history.jsonl",
        "report.json",
        "attention.json",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
    }

    let (meta, epochs) = read_history(&out.join("history.jsonl")).unwrap();
    assert!(!meta.train.ablation.enable_fc);
    assert!(meta.train.ablation.enable_ifc && meta.train.ablation.enable_bid);
    assert_eq!(meta.train.seed, 2);
    assert_eq!(meta.architecture, Architecture::FairInt);
    assert_eq!(epochs.len(), 8);
    assert!(epochs.iter().all(|e| e.l_fc == 0.0));
    assert_eq!(
        epochs.iter().map(|e| e.epoch).collect::<Vec<_>>(),
        (1..=8).collect::<Vec<_>>()
    );

    let report: FairnessReport = read_json(&out.join("report.json"));
    let eval = ok(&[
        "eval",
        "--model",
        s(&out.join("model.bin")),
        "--config",
        s(&cfg),
    ]);
    let again: FairnessReport = serde_json::from_slice(&eval.stdout).unwrap();
    assert_eq!(again, report);
    assert_eq!(
        String::from_utf8(eval.stdout).unwrap(),
        std::fs::read_to_string(out.join("report.json")).unwrap()
    );

    let model = FairIntModel::load(&out.join("model.bin")).unwrap();
    let stats: AttentionStats = read_json(&out.join("attention.json"));
    assert_eq!(stats.heads.len(), 1);
    let names: Vec<&str> = stats.heads[0]
        .features
        .iter()
        .map(|f| f.feature.as_str())
        .collect();
    let expected: Vec<&str> = model.features().iter().map(|f| f.name.as_str()).collect();
    assert_eq!(names, expected);
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["train", "--config", s(&cfg), "--output-dir", s(&a)]);
    ok(&[
        "train",
        "--config",
        s(&cfg),
        "--output-dir",
        s(&b),
        "--seed",
        "3",
    ]);
    let (meta, _) = read_history(&b.join("history.jsonl")).unwrap();
    assert_eq!(meta.train.seed, 3);
    assert_ne!(
        std::fs::read(a.join("model.bin")).unwrap(),
        std::fs::read(b.join("model.bin")).unwrap()
    );
}

#[test]
fn invalid_flags_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "");
    let out = fairint(&["train", "--config", s(&cfg), "--threshold", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
    let out = fairint(&["train", "--config", s(&cfg), "--groups-from", "guess"]);
    assert_eq!(out.status.code(), Some(2));
    let bad = dir.path().join("bad.toml");
    std::fs::write(
        &bad,
        "output_dir = \"o\"\n[synth]\nn = 500\nbeta = 1.0\nrho = 0.5\n[train]\ndropout = 1.0\n",
    )
    .unwrap();
    let out = fairint(&["train", "--config", s(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("dropout"), "{}", stderr(&out));
}

#[test]
fn explain_has_one_row_per_feature_and_head() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "[model]\nattention_heads = 2\n");
    ok(&["train", "--config", s(&cfg)]);
    let model = dir.path().join("out").join("model.bin");
    let out = ok(&[
        "explain",
        "--model",
        s(&model),
        "--config",
        s(&cfg),
        "--split",
        "val",
    ]);
    let stats: AttentionStats = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(stats.split, "val");
    assert_eq!(stats.rows, 300);
    assert_eq!(stats.heads.len(), 2);
    for h in &stats.heads {
        assert_eq!(h.features.len(), 5);
        let total: f64 = h.features.iter().map(|f| f.mean).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(h
            .features
            .iter()
            .all(|f| f.mean > 0.0 && f.mean < 1.0 && f.min <= f.mean && f.mean <= f.max));
    }
}

#[test]
fn uniform_attention_model_explains_to_uniform_stats() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth_generate(200, 1.0, 0.5, 4)
        .unwrap()
        .split((0.6, 0.2, 0.2), 4)
        .unwrap();
    let mut model =
        FairIntModel::new(ModelConfig::default(), Architecture::FairInt, &ds, 1).unwrap();
    let mut store = model.params().clone();
    let id = store.id("bid.w_key.h0").unwrap();
    store
        .get_mut(id)
        .tensor
        .values_mut()
        .iter_mut()
        .for_each(|v| *v = 0.0);
    model.set_params(store).unwrap();
    let path = dir.path().join("m.bin");
    model.save(&path).unwrap();
    let csv = dir.path().join("d.csv");
    ds.write_csv(&csv).unwrap();

    let out = ok(&["explain", "--model", s(&path), "--data", s(&csv)]);
    let stats: AttentionStats = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(stats.split, "all");
    assert_eq!(stats.rows, 200);
    for f in &stats.heads[0].features {
        assert!((f.mean - 0.2).abs() < 1e-15);
        assert!(f.variance < 1e-30);
    }
}

#[test]
fn explain_rejects_a_vanilla_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "[train.ablation]\nenable_bid = false\n");
    ok(&["train", "--config", s(&cfg)]);
    let out_dir = dir.path().join("out");
    assert!(!out_dir.join("attention.json").exists());
    let out = fairint(&[
        "explain",
        "--model",
        s(&out_dir.join("model.bin")),
        "--config",
        s(&cfg),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_csv_round_trips_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "[sweep]\ngrid = [[1.0, 5.0]]\n");
    ok(&["sweep", "--config", s(&cfg)]);
    let out = dir.path().join("out");
    let text = std::fs::read_to_string(out.join("tradeoff.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "lambda_ifc,lambda_fc,auc,ddp,deo");

    ok(&["train", "--config", s(&cfg)]);
    let report: FairnessReport = read_json(&out.join("report.json"));
    let row: Vec<f64> = lines[1].split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(row, [1.0, 5.0, report.auc, report.ddp, report.deo]);
}

#[test]
fn empty_sweep_grid_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "[sweep]\ngrid = []\n");
    let out = fairint(&["sweep", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    let cfg = config(dir.path(), "");
    assert_eq!(
        fairint(&["sweep", "--config", s(&cfg)]).status.code(),
        Some(2)
    );
}

fn probe_synth(dir: &Path, rho: f64) -> ProbeReport {
    let csv = dir.join(format!("p{rho}.csv"));
    ok(&[
        "synth",
        "--n",
        "20000",
        "--beta",
        "2",
        "--rho",
        &rho.to_string(),
        "--seed",
        "5",
        "--out",
        s(&csv),
    ]);
    let schema = dir.join(format!("p{rho}.schema.toml"));
    let out = ok(&["probe", "--data", s(&csv), "--schema", s(&schema)]);
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn probe_finds_no_signal_without_proxies() {
    let dir = tempfile::tempdir().unwrap();
    let r = probe_synth(dir.path(), 0.0);
    assert_eq!(r.rows, 20_000);
    assert_eq!(r.coefficients.len(), 5);
    for c in &r.coefficients {
        assert!(c.coef.abs() < 0.1, "{c:?}");
    }
}

#[test]
fn probe_ranks_the_strongest_proxy_first() {
    let dir = tempfile::tempdir().unwrap();
    let r = probe_synth(dir.path(), 0.8);
    assert_eq!(r.coefficients[0].feature, "proxy1");
    assert!(r.coefficients[0].coef > 0.0);
    assert_eq!(r.coefficients[1].feature, "proxy2");

    let csv = dir.path().join("p0.8.csv");
    let schema = dir.path().join("p0.8.schema.toml");
    let again = ok(&["probe", "--data", s(&csv), "--schema", s(&schema)]);
    assert_eq!(
        serde_json::from_slice::<ProbeReport>(&again.stdout).unwrap(),
        r
    );
}

#[test]
fn probe_single_class_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("d.csv"), "x,s,y\n1,a,0\n2,a,1\n").unwrap();
    std::fs::write(
        dir.path().join("d.toml"),
        "[[columns]]\nname = \"x\"\nkind = \"numerical\"\nrole = \"non_sensitive\"\n\
         [[columns]]\nname = \"s\"\nkind = \"categorical\"\ncardinality = 2\nrole = \"sensitive\"\n\
         [[columns]]\nname = \"y\"\nkind = \"categorical\"\ncardinality = 2\nrole = \"label\"\n",
    )
    .unwrap();
    let out = fairint(&[
        "probe",
        "--data",
        s(&dir.path().join("d.csv")),
        "--schema",
        s(&dir.path().join("d.toml")),
    ]);
    assert_eq!(out.status.code(), Some(3));
}
