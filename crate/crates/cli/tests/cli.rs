use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scm-debias"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = run(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str], cwd: &Path) -> i32 {
    run(args, cwd).status.code().expect("exit code")
}

/// A planted workspace with an extracted pool and a short training config.
fn workspace() -> (tempfile::TempDir, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_path_buf();
    ok(&["planted", "--out", "w", "--seed", "3"], &dir);
    ok(
        &[
            "sample",
            "--corpus",
            "w/corpus.jsonl",
            "--lexicon",
            "w/lexicon.json",
            "--out",
            "w/pool.json",
            "--min-per-dimension",
            "100",
            "--dev-subsample",
            "10",
        ],
        &dir,
    );
    let mut config: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("w/debias.json")).unwrap()).unwrap();
    config["epochs"] = 2.into();
    fs::write(dir.join("w/short.json"), config.to_string()).unwrap();
    (tmp, dir)
}

fn measure(dir: &Path, encoder: &str, out: &str) -> String {
    ok(
        &[
            "measure", "--lexicon", "w/lexicon.json", "--pool", "w/pool.json", "--encoder", encoder, "--out", out,
            "--samples", "60", "--seed", "5",
        ],
        dir,
    )
}

#[test]
fn full_pipeline_with_manifests() {
    let (_tmp, dir) = workspace();
    measure(&dir, "w/encoder", "w/before.json");
    let stdout = ok(
        &[
            "debias",
            "--config",
            "w/short.json",
            "--pool",
            "w/pool.json",
            "--lexicon",
            "w/lexicon.json",
            "--encoder",
            "w/encoder",
            "--dev-pool",
            "w/pool.dev.json",
            "--out",
            "w/ckpt",
        ],
        &dir,
    );
    assert!(stdout.contains("epoch 1: mean L"), "{stdout}");
    measure(&dir, "w/ckpt", "w/after.json");

    let text = ok(&["report", "--before", "w/before.json", "--after", "w/after.json"], &dir);
    assert!(text.contains("X,Y,warmth") && text.contains("X,Y,competence"), "{text}");
    ok(
        &["report", "--before", "w/before.json", "--after", "w/after.json", "--format", "csv", "--out", "w/table.csv"],
        &dir,
    );
    let csv = fs::read_to_string(dir.join("w/table.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("test_name,ces_before,p_before"));

    ok(
        &["project", "--lexicon", "w/lexicon.json", "--pool", "w/pool.json", "--encoder", "w/ckpt", "--out", "w/points.csv"],
        &dir,
    );
    let points = fs::read_to_string(dir.join("w/points.csv")).unwrap();
    assert_eq!(points.lines().next(), Some("surface,group,warmth_coord,competence_coord"));

    let log = fs::read_to_string(dir.join("w/ckpt/training_log.jsonl")).unwrap();
    assert!(log.lines().any(|l| l.contains("\"type\":\"step\"")));
    assert!(log.lines().last().unwrap().contains("config_hash"));

    for artifact in [
        "w/corpus.jsonl",
        "w/pool.json",
        "w/pool.dev.json",
        "w/before.json",
        "w/after.json",
        "w/table.csv",
        "w/points.csv",
        "w/ckpt/run",
        "w/ckpt/training_log.jsonl",
    ] {
        let path = dir.join(format!("{artifact}.manifest.json"));
        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&path).unwrap_or_else(|_| panic!("{artifact} manifest"))).unwrap();
        assert!(manifest["started_at"].as_str().unwrap().ends_with('Z'));
        assert!(manifest["config_hash"].is_string());
    }
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("w/after.json.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seeds"]["ceat"], 5);
    assert!(m["inputs"]["w/ckpt"].is_string());
    let results: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("w/after.json")).unwrap()).unwrap();
    assert_eq!(results["manifest"], "after.json.manifest.json");
}

#[test]
fn results_are_byte_identical_across_runs() {
    let (_tmp, dir) = workspace();
    measure(&dir, "w/encoder", "w/a.json");
    measure(&dir, "w/encoder", "w/b.json");
    let a = fs::read(dir.join("w/a.json")).unwrap();
    let b = fs::read_to_string(dir.join("w/b.json")).unwrap();
    assert_eq!(String::from_utf8(a).unwrap().replace("a.json", "b.json"), b);
}

#[test]
fn empty_test_list_succeeds_with_no_rows() {
    let (_tmp, dir) = workspace();
    let mut lexicon: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("w/lexicon.json")).unwrap()).unwrap();
    lexicon["bias_test_specs"] = serde_json::json!([]);
    fs::write(dir.join("w/no-tests.json"), lexicon.to_string()).unwrap();
    ok(
        &["measure", "--lexicon", "w/no-tests.json", "--pool", "w/pool.json", "--encoder", "w/encoder", "--out", "w/e.json"],
        &dir,
    );
    let results: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("w/e.json")).unwrap()).unwrap();
    assert_eq!(results["results"], serde_json::json!([]));
}

#[test]
fn exit_codes_follow_error_class() {
    let (_tmp, dir) = workspace();
    // Validation.
    fs::write(dir.join("w/bad.json"), r#"{"alpha": 2.0}"#).unwrap();
    let debias = |config: &str| {
        code(
            &[
                "debias", "--config", config, "--pool", "w/pool.json", "--lexicon", "w/lexicon.json", "--encoder",
                "w/encoder", "--out", "w/x",
            ],
            &dir,
        )
    };
    assert_eq!(debias("w/bad.json"), 2);
    fs::write(dir.join("w/typo.json"), r#"{"alfa": 0.2}"#).unwrap();
    assert_eq!(debias("w/typo.json"), 2);
    // Numeric.
    fs::write(dir.join("w/huge.json"), r#"{"learning_rate": 1e12, "epochs": 1}"#).unwrap();
    assert_eq!(debias("w/huge.json"), 4);
    // Data: unreadable input and a pool lacking the targets.
    assert_eq!(
        code(
            &["measure", "--lexicon", "w/lexicon.json", "--pool", "w/none.json", "--encoder", "w/encoder", "--out", "w/e.json"],
            &dir
        ),
        3
    );
    fs::write(dir.join("w/small.txt"), "A warm day.\nA cold night.\n").unwrap();
    ok(
        &["sample", "--corpus", "w/small.txt", "--lexicon", "w/lexicon.json", "--out", "w/small.json"],
        &dir,
    );
    let out = run(
        &["measure", "--lexicon", "w/lexicon.json", "--pool", "w/small.json", "--encoder", "w/encoder", "--out", "w/e.json"],
        &dir,
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("X,Y,warmth"));
    // Report over mismatched test sets.
    measure(&dir, "w/encoder", "w/before.json");
    let mut one: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("w/before.json")).unwrap()).unwrap();
    one["results"].as_array_mut().unwrap().pop();
    fs::write(dir.join("w/one.json"), one.to_string()).unwrap();
    assert_eq!(code(&["report", "--before", "w/before.json", "--after", "w/one.json"], &dir), 2);
}

#[test]
fn init_toy_and_build_lexicon() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("toy.json"), r#"{"layers": 2, "hidden_dim": 8}"#).unwrap();
    let out = ok(&["init-toy", "--out", "toy", "--config", "toy.json", "--seed", "9"], dir);
    assert!(out.contains("2 layers, hidden size 8"), "{out}");
    assert!(dir.join("toy/params.bin").exists());

    ok(&["planted", "--out", "w"], dir);
    let lexicon: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("w/lexicon.json")).unwrap()).unwrap();
    let mut freq = serde_json::Map::new();
    for d in lexicon["attribute_dimensions"].as_array().unwrap() {
        for pole in ["pole_high", "pole_low"] {
            for (i, t) in d[pole].as_array().unwrap().iter().enumerate() {
                freq.insert(t["surface"].as_str().unwrap().to_owned(), (100 - i).into());
            }
        }
    }
    fs::write(dir.join("freq.json"), serde_json::Value::Object(freq).to_string()).unwrap();
    let out = ok(
        &["build-lexicon", "--input", "w/lexicon.json", "--frequencies", "freq.json", "--top-k", "2", "--out", "top.json"],
        dir,
    );
    assert!(out.contains("warmth: 2 high, 2 low"), "{out}");
    assert!(dir.join("top.json.manifest.json").exists());
}
