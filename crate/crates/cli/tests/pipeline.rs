use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &str = r#"
train_blocks = 4
validation_blocks = 4
region_side = 10
budget = 12
ensemble_size = 3

[corpus]
blocks = 24
block_side = 40
domain_weights = [3.0, 2.0, 1.0]

[model]
hidden = [16, 16]

[training]
epochs = 4
samples_per_epoch = 2048

[attention]
epochs = 2
max_samples = 2048

[encoder]
scales = 4
"#;

fn densal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_densal")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = densal(args);
    assert!(
        out.status.success(),
        "densal {args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Exit code and parsed error record of a failing invocation.
fn fails(args: &[&str]) -> (i32, Value) {
    let out = densal(args);
    assert!(!out.status.success(), "densal {args:?} unexpectedly succeeded");
    let stderr = String::from_utf8_lossy(&out.stderr);
    let last = stderr.lines().last().expect("stderr carries an error record");
    let rec: Value = serde_json::from_str(last).unwrap_or_else(|e| panic!("not JSON ({e}): {last}"));
    (out.status.code().unwrap(), rec)
}

fn config(dir: &Path, shards: usize) -> PathBuf {
    let p = dir.join(format!("small_{shards}.toml"));
    fs::write(&p, format!("shards = {shards}\n{SMALL}")).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn digest(stdout: &str) -> String {
    stdout.lines().find_map(|l| l.strip_prefix("corpus digest: ")).expect("digest line").to_string()
}

fn files_under(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    let scale = a.abs().max(b.abs());
    scale == 0.0 || (a - b).abs() / scale <= tol
}

#[test]
fn generate_is_deterministic_and_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), 4);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let d1 = digest(&ok(&["generate", "--config", s(&cfg), "--out", s(&a)]));
    let snapshot = files_under(&a);
    let d2 = digest(&ok(&["generate", "--config", s(&cfg), "--out", s(&a)]));
    let d3 = digest(&ok(&["generate", "--config", s(&cfg), "--out", s(&b)]));
    assert_eq!(d1, d2);
    assert_eq!(d1, d3);
    assert_eq!(snapshot, files_under(&a), "re-running generate changed files");
    let other = digest(&ok(&["generate", "--config", s(&cfg), "--seed", "8", "--out", s(&tmp.path().join("c"))]));
    assert_ne!(d1, other);

    let index: Value = serde_json::from_slice(&fs::read(a.join("corpus/corpus.json")).unwrap()).unwrap();
    assert_eq!(index["blocks"].as_array().unwrap().len(), 24);
    assert_eq!(index["split"]["pool"].as_array().unwrap().len(), 16);
    let trees = fs::read_to_string(a.join("corpus/labelled/trees.csv")).unwrap();
    assert_eq!(trees.lines().next(), Some("block_id,x_m,y_m"));
    let pgrd = fs::read(a.join("corpus/shards/shard_000/manifest.json")).unwrap();
    assert!(!pgrd.is_empty());
}

struct Run {
    dir: PathBuf,
}

impl Run {
    /// generate, train, per-shard stats in separate processes, reduce, select.
    fn pipeline(tmp: &Path, shards: usize) -> Run {
        let cfg = config(tmp, shards);
        let dir = tmp.join(format!("run_{shards}"));
        let common = ["--config", s(&cfg), "--out", s(&dir)];
        ok(&[&["generate"], &common[..]].concat());
        ok(&[&["train"], &common[..]].concat());
        for k in 0..shards {
            let k = k.to_string();
            ok(&[&["stats", "--shard", &k], &common[..]].concat());
        }
        ok(&[&["reduce"], &common[..]].concat());
        ok(&[&["select"], &common[..]].concat());
        Run { dir }
    }

    fn globals(&self) -> Value {
        serde_json::from_slice(&fs::read(self.dir.join("globals.json")).unwrap()).unwrap()
    }

    fn scores(&self) -> Vec<Vec<f64>> {
        let text = fs::read_to_string(self.dir.join("scores.csv")).unwrap();
        text.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect()
    }

    fn selection(&self) -> String {
        fs::read_to_string(self.dir.join("selection.jsonl")).unwrap()
    }
}

#[test]
fn per_shard_processes_match_single_shard_run() {
    let tmp = tempfile::tempdir().unwrap();
    let one = Run::pipeline(tmp.path(), 1);
    for shards in [4, 16] {
        let many = Run::pipeline(tmp.path(), shards);
        for i in 0..3 {
            let a = fs::read(one.dir.join(format!("models/member_{i:02}.pmdl"))).unwrap();
            let b = fs::read(many.dir.join(format!("models/member_{i:02}.pmdl"))).unwrap();
            assert!(a == b, "member {i} differs between runs");
        }
        let (g1, gm) = (one.globals(), many.globals());
        assert_eq!(g1["n_total"], gm["n_total"]);
        assert_eq!(g1["regions"], gm["regions"]);
        for key in ["sum_s", "sum_d2"] {
            let (a, b) = (g1[key].as_f64().unwrap(), gm[key].as_f64().unwrap());
            assert!(rel_close(a, b, 1e-9), "{key}: {a} vs {b} with {shards} shards");
        }
        for (a, b) in g1["mu"].as_array().unwrap().iter().zip(gm["mu"].as_array().unwrap()) {
            assert!(rel_close(a.as_f64().unwrap(), b.as_f64().unwrap(), 1e-9));
        }
        let (s1, sm) = (one.scores(), many.scores());
        assert_eq!(s1.len(), sm.len());
        for (a, b) in s1.iter().zip(&sm) {
            assert_eq!(a[0], b[0]);
            for k in 1..4 {
                assert!(rel_close(a[k], b[k], 1e-9), "score of region {}: {} vs {}", a[0], a[k], b[k]);
            }
        }
        assert_eq!(one.selection(), many.selection(), "selection differs with {shards} shards");
    }
    let ranks: Vec<u64> =
        one.selection().lines().map(|l| serde_json::from_str::<Value>(l).unwrap()["rank"].as_u64().unwrap()).collect();
    assert_eq!(ranks.iter().filter(|&&r| r == 0).count(), 12);
}

#[test]
fn commands_are_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let run = Run::pipeline(tmp.path(), 2);
    let before = files_under(&run.dir);
    let cfg = config(tmp.path(), 2);
    let common = ["--config", s(&cfg), "--out", s(&run.dir)];
    for cmd in ["generate", "train", "stats", "reduce", "select"] {
        ok(&[&[cmd], &common[..]].concat());
    }
    assert_eq!(before, files_under(&run.dir));
}

#[test]
fn full_default_corpus_pipeline_emits_exactly_the_budget() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let stdout = ok(&["run", "--out", s(&dir)]);
    assert!(stdout.contains("selected: 50"), "{stdout}");
    let all: Vec<Value> =
        fs::read_to_string(dir.join("selection.jsonl")).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    // Representatives have rank 0; their alternates follow with rank 1.
    let records: Vec<&Value> = all.iter().filter(|r| r["rank"] == 0).collect();
    assert_eq!(records.len(), 50);
    assert!(all.iter().filter(|r| r["rank"] == 1).count() <= 50);
    let mut ids: Vec<u64> = records.iter().map(|r| r["region_id"].as_u64().unwrap()).collect();
    ids.sort_unstable();
    ids.dedup();
    assert_eq!(ids.len(), 50);
    let index: Value = serde_json::from_slice(&fs::read(dir.join("corpus/corpus.json")).unwrap()).unwrap();
    assert_eq!(index["blocks"].as_array().unwrap().len(), 126);
    let regions = fs::read_to_string(dir.join("scores.csv")).unwrap().lines().count() - 1;
    assert_eq!(regions, 96 * 9);
    assert!(dir.join("selection_summary.txt").exists());

    let out = ok(&["eval", "--out", s(&dir)]);
    assert!(out.contains("validation MAE"), "{out}");
    let report: Value = serde_json::from_slice(&fs::read(dir.join("eval/report.json")).unwrap()).unwrap();
    assert!(report["base"]["pixel_mae"].as_f64().unwrap() >= 0.0);
    assert!(report["calibration"]["ensemble"].as_array().unwrap().len() == 10);
}

#[test]
fn config_errors_exit_with_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "budget = 5\nno_such_key = 1\n").unwrap();
    let (code, rec) = fails(&["generate", "--config", s(&bad), "--out", s(tmp.path())]);
    assert_eq!(code, 2);
    assert_eq!(rec["error"], "config");
    assert!(rec["message"].as_str().unwrap().contains("no_such_key"));

    fs::write(&bad, "region_side = 0\n").unwrap();
    assert_eq!(fails(&["generate", "--config", s(&bad), "--out", s(tmp.path())]).0, 2);

    let (code, _) = fails(&["generate", "--config", s(&tmp.path().join("absent.toml"))]);
    assert_eq!(code, 2);

    let (code, rec) = fails(&["generate", "--no-such-flag"]);
    assert_eq!((code, rec["error"].as_str()), (2, Some("usage")));

    let (code, _) = fails(&["generate", "--threads", "0", "--out", s(tmp.path())]);
    assert_eq!(code, 2);
}

#[test]
fn missing_prerequisites_exit_with_code_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), 2);
    let dir = tmp.path().join("run");
    let common = ["--config", s(&cfg), "--out", s(&dir)];
    for cmd in ["train", "stats", "reduce", "select", "eval"] {
        let (code, rec) = fails(&[&[cmd], &common[..]].concat());
        assert_eq!(code, 3, "{cmd}: {rec}");
        assert_eq!(rec["error"], "missing_prerequisite");
    }
    ok(&[&["generate"], &common[..]].concat());
    let (code, rec) = fails(&[&["stats"], &common[..]].concat());
    assert_eq!(code, 3);
    assert!(rec["message"].as_str().unwrap().contains("member_00.pmdl"));
    let (code, _) = fails(&[&["stats", "--shard", "2"], &common[..]].concat());
    assert_eq!(code, 2);
}

#[test]
fn printed_config_is_a_valid_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let text = ok(&["config", "--seed", "5"]);
    let value: toml::Table = toml::from_str(&text).unwrap();
    for key in ["work_dir", "seed", "shards", "region_side", "pool_size", "budget", "corpus", "model", "experiment"] {
        assert!(value.contains_key(key), "missing {key}");
    }
    let p = tmp.path().join("printed.toml");
    fs::write(&p, &text).unwrap();
    assert_eq!(ok(&["config", "--config", s(&p)]), text);
}
