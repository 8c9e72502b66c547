//! The `clarion` binary end to end.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::sync::OnceLock;

use serde_json::Value;
use tempfile::TempDir;

fn clarion() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_clarion"));
    for (key, _) in std::env::vars_os() {
        if key.to_string_lossy().starts_with("CLARION_") {
            cmd.env_remove(key);
        }
    }
    cmd.env("RUST_LOG", "warn");
    cmd
}

fn run(args: &[&str]) -> Output {
    clarion().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Every file under `dir`, keyed by relative path.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        files.insert(path.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
    }
    files
}

struct Models {
    dir: TempDir,
}

impl Models {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn engine_args(&self) -> Vec<String> {
        ["corpus", "encoder", "responses"]
            .iter()
            .flat_map(|k| {
                [
                    format!("--{k}"),
                    self.path(&format!("{k}{}", if *k == "corpus" { "" } else { ".json" })).display().to_string(),
                ]
            })
            .collect()
    }
}

fn train_policy(m: &Models, penalty: &str, out: &str) {
    let mut args: Vec<String> = vec!["train-policy".into()];
    args.extend(m.engine_args());
    args.extend(
        [
            "--simulator",
            p(&m.path("sim-dev.json")),
            "--turn-penalty",
            penalty,
            "--episodes",
            "1500",
            "--out",
            p(&m.path(out)),
        ]
        .map(String::from),
    );
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
}

/// Corpus, encoder, responses, simulators and two policies, built once through the CLI.
fn models() -> &'static Models {
    static MODELS: OnceLock<Models> = OnceLock::new();
    MODELS.get_or_init(|| {
        let m = Models { dir: tempfile::tempdir().unwrap() };
        let corpus = m.path("corpus");
        ok(&["synth", "--labels", "32", "--attrs", "5", "--noise", "0.1", "--out", p(&corpus)]);
        ok(&[
            "train-encoder",
            "--corpus",
            p(&corpus),
            "--out",
            p(&m.path("encoder.json")),
            "--log",
            p(&m.path("encoder.csv")),
        ]);
        ok(&[
            "fit-responses",
            "--corpus",
            p(&corpus),
            "--encoder",
            p(&m.path("encoder.json")),
            "--out",
            p(&m.path("responses.json")),
        ]);
        for split in ["dev", "test"] {
            ok(&[
                "fit-simulator",
                "--corpus",
                p(&corpus),
                "--split",
                split,
                "--out",
                p(&m.path(&format!("sim-{split}.json"))),
            ]);
        }
        train_policy(&m, "-0.5", "policy.json");
        train_policy(&m, "-3", "policy-strict.json");
        m
    })
}

fn eval(m: &Models, policy: &str, suite: &str, extra: &[&str]) -> Value {
    let mut args: Vec<String> = vec!["eval".into()];
    args.extend(m.engine_args());
    args.extend(
        [
            "--simulator",
            p(&m.path("sim-test.json")),
            "--policy",
            p(&m.path(policy)),
            "--suite",
            suite,
            "--episodes",
            "200",
            "--seeds",
            "2",
        ]
        .map(String::from),
    );
    args.extend(extra.iter().map(|s| s.to_string()));
    let out = ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    serde_json::from_slice(&out.stdout).unwrap()
}

fn report<'a>(json: &'a Value, strategy: &str) -> &'a Value {
    json["reports"].as_array().unwrap().iter().find(|r| r["strategy"] == strategy).unwrap()
}

#[test]
fn eval_writes_one_report_per_strategy() {
    let m = models();
    let json = eval(m, "policy.json", "none,random:3,full,fixed:2", &[]);
    assert_eq!((json["episodes"].as_u64(), json["seeds"].as_u64()), (Some(200), Some(2)));
    let names: Vec<&str> =
        json["reports"].as_array().unwrap().iter().map(|r| r["strategy"].as_str().unwrap()).collect();
    assert_eq!(names, ["none", "random:3", "full", "fixed:2"]);
    for r in json["reports"].as_array().unwrap() {
        for k in ["1", "3"] {
            let acc = r["accuracy"][k]["mean"].as_f64().unwrap();
            assert!((0.0..=1.0).contains(&acc), "{r}");
        }
        assert_eq!(r["per_seed"].as_array().unwrap().len(), 2);
    }
    assert_eq!(report(&json, "none")["mean_turns"]["mean"], 0.0);
    assert_eq!(report(&json, "fixed:2")["mean_turns"]["mean"], 2.0);
}

#[test]
fn eval_is_reproducible_and_writes_side_files() {
    let m = models();
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("report.csv");
    let confusion = dir.path().join("confusion");
    let a = eval(m, "policy.json", "none,threshold:0.8", &["--csv", p(&csv), "--confusion-dir", p(&confusion)]);
    let b = eval(m, "policy.json", "none,threshold:0.8", &[]);
    assert_eq!(a["reports"].as_array().unwrap().len(), 2);
    for (x, y) in a["reports"].as_array().unwrap().iter().zip(b["reports"].as_array().unwrap()) {
        assert_eq!(x["accuracy"], y["accuracy"]);
        assert_eq!(x["per_seed"], y["per_seed"]);
    }
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 3);
    let files: Vec<_> = snapshot(&confusion).into_keys().collect();
    assert_eq!(files, [PathBuf::from("confusion-none.csv"), PathBuf::from("confusion-threshold_0_8.csv")]);
}

#[test]
fn a_harsher_turn_penalty_asks_less() {
    let m = models();
    let lenient = eval(m, "policy.json", "full", &[]);
    let strict = eval(m, "policy-strict.json", "full", &[]);
    let turns = |j: &Value| report(j, "full")["mean_turns"]["mean"].as_f64().unwrap();
    assert!(
        turns(&strict) < turns(&lenient),
        "penalty -3: {} turns, penalty -0.5: {} turns",
        turns(&strict),
        turns(&lenient)
    );
}

#[test]
fn curve_lists_every_grid_point() {
    let m = models();
    let mut args: Vec<String> = vec!["curve".into()];
    args.extend(m.engine_args());
    let policy = m.path("policy.json");
    args.extend(
        [
            "--simulator",
            p(&m.path("sim-test.json")),
            "--fixed",
            "0,2",
            "--thresholds",
            "0.5",
            "--policy",
            p(&policy),
            "--episodes",
            "50",
            "--seeds",
            "1",
        ]
        .map(String::from),
    );
    let out = ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 5, "{stdout}");
}

#[test]
fn interact_reads_answers_from_stdin() {
    let m = models();
    let mut args: Vec<String> = vec!["interact".into()];
    args.extend(m.engine_args());
    let labels = std::fs::read_to_string(m.path("corpus").join("labels.jsonl")).unwrap();
    let first: Value = serde_json::from_str(labels.lines().next().unwrap()).unwrap();
    let scenario = first["id"].as_str().unwrap().to_string();
    args.extend(["--threshold", "1", "--max-turns", "2", "--scenario", &scenario].map(String::from));
    let mut child =
        clarion().args(&args).stdin(Stdio::piped()).stdout(Stdio::piped()).stderr(Stdio::piped()).spawn().unwrap();
    child.stdin.take().unwrap().write_all(b"help with roaming\n1\nno\n").unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("Scenario: "), "{stdout}");
    assert!(stdout.contains("Prediction after 2 question(s)"), "{stdout}");
    assert!(stdout.contains("Scenario label: ") && stdout.contains(&format!("({scenario})")), "{stdout}");

    let mut child =
        clarion().args(&args).stdin(Stdio::piped()).stdout(Stdio::piped()).stderr(Stdio::piped()).spawn().unwrap();
    child.stdin.take().unwrap().write_all(b"help with roaming\n").unwrap();
    let out = child.wait_with_output().unwrap();
    assert_eq!(out.status.code(), Some(3), "input ending mid-session is a runtime failure");
}

#[test]
fn training_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let [a, b] = ["a", "b"].map(|n| dir.path().join(n));
    for out in [&a, &b] {
        ok(&[
            "--seed",
            "3",
            "synth",
            "--labels",
            "8",
            "--attrs",
            "3",
            "--noise",
            "0.1",
            "--out",
            p(&out.join("corpus")),
        ]);
        ok(&[
            "--seed",
            "3",
            "train-encoder",
            "--corpus",
            p(&out.join("corpus")),
            "--epochs",
            "3",
            "--out",
            p(&out.join("encoder.json")),
        ]);
    }
    assert_eq!(snapshot(&a.join("corpus")), snapshot(&b.join("corpus")));
    assert_eq!(std::fs::read(a.join("encoder.json")).unwrap(), std::fs::read(b.join("encoder.json")).unwrap());

    ok(&[
        "--seed",
        "4",
        "synth",
        "--labels",
        "8",
        "--attrs",
        "3",
        "--noise",
        "0.1",
        "--out",
        p(&dir.path().join("other")),
    ]);
    assert_ne!(snapshot(&a.join("corpus")), snapshot(&dir.path().join("other")));
}

#[test]
fn flags_beat_environment_beat_config() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = |name: &str| dir.path().join(name);
    for seed in ["5", "6", "7"] {
        ok(&[
            "--seed",
            seed,
            "synth",
            "--labels",
            "8",
            "--attrs",
            "3",
            "--noise",
            "0.2",
            "--out",
            p(&corpus(&format!("seed{seed}"))),
        ]);
    }
    let config = dir.path().join("clarion.toml");
    std::fs::write(&config, "seed = 5\n[synth]\nlabels = 8\nattrs = 3\nnoise = 0.2\n").unwrap();

    let synth = |out: &str, env_seed: Option<&str>, flag_seed: Option<&str>| {
        let mut cmd = clarion();
        cmd.args(["--config", p(&config), "synth", "--out", p(&corpus(out))]);
        if let Some(s) = env_seed {
            cmd.env("CLARION_SEED", s);
        }
        if let Some(s) = flag_seed {
            cmd.args(["--seed", s]);
        }
        assert!(cmd.output().unwrap().status.success());
        snapshot(&corpus(out))
    };
    assert_eq!(synth("from-config", None, None), snapshot(&corpus("seed5")));
    assert_eq!(synth("from-env", Some("6"), None), snapshot(&corpus("seed6")));
    assert_eq!(synth("from-flag", Some("6"), Some("7")), snapshot(&corpus("seed7")));

    let mut cmd = clarion();
    cmd.args(["synth", "--out", p(&corpus("via-env-config"))]).env("CLARION_CONFIG", p(&config));
    assert!(cmd.output().unwrap().status.success());
    assert_eq!(snapshot(&corpus("via-env-config")), snapshot(&corpus("seed5")));

    std::fs::write(&config, "[synth]\nlables = 8\n").unwrap();
    let out = run(&["--config", p(&config), "synth", "--out", p(&corpus("typo"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lables"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path());
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["synth", "--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));

    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["synth", "--out", out, "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&["synth", "--out", out, "--noise", "1.5"]).status.code(), Some(1));
    assert_eq!(run(&["synth", "--out", out, "--labels", "0"]).status.code(), Some(1));
    let usage =
        run(&["eval", "--corpus", out, "--encoder", out, "--responses", out, "--simulator", out, "--suite", "bogus"]);
    assert_eq!(usage.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&usage.stderr).starts_with("error:"));

    let missing = dir.path().join("missing");
    let out2 = run(&["train-encoder", "--corpus", p(&missing), "--out", p(&dir.path().join("e.json"))]);
    assert_eq!(out2.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out2.stderr).contains("missing"));

    std::fs::write(dir.path().join("broken.json"), "{ not json").unwrap();
    let m = models();
    let broken = run(&[
        "fit-responses",
        "--corpus",
        p(&m.path("corpus")),
        "--encoder",
        p(&dir.path().join("broken.json")),
        "--out",
        p(&dir.path().join("r.json")),
    ]);
    assert_eq!(broken.status.code(), Some(2));
}
