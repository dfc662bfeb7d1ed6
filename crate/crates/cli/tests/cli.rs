use std::path::Path;
use std::process::{Command, Output};

fn stainsep(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stainsep"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const TINY_NET: &str = "[train.network]\ngen_levels = 2\ngen_base_width = 4\ngen_max_width = 8\ngen_dropout = false\ndisc_base_width = 4\ndisc_layers = 1\n";

fn prepared() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let out = stainsep(dir.path(), &["prepare", "--out", "data", "--synthetic", "10", "--size", "32", "--test-fraction", "0.2"]);
    assert!(out.status.success(), "{}", stderr(&out));
    dir
}

fn write_config(dir: &Path, name: &str, train: &str) {
    let text = format!("manifest = \"data/manifest.jsonl\"\noutput_dir = \"{name}\"\n\n[train]\n{train}\n{TINY_NET}");
    std::fs::write(dir.join(format!("{name}.toml")), text).unwrap();
}

#[test]
fn missing_dataset_root_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = stainsep(dir.path(), &["prepare", "--out", "x", "--root", "/no/such/dir"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("/no/such/dir"), "{}", stderr(&out));
}

#[test]
fn bad_arguments_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(stainsep(dir.path(), &["prepare", "--out", "x"]).status.code(), Some(1));
    assert_eq!(stainsep(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(stainsep(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn prepare_writes_consistent_synthetic_split() {
    let dir = prepared();
    let manifest = std::fs::read_to_string(dir.path().join("data/manifest.jsonl")).unwrap();
    let records: Vec<serde_json::Value> = manifest.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 10);
    assert_eq!(records.iter().filter(|r| r["split"] == "test").count(), 2);
    for r in &records {
        for p in r["sources"].as_array().unwrap() {
            assert!(dir.path().join("data").join(p.as_str().unwrap()).is_file());
        }
    }
    assert!(dir.path().join("data/provenance.json").is_file());
}

#[test]
fn config_errors_name_the_field() {
    let dir = prepared();
    write_config(dir.path(), "typo", "alph = 50");
    let out = stainsep(dir.path(), &["train", "--config", "typo.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("alph"), "{}", stderr(&out));

    write_config(dir.path(), "range", "alpha = 300.0");
    let out = stainsep(dir.path(), &["train", "--config", "range.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("alpha"), "{}", stderr(&out));
}

#[test]
fn divergence_is_a_numerical_error() {
    let dir = prepared();
    write_config(dir.path(), "boom", "total_iterations = 5\nlearning_rate = 1e30");
    let out = stainsep(dir.path(), &["train", "--config", "boom.toml"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn train_resume_separate_evaluate() {
    let dir = prepared();
    let d = dir.path();
    write_config(d, "run", "total_iterations = 6\ncheckpoint_every = 3\nbatch_size = 2");
    let out = stainsep(d, &["train", "--config", "run.toml", "--stop-after", "3"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = stainsep(d, &["train", "--config", "run.toml", "--resume", "run/checkpoints/ckpt_000003.bin"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(std::fs::read_to_string(d.join("run/train_log.jsonl")).unwrap().lines().count(), 6);

    // An uninterrupted run with the same config ends in the same checkpoint.
    write_config(d, "full", "total_iterations = 6\ncheckpoint_every = 3\nbatch_size = 2");
    assert!(stainsep(d, &["train", "--config", "full.toml"]).status.success());
    assert_eq!(
        std::fs::read(d.join("run/checkpoints/ckpt_000006.bin")).unwrap(),
        std::fs::read(d.join("full/checkpoints/ckpt_000006.bin")).unwrap()
    );

    write_config(d, "other", "total_iterations = 6\nlambda_adv = 0.5");
    let out = stainsep(d, &["train", "--config", "other.toml", "--resume", "run/checkpoints/ckpt_000003.bin"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("lambda_adv"), "{}", stderr(&out));

    let ckpt = "run/checkpoints/ckpt_000006.bin";
    let out = stainsep(d, &["separate", "--checkpoint", ckpt, "--input", "data/patches/synth000.png", "--out", "one", "--stains", "a"]);
    assert_eq!(out.status.code(), Some(1), "stain count mismatch");
    let out = stainsep(d, &["separate", "--checkpoint", ckpt, "--manifest", "data/manifest.jsonl", "--out", "pred"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = stainsep(
        d,
        &["evaluate", "--pred", "pred", "--truth", "data/patches", "--manifest", "data/manifest.jsonl", "--out", "eval"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let report: stainsep_core::metrics::MetricsReport =
        serde_json::from_str(&std::fs::read_to_string(d.join("eval/report.json")).unwrap()).unwrap();
    assert_eq!(report.samples.len(), 2);
    assert!(report.missing_predictions.is_empty());
}

#[test]
fn nmf_baseline_scores_against_truth() {
    let dir = prepared();
    let d = dir.path();
    let out = stainsep(d, &["nmf", "--input", "data/patches/synth000.png", "--input", "data/patches/synth001.png", "--n-stains", "2", "--out", "nmf"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(std::fs::read_to_string(d.join("nmf/nmf_report.jsonl")).unwrap().lines().count(), 2);
    let out = stainsep(d, &["evaluate", "--pred", "nmf", "--truth", "data/patches", "--out", "eval", "--method", "nmf", "--best-permutation"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: stainsep_core::metrics::MetricsReport =
        serde_json::from_str(&std::fs::read_to_string(d.join("eval/report.json")).unwrap()).unwrap();
    assert_eq!(report.samples.len(), 2);
    assert!(report.mean.ssim > 0.5, "{:?}", report.mean);
}
