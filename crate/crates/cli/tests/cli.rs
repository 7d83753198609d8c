//! End-to-end tests of the `hsdssa` binary: exit codes, output formats, and
//! the build → forward → score → eval pipeline on a toy system.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hsdssa"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin()
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_run_config(dir: &Path) {
    let config = r#"{
  "seed": 7,
  "systems": [
    {
      "name": "hs-toy",
      "variant": "hs_resnet50",
      "initial_channels": 8,
      "stage_blocks": [1, 1, 1, 1],
      "hs": { "s": 2, "t": 4.0 },
      "dssa_after_stage": 3,
      "embedding_dim": 16,
      "feature_dim": 16
    },
    {
      "name": "plain-toy",
      "variant": "resnet50",
      "initial_channels": 8,
      "stage_blocks": [1, 1, 1, 1],
      "embedding_dim": 16,
      "feature_dim": 16
    }
  ]
}"#;
    fs::write(dir.join("run.json"), config).unwrap();
}

fn write_fmat(path: &Path, rows: usize, cols: usize, seed: u32) {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(b"FMAT");
    bytes.extend_from_slice(&(rows as u32).to_le_bytes());
    bytes.extend_from_slice(&(cols as u32).to_le_bytes());
    let mut state = seed.wrapping_mul(2654435761).wrapping_add(1);
    for _ in 0..rows * cols {
        state = state.wrapping_mul(1664525).wrapping_add(1013904223);
        let v = (state >> 8) as f32 / (1u32 << 24) as f32 - 0.5;
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).unwrap();
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = bin().arg("eval").arg("--bogus").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_config_file_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["params", "--config", "absent.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("absent.json"));
}

#[test]
fn malformed_fmat_magic_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    write_run_config(dir.path());
    let out = run_in(
        dir.path(),
        &["build", "--config", "run.json", "--system", "plain-toy", "--out", "m"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    fs::write(dir.path().join("bad.fmat"), b"NOPE0000rest").unwrap();
    let out = run_in(
        dir.path(),
        &["forward", "--model", "m", "--features", "bad.fmat", "--out", "e.fmat"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("FMAT"), "{}", stderr(&out));
    assert!(!dir.path().join("e.fmat").exists(), "no partial output");
}

#[test]
fn params_prints_agreeing_forms_on_exact_halving_config() {
    let dir = tempfile::tempdir().unwrap();
    write_run_config(dir.path());
    let out = run_in(dir.path(), &["params", "--config", "run.json"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("eq3_sum="), "{text}");
    assert!(text.contains("eq3_closed="), "{text}");
    assert!(text.contains("constructed="), "{text}");
    // s=2, t=4 halves exactly at every stage width, so the forms agree
    for line in text.lines().filter(|l| l.contains("eq3_sum=")) {
        assert!(line.contains("[match]"), "{line}");
    }
}

#[test]
fn gradcheck_passes_and_reports_max_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["gradcheck", "--instances", "3"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("max relative error"));
}

#[test]
fn full_pipeline_build_forward_score_eval() {
    let dir = tempfile::tempdir().unwrap();
    write_run_config(dir.path());
    let out = run_in(
        dir.path(),
        &["build", "--config", "run.json", "--system", "hs-toy", "--out", "model"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(dir.path().join("model/model.json").is_file());

    fs::create_dir(dir.path().join("emb")).unwrap();
    for (name, frames, seed) in [("a", 24usize, 1u32), ("b", 32, 2), ("c", 20, 3)] {
        write_fmat(&dir.path().join(format!("{name}.fmat")), frames, 16, seed);
        let out = run_in(
            dir.path(),
            &[
                "forward",
                "--model",
                "model",
                "--features",
                &format!("{name}.fmat"),
                "--out",
                &format!("emb/{name}.fmat"),
            ],
        );
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    }

    fs::write(
        dir.path().join("trials.txt"),
        "1 a a\n1 b b\n1 c c\n0 a b\n0 b c\n0 a c\n",
    )
    .unwrap();
    let out = run_in(
        dir.path(),
        &[
            "score",
            "--enroll-dir",
            "emb",
            "--test-dir",
            "emb",
            "--trials",
            "trials.txt",
            "--out",
            "scores.txt",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let scores = fs::read_to_string(dir.path().join("scores.txt")).unwrap();
    assert_eq!(scores.lines().count(), 6);
    // self-trials score at cosine 1
    assert!(scores.lines().next().unwrap().ends_with("1.000000"));

    let out = run_in(
        dir.path(),
        &["eval", "--scores", "scores.txt", "--trials", "trials.txt"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    // self-similarity 1.0 vs cross-pair scores < 1 separate perfectly
    assert!(text.contains("EER 0.0000%"), "{text}");
    assert!(text.contains("minDCF(0.01) 0.0000"), "{text}");
    let det = fs::read_to_string(dir.path().join("det.csv")).unwrap();
    assert!(det.starts_with("threshold,far,frr\n"));
}

#[test]
fn demo_attention_dumps_per_channel_weights() {
    let dir = tempfile::tempdir().unwrap();
    write_run_config(dir.path());
    let out = run_in(
        dir.path(),
        &["build", "--config", "run.json", "--system", "hs-toy", "--out", "model"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    write_fmat(&dir.path().join("u.fmat"), 24, 16, 9);
    let out = run_in(
        dir.path(),
        &[
            "demo-attention",
            "--model",
            "model",
            "--features",
            "u.fmat",
            "--topk",
            "2",
            "--out-dir",
            "attn",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let files: Vec<_> = fs::read_dir(dir.path().join("attn")).unwrap().collect();
    // stage-3 output of the toy config carries 128 channels
    assert_eq!(files.len(), 128);
    assert!(dir.path().join("attn/attn_c000.fmat").is_file());

    // a model without the module refuses
    let out = run_in(
        dir.path(),
        &["build", "--config", "run.json", "--system", "plain-toy", "--out", "plain"],
    );
    assert_eq!(out.status.code(), Some(0));
    let out = run_in(
        dir.path(),
        &[
            "demo-attention",
            "--model",
            "plain",
            "--features",
            "u.fmat",
            "--out-dir",
            "attn2",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("attention"));
}

#[test]
fn bench_writes_stable_reports() {
    let dir = tempfile::tempdir().unwrap();
    write_run_config(dir.path());
    let out = run_in(
        dir.path(),
        &["bench", "--config", "run.json", "--reps", "5", "--warmup", "1", "--frames", "16"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let json = fs::read_to_string(dir.path().join("bench.json")).unwrap();
    assert!(json.contains("\"system_name\": \"hs-toy\""), "{json}");
    let csv = fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert!(csv.starts_with("system,params,median_ms,eer,min_dcf\n"));
    assert_eq!(csv.lines().count(), 3);
    // usage errors for bad knobs
    let out = run_in(dir.path(), &["bench", "--config", "run.json", "--reps", "2"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn eval_reports_parse_error_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("trials.txt"), "1 a\n").unwrap();
    fs::write(dir.path().join("scores.txt"), "a b 0.5\n").unwrap();
    let out = run_in(
        dir.path(),
        &["eval", "--scores", "scores.txt", "--trials", "trials.txt"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 1"), "{}", stderr(&out));
}
