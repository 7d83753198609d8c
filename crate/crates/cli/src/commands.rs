//! Subcommand implementations. Every output file is written to a temporary
//! sibling and renamed into place, so results are either complete or absent.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use hsdssa::analysis::{bench_inference, count_params, report_csv, report_json, BenchReport};
use hsdssa::backbone::{build_model, Model, Variant};
use hsdssa::gradcheck;
use hsdssa::hs_block::{hs_param_closed, hs_param_sum, HSBlockConfig};
use hsdssa::metrics::{self, cosine_similarity, det_csv, det_points};
use hsdssa::tensor::{read_fmat, write_fmat_bytes};
use hsdssa::Tensor;

use crate::config::load_run_config;
use crate::CliError;

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    fs::write(&tmp, bytes)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", tmp.display())))?;
    fs::rename(&tmp, path)
        .map_err(|e| CliError::Data(format!("cannot finalize {}: {e}", path.display())))?;
    Ok(())
}

pub fn params(config: &Path) -> Result<i32, CliError> {
    let run = load_run_config(config)?;
    for sys in &run.systems {
        let model = build_model(&sys.config, run.seed)?;
        println!(
            "system {} variant={} initial_channels={} params={}",
            sys.name,
            sys.config.variant,
            sys.config.initial_channels,
            count_params(&model)
        );
        if sys.config.variant == Variant::HsResnet50 {
            let hs = sys.config.hs.expect("validated at build");
            for stage in 1..=4usize {
                let w = sys.config.initial_channels << (stage - 1);
                let sum = hs_param_sum(w, hs.t, hs.s, hs.kernel)?;
                let closed = hs_param_closed(w, hs.t, hs.s, hs.kernel)?;
                let constructed = HSBlockConfig::new(w, hs.t, hs.s, hs.kernel)?
                    .constructed_param_count();
                let agreement = if sum == closed.round() as u64 {
                    "match"
                } else {
                    "differ (inexact halving)"
                };
                println!(
                    "  stage{stage} w={w} s={} t={} k={}: eq3_sum={sum} eq3_closed={closed:.2} [{agreement}] constructed={constructed}",
                    hs.s, hs.t, hs.kernel
                );
            }
        }
    }
    Ok(0)
}

pub fn build(
    config: &Path,
    system: &str,
    seed: Option<u64>,
    out: &Path,
) -> Result<i32, CliError> {
    let run = load_run_config(config)?;
    let spec = run
        .systems
        .iter()
        .find(|s| s.name == system)
        .ok_or_else(|| {
            CliError::Data(format!(
                "no system named '{system}' in {}",
                config.display()
            ))
        })?;
    let seed = seed.unwrap_or(run.seed);
    let model = build_model(&spec.config, seed)?;
    model.save(out)?;
    println!(
        "built {} (seed {seed}, {} parameters) into {}",
        spec.name,
        count_params(&model),
        out.display()
    );
    Ok(0)
}

fn load_features(path: &Path) -> Result<Tensor, CliError> {
    Ok(read_fmat(path)?)
}

pub fn forward(model_dir: &Path, features: &Path, out: &Path) -> Result<i32, CliError> {
    let model = Model::load(model_dir)?;
    let feats = load_features(features)?;
    let embedding = model.embed(&feats)?;
    let row = embedding.reshape(vec![1, embedding.numel()])?;
    write_atomic(out, &write_fmat_bytes(&row)?)?;
    println!(
        "embedded {} frames into {} dims -> {}",
        feats.shape()[0],
        embedding.numel(),
        out.display()
    );
    Ok(0)
}

fn embedding_path(dir: &Path, id: &str) -> Result<PathBuf, CliError> {
    let direct = dir.join(id);
    if direct.is_file() {
        return Ok(direct);
    }
    let with_ext = dir.join(format!("{id}.fmat"));
    if with_ext.is_file() {
        return Ok(with_ext);
    }
    Err(CliError::Data(format!(
        "no embedding for '{id}' under {} (tried '{}' and '{}')",
        dir.display(),
        direct.display(),
        with_ext.display()
    )))
}

fn load_embedding(dir: &Path, id: &str, cache: &mut HashMap<String, Tensor>) -> Result<Tensor, CliError> {
    if let Some(t) = cache.get(id) {
        return Ok(t.clone());
    }
    let path = embedding_path(dir, id)?;
    let raw = read_fmat(&path)?;
    let vec = raw.reshape(vec![raw.numel()])?;
    cache.insert(id.to_string(), vec.clone());
    Ok(vec)
}

pub fn score(
    enroll_dir: &Path,
    test_dir: &Path,
    trials: &Path,
    out: &Path,
) -> Result<i32, CliError> {
    let text = fs::read_to_string(trials)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", trials.display())))?;
    let set = metrics::parse_trials(&text)?;
    if set.entries.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no trials to score",
            trials.display()
        )));
    }
    let mut enroll_cache = HashMap::new();
    let mut test_cache = HashMap::new();
    let mut lines = String::new();
    for trial in &set.entries {
        let a = load_embedding(enroll_dir, &trial.enroll, &mut enroll_cache)?;
        let b = load_embedding(test_dir, &trial.test, &mut test_cache)?;
        let s = cosine_similarity(&a, &b)?;
        lines.push_str(&format!("{} {} {s:.6}\n", trial.enroll, trial.test));
    }
    write_atomic(out, lines.as_bytes())?;
    println!("scored {} trials -> {}", set.entries.len(), out.display());
    Ok(0)
}

pub fn eval(scores: &Path, trials: &Path, det_out: &Path) -> Result<i32, CliError> {
    let trial_text = fs::read_to_string(trials)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", trials.display())))?;
    let mut set = metrics::parse_trials(&trial_text)?;
    let score_text = fs::read_to_string(scores)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", scores.display())))?;
    let table = metrics::parse_scores(&score_text)?;
    set.attach_scores(&table)?;

    let points = det_points(&set)?;
    let eer = metrics::eer(&set)?;
    let dcf = metrics::min_dcf_default(&set)?;
    write_atomic(det_out, det_csv(&points).as_bytes())?;
    println!("EER {:.4}%", eer * 100.0);
    println!("minDCF(0.01) {dcf:.4}");
    println!("DET curve ({} points) -> {}", points.len(), det_out.display());
    Ok(0)
}

pub fn bench(
    config: &Path,
    reps: usize,
    warmup: usize,
    frames: usize,
    out_prefix: &str,
) -> Result<i32, CliError> {
    if reps < 5 {
        return Err(CliError::Usage(format!(
            "--reps must be at least 5, got {reps}"
        )));
    }
    if warmup < 1 {
        return Err(CliError::Usage("--warmup must be at least 1".into()));
    }
    let run = load_run_config(config)?;
    let mut reports: Vec<BenchReport> = Vec::new();
    for sys in &run.systems {
        let model = build_model(&sys.config, run.seed)?;
        let report = bench_inference(
            &model,
            sys.name.clone(),
            (frames, sys.config.feature_dim),
            reps,
            warmup,
        )?;
        println!(
            "{:<24} params={:<10} median={:.3} ms mad={:.3} ms",
            report.system_name,
            report.param_count,
            report.timing.median_ms,
            report.timing.median_abs_deviation_ms
        );
        reports.push(report);
    }
    if reports.len() > 1 {
        let base = &reports[0];
        for r in &reports[1..] {
            println!(
                "{} / {} time ratio: {:.2}",
                r.system_name,
                base.system_name,
                r.timing.median_ms / base.timing.median_ms
            );
        }
    }
    let json_path = PathBuf::from(format!("{out_prefix}.json"));
    let csv_path = PathBuf::from(format!("{out_prefix}.csv"));
    write_atomic(&json_path, report_json(&reports)?.as_bytes())?;
    write_atomic(&csv_path, report_csv(&reports)?.as_bytes())?;
    println!("reports -> {} and {}", json_path.display(), csv_path.display());
    Ok(0)
}

pub fn gradcheck(instances: usize, seed: u64) -> Result<i32, CliError> {
    if instances == 0 {
        return Err(CliError::Usage("--instances must be at least 1".into()));
    }
    let errors = gradcheck::run_suite(instances, seed)?;
    for (i, e) in errors.iter().enumerate() {
        println!("instance {i}: worst relative error {e:.3e}");
    }
    let max = errors.iter().cloned().fold(0.0f64, f64::max);
    println!(
        "max relative error {max:.3e} (tolerance {:.1e})",
        gradcheck::REL_TOL
    );
    if max < gradcheck::REL_TOL {
        Ok(0)
    } else {
        eprintln!("gradient check failed");
        Ok(2)
    }
}

pub fn demo_attention(
    model_dir: &Path,
    features: &Path,
    topk: Option<usize>,
    out_dir: &Path,
) -> Result<i32, CliError> {
    if topk == Some(0) {
        return Err(CliError::Usage("--topk must be at least 1".into()));
    }
    let mut model = Model::load(model_dir)?;
    if model.dssa().is_none() {
        return Err(CliError::Data(
            "model has no attention module (dssa_after_stage unset)".into(),
        ));
    }
    if topk.is_some() {
        model.set_dssa_topk(topk)?;
    }
    let feats = load_features(features)?;
    let (_, attn) = model.embed_with_attention(&feats)?;
    let attn = attn.expect("model has an attention module");
    fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", out_dir.display())))?;
    let (channels, t) = (attn.shape()[0], attn.shape()[1]);
    let mut near_zero = 0usize;
    for c in 0..channels {
        let mat = attn.slice_axis0(c, 1)?.reshape(vec![t, t])?;
        near_zero += mat.data().iter().filter(|&&v| v < 1e-3).count();
        let path = out_dir.join(format!("attn_c{c:03}.fmat"));
        write_atomic(&path, &write_fmat_bytes(&mat)?)?;
    }
    let total = channels * t * t;
    println!(
        "wrote {channels} attention matrices ({t}×{t}) to {}",
        out_dir.display()
    );
    println!(
        "weights below 1e-3: {near_zero}/{total} ({:.1}%)",
        100.0 * near_zero as f64 / total as f64
    );
    Ok(0)
}
