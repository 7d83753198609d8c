//! Parameter accounting and single-threaded inference timing, plus the
//! JSON/CSV report formats the comparison tooling consumes.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::Model;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Wall-time statistics of repeated `embed` runs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Timing {
    pub median_ms: f64,
    pub median_abs_deviation_ms: f64,
    pub repetitions: usize,
    pub input_shape: (usize, usize),
}

/// One benchmarked system, ready for scatter export.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BenchReport {
    pub system_name: String,
    pub param_count: u64,
    pub timing: Timing,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub eer: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub min_dcf: Option<f64>,
}

/// Total element count of every weight tensor in the model, affine
/// normalization parameters included. Depends only on shapes, never on the
/// build seed.
pub fn count_params(m: &Model) -> u64 {
    let mut total = 0u64;
    m.for_each_param(&mut |_, t| total += t.numel() as u64);
    total
}

fn median_of(mut values: Vec<f64>) -> f64 {
    values.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Times `embed` on fixed random features: `warmup` untimed runs, then
/// `repetitions` timed ones, reported as median and median absolute
/// deviation. Strictly single-threaded.
pub fn bench_inference(
    m: &Model,
    system_name: impl Into<String>,
    input_shape: (usize, usize),
    repetitions: usize,
    warmup: usize,
) -> Result<BenchReport> {
    if repetitions < 5 {
        return Err(Error::Input(format!(
            "need at least 5 repetitions, got {repetitions}"
        )));
    }
    if warmup < 1 {
        return Err(Error::Input("need at least 1 warmup run".into()));
    }
    let (t, f) = input_shape;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let data: Vec<f64> = (0..t * f).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let features = Tensor::new(vec![t, f], data)?;

    for _ in 0..warmup {
        m.embed(&features)?;
    }
    let mut samples = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        let out = m.embed(&features)?;
        let elapsed = start.elapsed().as_secs_f64() * 1e3;
        // keep the embedding observable so the run cannot be elided
        std::hint::black_box(out.data()[0]);
        samples.push(elapsed);
    }
    let median = median_of(samples.clone());
    let mad = median_of(samples.iter().map(|&s| (s - median).abs()).collect());
    Ok(BenchReport {
        system_name: system_name.into(),
        param_count: count_params(m),
        timing: Timing {
            median_ms: median,
            median_abs_deviation_ms: mad,
            repetitions,
            input_shape,
        },
        eer: None,
        min_dcf: None,
    })
}

/// Deterministic JSON array of reports, stable field order.
pub fn report_json(entries: &[BenchReport]) -> Result<String> {
    if entries.is_empty() {
        return Err(Error::Input("no reports to serialize".into()));
    }
    serde_json::to_string_pretty(entries)
        .map_err(|e| Error::Data(format!("report serialization: {e}")))
}

/// CSV companion: `system,params,median_ms,eer,min_dcf`, one row per entry.
pub fn report_csv(entries: &[BenchReport]) -> Result<String> {
    if entries.is_empty() {
        return Err(Error::Input("no reports to serialize".into()));
    }
    let mut out = String::from("system,params,median_ms,eer,min_dcf\n");
    for e in entries {
        let eer = e.eer.map(|v| v.to_string()).unwrap_or_default();
        let dcf = e.min_dcf.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{eer},{dcf}\n",
            e.system_name, e.param_count, e.timing.median_ms
        ));
    }
    Ok(out)
}
