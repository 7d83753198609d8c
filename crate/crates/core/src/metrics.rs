//! Back-end scoring and evaluation: cosine similarity, DET operating points,
//! EER, minDCF, and trial/score file ingestion.
//!
//! Conventions at a threshold θ: FAR counts nontargets with score ≥ θ, FRR
//! counts targets with score < θ. The DET point list walks the sorted
//! distinct scores plus the ±∞ endpoints, so FAR is non-increasing and FRR
//! non-decreasing along the list.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Target,
    Nontarget,
}

#[derive(Debug, Clone)]
pub struct Trial {
    pub label: Label,
    pub enroll: String,
    pub test: String,
    pub score: Option<f64>,
}

/// Labeled enroll/test pairs, optionally scored.
#[derive(Debug, Clone, Default)]
pub struct TrialSet {
    pub entries: Vec<Trial>,
}

/// One DET operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

/// Cosine similarity of two equal-length vectors, clamped to [−1, 1].
pub fn cosine_similarity(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.rank() != 1 || b.rank() != 1 || a.numel() != b.numel() {
        return Err(Error::Dimension(format!(
            "cosine needs equal-length vectors, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Input("cosine of a zero-norm vector".into()));
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

impl TrialSet {
    fn scored(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut targets = Vec::new();
        let mut nontargets = Vec::new();
        for (i, t) in self.entries.iter().enumerate() {
            let s = t.score.ok_or_else(|| {
                Error::Input(format!("trial {i} ({} {}) has no score", t.enroll, t.test))
            })?;
            if !s.is_finite() {
                return Err(Error::Input(format!("trial {i} has non-finite score {s}")));
            }
            match t.label {
                Label::Target => targets.push(s),
                Label::Nontarget => nontargets.push(s),
            }
        }
        if targets.is_empty() || nontargets.is_empty() {
            return Err(Error::Input(
                "need at least one target and one nontarget trial".into(),
            ));
        }
        Ok((targets, nontargets))
    }

    /// Attaches scores keyed by (enroll, test); every trial must be covered.
    pub fn attach_scores(&mut self, scores: &HashMap<(String, String), f64>) -> Result<()> {
        for t in &mut self.entries {
            let key = (t.enroll.clone(), t.test.clone());
            let s = scores.get(&key).ok_or_else(|| {
                Error::Input(format!("no score for trial {} {}", t.enroll, t.test))
            })?;
            t.score = Some(*s);
        }
        Ok(())
    }
}

/// DET operating points at every distinct score plus the ±∞ endpoints,
/// consecutive duplicates collapsed.
pub fn det_points(t: &TrialSet) -> Result<Vec<DetPoint>> {
    let (targets, nontargets) = t.scored()?;
    let mut thresholds: Vec<f64> = targets.iter().chain(nontargets.iter()).cloned().collect();
    thresholds.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    thresholds.dedup();

    let mut points = Vec::with_capacity(thresholds.len() + 2);
    let push = |p: DetPoint, points: &mut Vec<DetPoint>| {
        if let Some(last) = points.last() {
            if last.far == p.far && last.frr == p.frr {
                return;
            }
        }
        points.push(p);
    };
    push(
        DetPoint {
            threshold: f64::NEG_INFINITY,
            far: 1.0,
            frr: 0.0,
        },
        &mut points,
    );
    for &theta in &thresholds {
        let far = nontargets.iter().filter(|&&s| s >= theta).count() as f64
            / nontargets.len() as f64;
        let frr = targets.iter().filter(|&&s| s < theta).count() as f64 / targets.len() as f64;
        push(
            DetPoint {
                threshold: theta,
                far,
                frr,
            },
            &mut points,
        );
    }
    push(
        DetPoint {
            threshold: f64::INFINITY,
            far: 0.0,
            frr: 1.0,
        },
        &mut points,
    );
    Ok(points)
}

/// Equal error rate: the FAR = FRR crossing, linearly interpolated between
/// the two adjacent DET points that straddle it.
pub fn eer(t: &TrialSet) -> Result<f64> {
    let points = det_points(t)?;
    eer_from_points(&points)
}

pub(crate) fn eer_from_points(points: &[DetPoint]) -> Result<f64> {
    // far − frr starts at +1 and ends at −1, so a sign change always exists
    for pair in points.windows(2) {
        let d0 = pair[0].far - pair[0].frr;
        let d1 = pair[1].far - pair[1].frr;
        if d0 == 0.0 {
            return Ok(pair[0].far);
        }
        if d0 > 0.0 && d1 <= 0.0 {
            let alpha = d0 / (d0 - d1);
            return Ok(pair[0].frr + alpha * (pair[1].frr - pair[0].frr));
        }
    }
    Ok(points.last().map(|p| p.far).unwrap_or(0.0))
}

/// Minimum detection cost:
/// min over DET points of (c_miss·FRR·p + c_fa·FAR·(1−p)), normalized by
/// min(c_miss·p, c_fa·(1−p)).
pub fn min_dcf(t: &TrialSet, p_target: f64, c_miss: f64, c_fa: f64) -> Result<f64> {
    if !(0.0 < p_target && p_target < 1.0) {
        return Err(Error::Input(format!(
            "p_target must lie in (0, 1), got {p_target}"
        )));
    }
    let points = det_points(t)?;
    let norm = (c_miss * p_target).min(c_fa * (1.0 - p_target));
    let mut best = f64::INFINITY;
    for p in &points {
        let dcf = c_miss * p.frr * p_target + c_fa * p.far * (1.0 - p_target);
        if dcf < best {
            best = dcf;
        }
    }
    Ok(best / norm)
}

/// minDCF with the conventional defaults: p_target = 0.01, unit costs.
pub fn min_dcf_default(t: &TrialSet) -> Result<f64> {
    min_dcf(t, 0.01, 1.0, 1.0)
}

/// Parses trial lines `label enroll test` with label ∈ {1, 0, target,
/// nontarget}. Scores are left unset.
pub fn parse_trials(text: &str) -> Result<TrialSet> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 'label enroll test', got {} fields", fields.len()),
            });
        }
        let label = match fields[0] {
            "1" | "target" => Label::Target,
            "0" | "nontarget" => Label::Nontarget,
            other => {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("unknown label '{other}'"),
                })
            }
        };
        entries.push(Trial {
            label,
            enroll: fields[1].to_string(),
            test: fields[2].to_string(),
            score: None,
        });
    }
    Ok(TrialSet { entries })
}

/// Parses score lines `enroll test score` into a lookup map.
pub fn parse_scores(text: &str) -> Result<HashMap<(String, String), f64>> {
    let mut scores = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 'enroll test score', got {} fields", fields.len()),
            });
        }
        let value: f64 = fields[2].parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("bad score '{}'", fields[2]),
        })?;
        if !value.is_finite() {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("non-finite score {value}"),
            });
        }
        let key = (fields[0].to_string(), fields[1].to_string());
        if scores.insert(key, value).is_some() {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("duplicate score for {} {}", fields[0], fields[1]),
            });
        }
    }
    Ok(scores)
}

/// DET points as `threshold,far,frr` CSV.
pub fn det_csv(points: &[DetPoint]) -> String {
    let mut out = String::from("threshold,far,frr\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.threshold, p.far, p.frr));
    }
    out
}
