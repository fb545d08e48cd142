//! Landmark and angle evaluation metrics.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::error::MetricsError;
use crate::landmarks::SpineLandmarks;

pub const SDR_DELTAS_MM: [f64; 4] = [1.0, 2.0, 3.0, 4.0];

/// Matches two keyed collections by id. Order of the output follows the
/// sorted ids so every reduction is independent of input order.
pub fn pair_by_id<'a, 'b, A, B>(
    pred: &'a [A],
    gt: &'b [B],
    pred_id: impl Fn(&A) -> &str,
    gt_id: impl Fn(&B) -> &str,
) -> Result<Vec<(&'a A, &'b B)>, MetricsError> {
    let mut p = BTreeMap::new();
    for item in pred {
        if p.insert(pred_id(item), item).is_some() {
            return Err(MetricsError::Duplicate(pred_id(item).to_owned()));
        }
    }
    let mut g = BTreeMap::new();
    for item in gt {
        if g.insert(gt_id(item), item).is_some() {
            return Err(MetricsError::Duplicate(gt_id(item).to_owned()));
        }
    }
    let pk: BTreeSet<&str> = p.keys().copied().collect();
    let gk: BTreeSet<&str> = g.keys().copied().collect();
    if pk != gk {
        return Err(MetricsError::Pairing {
            only_pred: pk.difference(&gk).map(|s| s.to_string()).collect(),
            only_gt: gk.difference(&pk).map(|s| s.to_string()).collect(),
        });
    }
    if p.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(p.into_iter().map(|(k, a)| (a, g[k])).collect())
}

pub fn pair_landmarks<'a>(
    pred: &'a [SpineLandmarks],
    gt: &'a [SpineLandmarks],
) -> Result<Vec<(&'a SpineLandmarks, &'a SpineLandmarks)>, MetricsError> {
    pair_by_id(pred, gt, |s| &s.image_id, |s| &s.image_id)
}

/// Per-landmark Euclidean errors in mm, scaled by the ground truth spacing.
fn landmark_errors_mm<'a>(
    pairs: &'a [(&'a SpineLandmarks, &'a SpineLandmarks)],
) -> impl Iterator<Item = f64> + 'a {
    pairs.iter().flat_map(|(p, g)| {
        let s = g.pixel_spacing_mm;
        p.points().into_iter().zip(g.points()).map(move |(a, b)| a.distance(&b) * s)
    })
}

/// Mean squared landmark distance in mm².
pub fn landmark_mse(pairs: &[(&SpineLandmarks, &SpineLandmarks)]) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::Empty);
    }
    let (sum, n) = landmark_errors_mm(pairs).fold((0.0, 0usize), |(s, n), e| (s + e * e, n + 1));
    Ok(sum / n as f64)
}

/// Percentage of landmarks within `delta_mm` (inclusive).
pub fn sdr(pairs: &[(&SpineLandmarks, &SpineLandmarks)], delta_mm: f64) -> Result<f64, MetricsError> {
    if !(delta_mm > 0.0) {
        return Err(MetricsError::Delta(delta_mm));
    }
    if pairs.is_empty() {
        return Err(MetricsError::Empty);
    }
    let (hit, n) = landmark_errors_mm(pairs).fold((0usize, 0usize), |(h, n), e| (h + usize::from(e <= delta_mm), n + 1));
    Ok(100.0 * hit as f64 / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Smape {
    pub percent: f64,
    /// Images dropped for a zero denominator.
    pub skipped: usize,
}

/// Per-image `Σ|a - g| / Σ(a + g)`, averaged over images, in percent.
pub fn smape(pairs: &[([f64; 3], [f64; 3])]) -> Result<Smape, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut sum = 0.0;
    let mut used = 0usize;
    for (a, g) in pairs {
        let num: f64 = a.iter().zip(g).map(|(x, y)| (x - y).abs()).sum();
        let den: f64 = a.iter().zip(g).map(|(x, y)| x + y).sum();
        if den > 0.0 {
            sum += num / den;
            used += 1;
        }
    }
    let skipped = pairs.len() - used;
    let percent = if used == 0 { 0.0 } else { 100.0 * sum / used as f64 };
    Ok(Smape { percent, skipped })
}

pub fn circular_distance_deg(a: f64, g: f64) -> f64 {
    let d = (a - g).abs().rem_euclid(360.0);
    d.min(360.0 - d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AngleErrors {
    pub cmae_deg: f64,
    pub ed_deg: f64,
    pub md_deg: f64,
    pub cd_deg: f64,
}

pub fn angle_errors(pairs: &[([f64; 3], [f64; 3])]) -> Result<AngleErrors, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::Empty);
    }
    let (mut circ, mut ed, mut md, mut cd) = (0.0, 0.0, 0.0, 0.0f64);
    for (a, g) in pairs {
        let d: Vec<f64> = a.iter().zip(g).map(|(x, y)| x - y).collect();
        circ += a.iter().zip(g).map(|(x, y)| circular_distance_deg(*x, *y)).sum::<f64>();
        ed += d.iter().map(|v| v * v).sum::<f64>().sqrt();
        md += d.iter().map(|v| v.abs()).sum::<f64>();
        cd += d.iter().map(|v| v.abs()).fold(0.0, f64::max);
    }
    let n = pairs.len() as f64;
    Ok(AngleErrors {
        cmae_deg: circ / (3.0 * n),
        ed_deg: ed / n,
        md_deg: md / n,
        cd_deg: cd / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SdrTable {
    #[serde(rename = "1")]
    pub mm1: f64,
    #[serde(rename = "2")]
    pub mm2: f64,
    #[serde(rename = "3")]
    pub mm3: f64,
    #[serde(rename = "4")]
    pub mm4: f64,
}

/// Aggregate object printed by `eval`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub mse: f64,
    pub sdr: SdrTable,
    pub smape: f64,
    pub cmae: f64,
    pub ed: f64,
    pub md: f64,
    pub cd: f64,
    pub n_images: usize,
    pub skipped: usize,
}

/// Full metric suite. `angles` maps each landmark pair to its predicted and
/// ground truth angle triples.
pub fn evaluate(
    pairs: &[(&SpineLandmarks, &SpineLandmarks)],
    angles: &[([f64; 3], [f64; 3])],
) -> Result<EvalSummary, MetricsError> {
    let s = SDR_DELTAS_MM.map(|d| sdr(pairs, d));
    let [s1, s2, s3, s4] = s;
    let sm = smape(angles)?;
    let ae = angle_errors(angles)?;
    Ok(EvalSummary {
        mse: landmark_mse(pairs)?,
        sdr: SdrTable {
            mm1: s1?,
            mm2: s2?,
            mm3: s3?,
            mm4: s4?,
        },
        smape: sm.percent,
        cmae: ae.cmae_deg,
        ed: ae.ed_deg,
        md: ae.md_deg,
        cd: ae.cd_deg,
        n_images: pairs.len(),
        skipped: sm.skipped,
    })
}
