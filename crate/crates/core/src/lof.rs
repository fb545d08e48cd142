//! Landmark-aware objective: foreground-weighted KL heatmap loss, mean
//! absolute coordinate loss and their weighted sum, with analytic gradients.

use rand::Rng;

use crate::error::ShapeError;
use crate::gradcheck::Objective;

/// Heatmap trade-off weight.
pub const DEFAULT_ALPHA: f64 = 5.0;
/// Foreground emphasis in the heatmap weights.
pub const DEFAULT_BETA: f64 = 15.0;
/// Lower clamp on predicted probabilities before the log.
pub const DEFAULT_FLOOR: f64 = 1e-12;
/// Gaussian width for synthesized ground-truth heatmaps, in map pixels.
pub const DEFAULT_SIGMA: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    pub floor: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            floor: DEFAULT_FLOOR,
        }
    }
}

/// Per-channel spatial maps, channel-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapSet {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl HeatmapSet {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self, ShapeError> {
        let expected = channels * height * width;
        if expected == 0 {
            return Err(ShapeError::Invalid {
                what: "heatmap set",
                message: "dimensions must be positive".into(),
            });
        }
        if values.len() != expected {
            return Err(ShapeError::mismatch("heatmap values", expected, values.len()));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(ShapeError::NonFinite { what: "heatmap values", index });
        }
        Ok(Self {
            channels,
            height,
            width,
            values,
        })
    }

    /// One isotropic Gaussian per center `(x, y)`, each normalized to sum 1.
    pub fn gaussian(centers: &[(f64, f64)], height: usize, width: usize, sigma: f64) -> Result<Self, ShapeError> {
        let mut values = Vec::with_capacity(centers.len() * height * width);
        for &(cx, cy) in centers {
            let start = values.len();
            for r in 0..height {
                for c in 0..width {
                    let d2 = (c as f64 - cx).powi(2) + (r as f64 - cy).powi(2);
                    values.push((-d2 / (2.0 * sigma * sigma)).exp());
                }
            }
            let total: f64 = values[start..].iter().sum();
            for v in &mut values[start..] {
                *v /= total;
            }
        }
        Self::new(centers.len(), height, width, values)
    }

    /// Strictly positive random distributions, one per channel.
    pub fn random<R: Rng>(rng: &mut R, channels: usize, height: usize, width: usize) -> Self {
        let mut values: Vec<f64> = (0..channels * height * width).map(|_| rng.gen_range(0.05..1.0)).collect();
        for ch in values.chunks_mut(height * width) {
            let s: f64 = ch.iter().sum();
            ch.iter_mut().for_each(|v| *v /= s);
        }
        Self::new(channels, height, width, values).expect("valid dimensions")
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let p = self.pixels();
        &self.values[c * p..(c + 1) * p]
    }

    /// Checks that every channel is non-negative and sums to 1 within `tol`.
    pub fn check_distributions(&self, tol: f64) -> Result<(), ShapeError> {
        for c in 0..self.channels {
            let ch = self.channel(c);
            if ch.iter().any(|v| *v < 0.0) {
                return Err(ShapeError::Invalid {
                    what: "heatmap channel",
                    message: format!("channel {c} has negative mass"),
                });
            }
            let total: f64 = ch.iter().sum();
            if (total - 1.0).abs() > tol {
                return Err(ShapeError::Invalid {
                    what: "heatmap channel",
                    message: format!("channel {c} sums to {total}"),
                });
            }
        }
        Ok(())
    }

    fn same_shape(&self, other: &HeatmapSet) -> Result<(), ShapeError> {
        let dims = |h: &HeatmapSet| format!("{}x{}x{}", h.channels, h.height, h.width);
        if (self.channels, self.height, self.width) != (other.channels, other.height, other.width) {
            return Err(ShapeError::mismatch("heatmap shape", dims(other), dims(self)));
        }
        Ok(())
    }
}

/// `(beta·y + 1)^y` elementwise.
pub fn foreground_weight(y: f64, beta: f64) -> f64 {
    (beta * y + 1.0).powf(y)
}

pub fn foreground_weights(gt: &HeatmapSet, beta: f64) -> Vec<f64> {
    gt.values.iter().map(|&y| foreground_weight(y, beta)).collect()
}

/// Weighted KL divergence averaged over channels, and its gradient with
/// respect to the prediction. Ground-truth zeros contribute nothing.
pub fn heatmap_loss(pred: &HeatmapSet, gt: &HeatmapSet, cfg: &LossConfig) -> Result<(f64, Vec<f64>), ShapeError> {
    pred.same_shape(gt)?;
    let n = gt.channels as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred.values.len()];
    for (k, (&y, &p)) in gt.values.iter().zip(&pred.values).enumerate() {
        if y == 0.0 {
            continue;
        }
        let w = foreground_weight(y, cfg.beta);
        let clamped = p.max(cfg.floor);
        loss += w * y * (y / clamped).ln();
        if p > cfg.floor {
            grad[k] = -w * y / (n * p);
        }
    }
    Ok((loss / n, grad))
}

/// Mean absolute coordinate error and its subgradient (zero at equality).
pub fn landmark_loss(pred: &[f64], gt: &[f64]) -> Result<(f64, Vec<f64>), ShapeError> {
    if pred.len() != gt.len() {
        return Err(ShapeError::mismatch("landmark coordinates", gt.len(), pred.len()));
    }
    if pred.is_empty() {
        return Err(ShapeError::Invalid {
            what: "landmark coordinates",
            message: "no coordinates".into(),
        });
    }
    let n = pred.len() as f64;
    let loss = pred.iter().zip(gt).map(|(p, y)| (y - p).abs()).sum::<f64>() / n;
    let grad = pred
        .iter()
        .zip(gt)
        .map(|(p, y)| {
            let d = p - y;
            if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect();
    Ok((loss, grad))
}

pub fn total_loss(heatmap: f64, landmark: f64, cfg: &LossConfig) -> f64 {
    cfg.alpha * heatmap + landmark
}

/// Heatmap loss as a function of the flattened prediction.
pub struct HeatmapObjective<'a> {
    pub gt: &'a HeatmapSet,
    pub cfg: LossConfig,
}

impl HeatmapObjective<'_> {
    fn with(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let pred = HeatmapSet {
            values: x.to_vec(),
            ..self.gt.clone()
        };
        heatmap_loss(&pred, self.gt, &self.cfg).expect("same shape")
    }
}

impl Objective for HeatmapObjective<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        self.with(x).0
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.with(x).1
    }
}

/// Coordinate loss against a fixed target; non-smooth where a coordinate
/// equals its target.
pub struct LandmarkObjective<'a> {
    pub gt: &'a [f64],
}

impl Objective for LandmarkObjective<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        landmark_loss(x, self.gt).expect("same length").0
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        landmark_loss(x, self.gt).expect("same length").1
    }

    fn kink_distance(&self, x: &[f64], i: usize) -> Option<f64> {
        Some((x[i] - self.gt[i]).abs())
    }
}
