//! Synthetic spines with known tilts.
//!
//! Each vertebra is a `width × height` rectangle rotated by its tilt about its
//! centroid. Consecutive centroids are `height + gap` apart along the normal of
//! the mean tilt of the two vertebrae, so with zero jitter every endplate
//! carries exactly the vertebra's tilt.

pub mod oracle;

pub use oracle::oracle_cobb;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::SynthError;
use crate::landmarks::{Point, SpineLandmarks, VERTEBRA_COUNT};
use crate::tilt::TiltProfile;

/// Bound on random tilts, degrees.
pub const RANDOM_TILT_DEG: f64 = 25.0;

/// Centroid of the first vertebra.
pub const ORIGIN: Point = Point::new(256.0, 60.0);

#[derive(Debug, Clone, PartialEq)]
pub struct SpineSpec {
    pub tilt_profile_deg: [f64; VERTEBRA_COUNT],
    pub vertebra_width_px: f64,
    pub vertebra_height_px: f64,
    pub gap_px: f64,
    pub jitter_px: f64,
    pub seed: u64,
}

impl SpineSpec {
    /// 40×20 px vertebrae, 20 px gaps, no jitter.
    pub fn new(tilt_profile_deg: [f64; VERTEBRA_COUNT]) -> Self {
        Self {
            tilt_profile_deg,
            vertebra_width_px: 40.0,
            vertebra_height_px: 20.0,
            gap_px: 20.0,
            jitter_px: 0.0,
            seed: 0,
        }
    }

    pub fn with_jitter(mut self, jitter_px: f64, seed: u64) -> Self {
        self.jitter_px = jitter_px;
        self.seed = seed;
        self
    }

    fn check(&self) -> Result<(), SynthError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !(positive(self.vertebra_width_px) && positive(self.vertebra_height_px)) {
            return Err(SynthError::Spec("vertebra width and height must be positive".into()));
        }
        if !(self.gap_px.is_finite() && self.gap_px > 0.0) {
            return Err(SynthError::Spec("gap must be positive".into()));
        }
        if !(self.jitter_px.is_finite() && self.jitter_px >= 0.0) {
            return Err(SynthError::Spec("jitter must be non-negative".into()));
        }
        if let Some(t) = self.tilt_profile_deg.iter().find(|t| !(t.is_finite() && t.abs() < 90.0)) {
            return Err(SynthError::Spec(format!("tilt {t}° outside (-90°, 90°)")));
        }
        Ok(())
    }
}

/// Builds the landmarks and the exact tilt profile they were built from.
pub fn generate_spine(spec: &SpineSpec) -> Result<(SpineLandmarks, TiltProfile), SynthError> {
    spec.check()?;
    let tilts = spec.tilt_profile_deg.map(f64::to_radians);
    let (hw, hh) = (spec.vertebra_width_px / 2.0, spec.vertebra_height_px / 2.0);
    let step = spec.vertebra_height_px + spec.gap_px;

    let mut center = ORIGIN;
    let mut quads = Vec::with_capacity(VERTEBRA_COUNT);
    for (v, &t) in tilts.iter().enumerate() {
        if v > 0 {
            let mean = (tilts[v - 1] + t) / 2.0;
            center = Point::new(center.x - step * mean.sin(), center.y + step * mean.cos());
        }
        let (s, c) = t.sin_cos();
        let along = |k: f64, m: f64| Point::new(center.x + k * c - m * s, center.y + k * s + m * c);
        // TL, TR, BL, BR
        quads.push([along(-hw, -hh), along(hw, -hh), along(-hw, hh), along(hw, hh)]);
    }
    for i in 0..quads.len() {
        for j in i + 1..quads.len() {
            if quads_overlap(&quads[i], &quads[j]) {
                return Err(SynthError::Overlap { upper: i, lower: j });
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let j = spec.jitter_px;
    let points: Vec<Point> = quads
        .iter()
        .flatten()
        .map(|p| {
            if j > 0.0 {
                Point::new(p.x + rng.gen_range(-j..=j), p.y + rng.gen_range(-j..=j))
            } else {
                *p
            }
        })
        .collect();
    let landmarks = SpineLandmarks::from_points(format!("synth-{}", spec.seed), &points, 1.0)
        .map_err(|e| SynthError::Landmark(e.to_string()))?;
    Ok((landmarks, TiltProfile::from_vertebral(tilts)))
}

/// Separating-axis test on two rectangles given as TL, TR, BL, BR. Touching
/// edges do not count as overlap.
fn quads_overlap(a: &[Point; 4], b: &[Point; 4]) -> bool {
    let axes = |q: &[Point; 4]| {
        [(q[1].x - q[0].x, q[1].y - q[0].y), (q[2].x - q[0].x, q[2].y - q[0].y)]
    };
    let project = |q: &[Point; 4], (ax, ay): (f64, f64)| {
        q.iter()
            .map(|p| p.x * ax + p.y * ay)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)))
    };
    axes(a).into_iter().chain(axes(b)).all(|axis| {
        let (a_lo, a_hi) = project(a, axis);
        let (b_lo, b_hi) = project(b, axis);
        a_hi > b_lo && b_hi > a_lo
    })
}

/// Independent uniform tilts in `±max_abs_deg`.
pub fn random_profile_deg<R: Rng>(rng: &mut R, max_abs_deg: f64) -> [f64; VERTEBRA_COUNT] {
    std::array::from_fn(|_| rng.gen_range(-max_abs_deg..=max_abs_deg))
}

/// `count` random spines; image `i` is named `synth-{i:04}`.
pub fn synth_batch(
    count: usize,
    seed: u64,
    jitter_px: f64,
) -> Result<Vec<(SpineLandmarks, TiltProfile)>, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let profile = random_profile_deg(&mut rng, RANDOM_TILT_DEG);
            let spec = SpineSpec::new(profile).with_jitter(jitter_px, rng.gen());
            let (mut sl, truth) = generate_spine(&spec)?;
            sl.image_id = format!("synth-{i:04}");
            Ok((sl, truth))
        })
        .collect()
}
