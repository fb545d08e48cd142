//! Endplate and vertebral tilts.
//!
//! Tilt is the angle of the line from an endplate's left landmark to its right
//! landmark, in radians, normalized to (-π/2, π/2]. Positive means the right
//! side sits lower in the image (y grows downward).

use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::TiltError;
use crate::landmarks::{Point, SpineLandmarks, VERTEBRA_COUNT};

pub const ENDPLATE_COUNT: usize = VERTEBRA_COUNT * 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiltProfile {
    /// Upper then lower endplate of every vertebra: v0-upper, v0-lower, v1-upper, ...
    pub endplate: [f64; ENDPLATE_COUNT],
    /// Mean of each vertebra's two endplate tilts.
    pub vertebral: [f64; VERTEBRA_COUNT],
}

impl TiltProfile {
    pub fn from_landmarks(sl: &SpineLandmarks) -> Result<Self, TiltError> {
        let endplate = endplate_tilts(sl)?;
        Ok(Self {
            endplate,
            vertebral: vertebral_tilts(&endplate),
        })
    }

    /// Profile in which both endplates of each vertebra carry its tilt.
    pub fn from_vertebral(vertebral: [f64; VERTEBRA_COUNT]) -> Self {
        let mut endplate = [0.0; ENDPLATE_COUNT];
        for (v, t) in vertebral.iter().enumerate() {
            endplate[2 * v] = *t;
            endplate[2 * v + 1] = *t;
        }
        Self {
            endplate,
            vertebral,
        }
    }

    pub fn vertebral_deg(&self) -> [f64; VERTEBRA_COUNT] {
        self.vertebral.map(f64::to_degrees)
    }
}

/// Tilt of the segment `left -> right`.
pub fn endplate_tilt(left: Point, right: Point) -> Option<f64> {
    let (dx, dy) = (right.x - left.x, right.y - left.y);
    if dx == 0.0 && dy == 0.0 {
        return None;
    }
    Some(normalize_tilt(dy.atan2(dx)))
}

/// Folds a direction angle in (-π, π] onto the line-slope range (-π/2, π/2].
pub fn normalize_tilt(angle: f64) -> f64 {
    if angle > FRAC_PI_2 {
        angle - PI
    } else if angle <= -FRAC_PI_2 {
        angle + PI
    } else {
        angle
    }
}

pub fn endplate_tilts(sl: &SpineLandmarks) -> Result<[f64; ENDPLATE_COUNT], TiltError> {
    let mut out = [0.0; ENDPLATE_COUNT];
    for (v, vert) in sl.vertebrae.iter().enumerate() {
        out[2 * v] = endplate_tilt(vert.top_left, vert.top_right)
            .ok_or(TiltError::DegenerateEndplate { vertebra: v, lower: false })?;
        out[2 * v + 1] = endplate_tilt(vert.bottom_left, vert.bottom_right)
            .ok_or(TiltError::DegenerateEndplate { vertebra: v, lower: true })?;
    }
    Ok(out)
}

pub fn vertebral_tilts(endplate: &[f64; ENDPLATE_COUNT]) -> [f64; VERTEBRA_COUNT] {
    std::array::from_fn(|v| (endplate[2 * v] + endplate[2 * v + 1]) / 2.0)
}
