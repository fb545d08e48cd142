//! Spinal landmark model: 17 vertebrae, four corners each.
//!
//! Coordinates are image pixels with y increasing downward. Corner order inside
//! every vertebra is top-left, top-right, bottom-left, bottom-right. That order
//! is an assumption about the annotation convention; nothing is re-sorted on
//! ingest, so a mislabeled file shows up in [`validate`] instead of being fixed
//! silently.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::LandmarkError;

/// Thoracic plus lumbar vertebrae.
pub const VERTEBRA_COUNT: usize = 17;
/// Corners per vertebra.
pub const CORNERS_PER_VERTEBRA: usize = 4;
/// Landmarks per image.
pub const LANDMARK_COUNT: usize = VERTEBRA_COUNT * CORNERS_PER_VERTEBRA;
/// Scalar coordinates per image (x and y of every landmark).
pub const COORDINATE_COUNT: usize = LANDMARK_COUNT * 2;

/// Endplates whose tilt exceeds this magnitude are reported as implausible.
pub const PLAUSIBLE_TILT_DEG: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Corner label in file order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Corner {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

impl Corner {
    pub const ALL: [Corner; CORNERS_PER_VERTEBRA] = [
        Corner::TopLeft,
        Corner::TopRight,
        Corner::BottomLeft,
        Corner::BottomRight,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Corner::TopLeft => "TL",
            Corner::TopRight => "TR",
            Corner::BottomLeft => "BL",
            Corner::BottomRight => "BR",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "TL" => Some(Corner::TopLeft),
            "TR" => Some(Corner::TopRight),
            "BL" => Some(Corner::BottomLeft),
            "BR" => Some(Corner::BottomRight),
            _ => None,
        }
    }
}

impl fmt::Display for Corner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vertebra {
    pub top_left: Point,
    pub top_right: Point,
    pub bottom_left: Point,
    pub bottom_right: Point,
}

impl Vertebra {
    pub fn from_corners(c: [Point; CORNERS_PER_VERTEBRA]) -> Self {
        Self {
            top_left: c[0],
            top_right: c[1],
            bottom_left: c[2],
            bottom_right: c[3],
        }
    }

    pub fn corners(&self) -> [Point; CORNERS_PER_VERTEBRA] {
        [self.top_left, self.top_right, self.bottom_left, self.bottom_right]
    }

    pub fn corner(&self, corner: Corner) -> Point {
        match corner {
            Corner::TopLeft => self.top_left,
            Corner::TopRight => self.top_right,
            Corner::BottomLeft => self.bottom_left,
            Corner::BottomRight => self.bottom_right,
        }
    }

    pub fn centroid(&self) -> Point {
        let c = self.corners();
        Point::new(
            c.iter().map(|p| p.x).sum::<f64>() / 4.0,
            c.iter().map(|p| p.y).sum::<f64>() / 4.0,
        )
    }

    /// Mean y of the upper endplate.
    pub fn top_y(&self) -> f64 {
        (self.top_left.y + self.top_right.y) / 2.0
    }

    /// Mean y of the lower endplate.
    pub fn bottom_y(&self) -> f64 {
        (self.bottom_left.y + self.bottom_right.y) / 2.0
    }
}

/// One image worth of landmarks (ground truth or prediction).
#[derive(Debug, Clone, PartialEq)]
pub struct SpineLandmarks {
    pub image_id: String,
    pub vertebrae: [Vertebra; VERTEBRA_COUNT],
    /// Millimetres per pixel.
    pub pixel_spacing_mm: f64,
}

impl SpineLandmarks {
    /// Builds from 68 points in vertebra-major, TL/TR/BL/BR order.
    pub fn from_points(
        image_id: impl Into<String>,
        points: &[Point],
        pixel_spacing_mm: f64,
    ) -> Result<Self, LandmarkError> {
        let image_id = image_id.into();
        if points.len() != LANDMARK_COUNT {
            return Err(LandmarkError::Structure {
                image_id,
                message: format!("expected {LANDMARK_COUNT} landmarks, found {}", points.len()),
            });
        }
        if !(pixel_spacing_mm.is_finite() && pixel_spacing_mm > 0.0) {
            return Err(LandmarkError::Value {
                image_id,
                message: format!("pixel spacing must be positive and finite, got {pixel_spacing_mm}"),
            });
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(LandmarkError::Value {
                image_id,
                message: format!("non-finite coordinate at landmark {i}"),
            });
        }
        let mut vertebrae = [Vertebra::default(); VERTEBRA_COUNT];
        for (v, chunk) in points.chunks_exact(CORNERS_PER_VERTEBRA).enumerate() {
            vertebrae[v] = Vertebra::from_corners([chunk[0], chunk[1], chunk[2], chunk[3]]);
        }
        Ok(Self {
            image_id,
            vertebrae,
            pixel_spacing_mm,
        })
    }

    /// The 68 landmarks in file order.
    pub fn points(&self) -> Vec<Point> {
        self.vertebrae.iter().flat_map(|v| v.corners()).collect()
    }

    /// The 136 coordinates as `x0, y0, x1, y1, ...`.
    pub fn coordinates(&self) -> Vec<f64> {
        self.points().iter().flat_map(|p| [p.x, p.y]).collect()
    }

    /// Applies `f` to every landmark, keeping id and spacing.
    pub fn map_points(&self, mut f: impl FnMut(Point) -> Point) -> Self {
        let mut out = self.clone();
        for v in out.vertebrae.iter_mut() {
            v.top_left = f(v.top_left);
            v.top_right = f(v.top_right);
            v.bottom_left = f(v.bottom_left);
            v.bottom_right = f(v.bottom_right);
        }
        out
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        self.map_points(|p| Point::new(p.x + dx, p.y + dy))
    }

    /// Rotates about `center` by `angle` radians. Positive angles increase
    /// every tilt under the y-down convention.
    pub fn rotated(&self, angle: f64, center: Point) -> Self {
        let (s, c) = angle.sin_cos();
        self.map_points(|p| {
            let (dx, dy) = (p.x - center.x, p.y - center.y);
            Point::new(center.x + c * dx - s * dy, center.y + s * dx + c * dy)
        })
    }

    pub fn scaled(&self, factor: f64, center: Point) -> Self {
        self.map_points(|p| {
            Point::new(
                center.x + factor * (p.x - center.x),
                center.y + factor * (p.y - center.y),
            )
        })
    }

    pub fn centroid(&self) -> Point {
        let pts = self.points();
        let n = pts.len() as f64;
        Point::new(
            pts.iter().map(|p| p.x).sum::<f64>() / n,
            pts.iter().map(|p| p.y).sum::<f64>() / n,
        )
    }
}

/// Non-fatal geometry problems found by [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum ValidationWarning {
    /// |endplate tilt| above [`PLAUSIBLE_TILT_DEG`].
    ImplausibleTilt {
        vertebra: usize,
        lower: bool,
        tilt_deg: f64,
    },
    /// Lower endplate at or above the upper one (order inversion inside a vertebra).
    NonPositiveHeight { vertebra: usize, height_px: f64 },
    /// Vertebra `lower` starts above the end of vertebra `upper`.
    VerticalOrderInversion { upper: usize, lower: usize },
    /// Left corner not left of the right corner on an endplate.
    CornerOrder { vertebra: usize, lower: bool },
    /// Both landmarks of an endplate coincide.
    DegenerateEndplate { vertebra: usize, lower: bool },
}

impl fmt::Display for ValidationWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let edge = |lower: &bool| if *lower { "lower" } else { "upper" };
        match self {
            ValidationWarning::ImplausibleTilt {
                vertebra,
                lower,
                tilt_deg,
            } => write!(
                f,
                "vertebra {}: {} endplate tilt {tilt_deg:.1}° exceeds ±{PLAUSIBLE_TILT_DEG}°",
                vertebra + 1,
                edge(lower)
            ),
            ValidationWarning::NonPositiveHeight {
                vertebra,
                height_px,
            } => write!(
                f,
                "vertebra {}: lower endplate not below upper endplate (height {height_px:.3} px)",
                vertebra + 1
            ),
            ValidationWarning::VerticalOrderInversion { upper, lower } => write!(
                f,
                "vertebra {} begins above the end of vertebra {}",
                lower + 1,
                upper + 1
            ),
            ValidationWarning::CornerOrder { vertebra, lower } => write!(
                f,
                "vertebra {}: {} endplate left corner is not left of right corner",
                vertebra + 1,
                edge(lower)
            ),
            ValidationWarning::DegenerateEndplate { vertebra, lower } => write!(
                f,
                "vertebra {}: {} endplate landmarks coincide",
                vertebra + 1,
                edge(lower)
            ),
        }
    }
}

/// Flags implausible geometry. Never fails.
pub fn validate(sl: &SpineLandmarks) -> Vec<ValidationWarning> {
    let mut warnings = Vec::new();
    for (v, vert) in sl.vertebrae.iter().enumerate() {
        for (lower, left, right) in [
            (false, vert.top_left, vert.top_right),
            (true, vert.bottom_left, vert.bottom_right),
        ] {
            let (dx, dy) = (right.x - left.x, right.y - left.y);
            if dx == 0.0 && dy == 0.0 {
                warnings.push(ValidationWarning::DegenerateEndplate { vertebra: v, lower });
                continue;
            }
            if left.x >= right.x {
                warnings.push(ValidationWarning::CornerOrder { vertebra: v, lower });
            }
            let tilt = crate::tilt::endplate_tilt(left, right).unwrap_or(0.0);
            if tilt.to_degrees().abs() > PLAUSIBLE_TILT_DEG {
                warnings.push(ValidationWarning::ImplausibleTilt {
                    vertebra: v,
                    lower,
                    tilt_deg: tilt.to_degrees(),
                });
            }
        }
        let height = vert.bottom_y() - vert.top_y();
        if height <= 0.0 {
            warnings.push(ValidationWarning::NonPositiveHeight {
                vertebra: v,
                height_px: height,
            });
        }
    }
    for (v, pair) in sl.vertebrae.windows(2).enumerate() {
        if pair[1].top_y() < pair[0].bottom_y() {
            warnings.push(ValidationWarning::VerticalOrderInversion {
                upper: v,
                lower: v + 1,
            });
        }
    }
    warnings
}


#[cfg(test)]
mod tests {
    use super::fixtures::stacked_spine;
    use super::*;

    #[test]
    fn horizontal_stack_is_clean() {
        assert!(validate(&stacked_spine()).is_empty());
    }

    #[test]
    fn inverted_vertebra_is_reported() {
        let mut sl = stacked_spine();
        let v = &mut sl.vertebrae[6];
        std::mem::swap(&mut v.top_left, &mut v.bottom_left);
        std::mem::swap(&mut v.top_right, &mut v.bottom_right);
        let w = validate(&sl);
        assert!(w.contains(&ValidationWarning::NonPositiveHeight {
            vertebra: 6,
            height_px: -20.0
        }));
    }

    #[test]
    fn overlapping_neighbours_are_reported() {
        let mut sl = stacked_spine();
        sl.vertebrae[3] = Vertebra::from_corners(
            sl.vertebrae[3].corners().map(|p| Point::new(p.x, p.y - 25.0)),
        );
        let w = validate(&sl);
        assert!(w.contains(&ValidationWarning::VerticalOrderInversion { upper: 2, lower: 3 }));
    }

    #[test]
    fn steep_endplate_is_reported() {
        let mut sl = stacked_spine();
        let v = &mut sl.vertebrae[0];
        let a = 75f64.to_radians();
        v.top_right = Point::new(v.top_left.x + 40.0 * a.cos(), v.top_left.y + 40.0 * a.sin());
        let w = validate(&sl);
        assert!(w.iter().any(|w| matches!(
            w,
            ValidationWarning::ImplausibleTilt { vertebra: 0, lower: false, tilt_deg } if (tilt_deg - 75.0).abs() < 1e-9
        )));
    }

    #[test]
    fn swapped_corners_warn_but_are_kept() {
        let mut sl = stacked_spine();
        let v = &mut sl.vertebrae[2];
        std::mem::swap(&mut v.top_left, &mut v.top_right);
        let w = validate(&sl);
        assert!(w.contains(&ValidationWarning::CornerOrder { vertebra: 2, lower: false }));
        assert_eq!(sl.vertebrae[2].top_left.x, 140.0);
    }

    #[test]
    fn from_points_rejects_bad_input() {
        let pts = stacked_spine().points();
        assert!(matches!(
            SpineLandmarks::from_points("a", &pts[..67], 1.0),
            Err(LandmarkError::Structure { .. })
        ));
        let mut bad = pts.clone();
        bad[10].y = f64::NAN;
        assert!(matches!(
            SpineLandmarks::from_points("a", &bad, 1.0),
            Err(LandmarkError::Value { .. })
        ));
        assert!(SpineLandmarks::from_points("a", &pts, 0.0).is_err());
    }
}
