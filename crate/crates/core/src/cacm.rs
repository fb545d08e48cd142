//! Segment-aware Cobb angle calculation, plus the max-pair baseline it replaces.
//!
//! The segment-aware method first locates inflection vertebrae (where the
//! vertebral tilt changes sign), derives one bending segment per inflection
//! from its neighbouring inflections, measures an angle inside each segment
//! and finally picks three angles depending on how many inflections exist.
//!
//! The baseline takes the largest tilt difference over all vertebra pairs as
//! the main curve and measures the two remaining curves above and below it.
//!
//! Vertebra indices are 0-based here. The serialized report uses 1-based
//! indices.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::TiltError;
use crate::landmarks::{SpineLandmarks, VERTEBRA_COUNT};
use crate::tilt::TiltProfile;

/// Default half-width of the "tilt is zero" band, radians.
pub const DEFAULT_EPSILON: f64 = 1e-6;

const LAST: usize = VERTEBRA_COUNT - 1;

/// Vertebral tilts in radians, cranial to caudal.
pub type Tilts = [f64; VERTEBRA_COUNT];

/// Sorted inflection vertebrae, all in `1..=15`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct InflectionSet(Vec<usize>);

impl InflectionSet {
    /// Returns `None` unless `indices` is strictly increasing and interior.
    pub fn from_indices(indices: Vec<usize>) -> Option<Self> {
        let interior = indices.iter().all(|&i| (1..LAST).contains(&i));
        let increasing = indices.windows(2).all(|w| w[0] < w[1]);
        (interior && increasing).then_some(Self(indices))
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    /// Number of inflections.
    pub fn count(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, v: usize) -> bool {
        self.0.binary_search(&v).is_ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WindowKind {
    /// Bending segment around one inflection.
    #[serde(rename = "interior")]
    Interior,
    /// Spine end to the first, or last inflection to the spine end.
    #[serde(rename = "end")]
    End,
    /// Baseline main curve (largest pairwise tilt difference).
    #[serde(rename = "mt")]
    Main,
    /// Baseline curve above the main one.
    #[serde(rename = "pt")]
    Proximal,
    /// Baseline curve below the main one.
    #[serde(rename = "tl")]
    Distal,
}

/// Inclusive vertebra range, `first < last`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentWindow {
    pub kind: WindowKind,
    pub first: usize,
    pub last: usize,
}

impl SegmentWindow {
    pub fn new(kind: WindowKind, first: usize, last: usize) -> Self {
        debug_assert!(first < last && last < VERTEBRA_COUNT, "bad window {first}..={last}");
        Self { kind, first, last }
    }

    pub fn contains(&self, v: usize) -> bool {
        (self.first..=self.last).contains(&v)
    }

    pub fn tilts<'a>(&self, tilts: &'a Tilts) -> &'a [f64] {
        &tilts[self.first..=self.last]
    }
}

impl fmt::Display for SegmentWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.first, self.last)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentWindows {
    /// One per inflection, in order.
    pub interior: Vec<SegmentWindow>,
    /// `[0, first inflection]` and `[last inflection, 16]`.
    pub ends: [SegmentWindow; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    /// No inflection; the whole-spine tilt range is reported alone.
    SingleCurve,
    /// An end segment's max-minus-|min| would have been negative.
    ClampedNegativeEndAngle,
    /// More than three inflections; the three largest interior angles are kept.
    ManyInflections,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "CACM")]
    Cacm,
    #[serde(rename = "CAM")]
    Cam,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Cacm => "CACM",
            Method::Cam => "CAM",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowAngle {
    pub window: SegmentWindow,
    pub angle_deg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CobbReport {
    pub image_id: String,
    pub method: Method,
    /// Three non-negative angles in degrees.
    pub angles_deg: [f64; 3],
    pub inflections: InflectionSet,
    pub windows: Vec<WindowAngle>,
    pub flags: BTreeSet<Flag>,
}

impl CobbReport {
    pub fn interior_windows(&self) -> impl Iterator<Item = &WindowAngle> {
        self.windows
            .iter()
            .filter(|w| w.window.kind == WindowKind::Interior)
    }

    pub fn window(&self, kind: WindowKind) -> Option<&WindowAngle> {
        self.windows.iter().find(|w| w.window.kind == kind)
    }

    pub fn to_record(&self) -> ReportRecord {
        ReportRecord {
            image_id: self.image_id.clone(),
            method: self.method,
            angles_deg: self.angles_deg,
            inflections: self.inflections.indices().iter().map(|i| i + 1).collect(),
            windows: self
                .windows
                .iter()
                .map(|w| WindowRecord {
                    kind: w.window.kind,
                    first: w.window.first + 1,
                    last: w.window.last + 1,
                    angle_deg: w.angle_deg,
                })
                .collect(),
            flags: self.flags.iter().copied().collect(),
        }
    }

    /// One compact JSON line, keys in a fixed order.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&self.to_record()).expect("report serializes")
    }
}

/// Serialized report; vertebra indices are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub image_id: String,
    pub method: Method,
    pub angles_deg: [f64; 3],
    pub inflections: Vec<usize>,
    pub windows: Vec<WindowRecord>,
    pub flags: Vec<Flag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub kind: WindowKind,
    pub first: usize,
    pub last: usize,
    pub angle_deg: f64,
}

/// Locates inflection vertebrae.
///
/// Vertebra `k` qualifies when its tilt is within `epsilon` of zero and its
/// neighbours have opposite signs, or when the tilt changes sign between `k`
/// and `k + 1`; in the latter case the member of the pair with the smaller
/// |tilt| is taken (ties and end vertebrae resolve toward the interior, lower
/// index first).
pub fn find_inflections(tilts: &Tilts, epsilon: f64) -> InflectionSet {
    let mut found = BTreeSet::new();
    for k in 1..LAST {
        if tilts[k].abs() <= epsilon && tilts[k - 1] * tilts[k + 1] < 0.0 {
            found.insert(k);
        }
    }
    for k in 0..LAST {
        if tilts[k] * tilts[k + 1] < 0.0 {
            let pick = if k == 0 {
                1
            } else if k + 1 == LAST {
                k
            } else if tilts[k + 1].abs() < tilts[k].abs() {
                k + 1
            } else {
                k
            };
            found.insert(pick);
        }
    }
    InflectionSet(found.into_iter().collect())
}

/// Bending-segment windows, or `None` when there is no inflection.
pub fn segment_windows(infl: &InflectionSet) -> Option<SegmentWindows> {
    let idx = infl.indices();
    let (&first, &last) = (idx.first()?, idx.last()?);
    let interior = (0..idx.len())
        .map(|i| {
            let lo = if i == 0 { 0 } else { idx[i - 1] };
            let hi = idx.get(i + 1).copied().unwrap_or(LAST);
            SegmentWindow::new(WindowKind::Interior, lo, hi)
        })
        .collect();
    Some(SegmentWindows {
        interior,
        ends: [
            SegmentWindow::new(WindowKind::End, 0, first),
            SegmentWindow::new(WindowKind::End, last, LAST),
        ],
    })
}

fn extremes(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &t| (lo.min(t), hi.max(t)))
}

/// `max + |min|` of the window's tilts, in degrees.
pub fn interior_angle(window: &SegmentWindow, tilts: &Tilts) -> f64 {
    let (lo, hi) = extremes(window.tilts(tilts));
    (hi + lo.abs()).to_degrees()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndAngle {
    pub deg: f64,
    /// `max - |min|` was negative and the tilt range was used instead.
    pub clamped: bool,
}

/// Tilt range (`max - min`) of the window, in degrees.
///
/// For windows whose smallest tilt is non-negative this equals `max - |min|`.
pub fn end_angle(window: &SegmentWindow, tilts: &Tilts) -> EndAngle {
    let (lo, hi) = extremes(window.tilts(tilts));
    EndAngle {
        deg: (hi - lo).to_degrees(),
        clamped: hi - lo.abs() < 0.0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub angles_deg: [f64; 3],
    pub flags: BTreeSet<Flag>,
}

/// Picks the three reported angles. The inflection count is `interior.len()`;
/// `tilts` is only consulted when it is zero.
pub fn select_cobb(interior: &[f64], ends: &[f64], tilts: &Tilts) -> Selection {
    let mut flags = BTreeSet::new();
    let max_end = || ends.iter().copied().fold(0.0, f64::max);
    let angles_deg = match interior {
        [] => {
            flags.insert(Flag::SingleCurve);
            let (lo, hi) = extremes(tilts);
            [(hi - lo).to_degrees(), 0.0, 0.0]
        }
        [d] => [*d, ends[0], ends[1]],
        [d0, d1] => [*d0, *d1, max_end()],
        [d0, d1, d2] => [*d0, *d1, *d2],
        many => {
            flags.insert(Flag::ManyInflections);
            let mut sorted = many.to_vec();
            sorted.sort_by(|a, b| b.total_cmp(a));
            [sorted[0], sorted[1], sorted[2]]
        }
    };
    Selection { angles_deg, flags }
}

/// Segment-aware angles from vertebral tilts.
pub fn cacm_from_tilts(image_id: impl Into<String>, tilts: &Tilts, epsilon: f64) -> CobbReport {
    let inflections = find_inflections(tilts, epsilon);
    let mut windows = Vec::new();
    let mut clamped = false;
    let (interior, ends): (Vec<f64>, Vec<f64>) = match segment_windows(&inflections) {
        None => (Vec::new(), Vec::new()),
        Some(sw) => {
            let interior: Vec<f64> = sw
                .interior
                .iter()
                .map(|w| {
                    let angle_deg = interior_angle(w, tilts);
                    windows.push(WindowAngle { window: *w, angle_deg });
                    angle_deg
                })
                .collect();
            let ends = sw
                .ends
                .iter()
                .map(|w| {
                    let e = end_angle(w, tilts);
                    clamped |= e.clamped;
                    windows.push(WindowAngle { window: *w, angle_deg: e.deg });
                    e.deg
                })
                .collect();
            (interior, ends)
        }
    };
    let mut selection = select_cobb(&interior, &ends, tilts);
    if clamped {
        selection.flags.insert(Flag::ClampedNegativeEndAngle);
    }
    CobbReport {
        image_id: image_id.into(),
        method: Method::Cacm,
        angles_deg: selection.angles_deg,
        inflections,
        windows,
        flags: selection.flags,
    }
}

pub fn cacm_pipeline(sl: &SpineLandmarks, epsilon: f64) -> Result<CobbReport, TiltError> {
    let profile = TiltProfile::from_landmarks(sl)?;
    Ok(cacm_from_tilts(sl.image_id.clone(), &profile.vertebral, epsilon))
}

/// Largest |tilt difference| over pairs inside `first..=last`, with the pair.
fn max_pair(tilts: &Tilts, first: usize, last: usize) -> Option<(f64, usize, usize)> {
    let mut best: Option<(f64, usize, usize)> = None;
    for p in first..=last {
        for q in p + 1..=last {
            let d = (tilts[p] - tilts[q]).abs();
            if best.map_or(true, |(b, _, _)| d > b) {
                best = Some((d, p, q));
            }
        }
    }
    best
}

/// Baseline: main curve from the globally largest pair, then the largest pair
/// above and below it (windows include the main pair's end vertebrae).
pub fn cam_from_tilts(image_id: impl Into<String>, tilts: &Tilts) -> CobbReport {
    let (mt, p, q) = max_pair(tilts, 0, LAST).expect("at least two vertebrae");
    let mut windows = vec![WindowAngle {
        window: SegmentWindow::new(WindowKind::Main, p, q),
        angle_deg: mt.to_degrees(),
    }];
    let mut side = |kind, first, last| {
        max_pair(tilts, first, last).map_or(0.0, |(d, _, _)| {
            let angle_deg = d.to_degrees();
            windows.push(WindowAngle {
                window: SegmentWindow::new(kind, first, last),
                angle_deg,
            });
            angle_deg
        })
    };
    let pt = side(WindowKind::Proximal, 0, p);
    let tl = side(WindowKind::Distal, q, LAST);
    CobbReport {
        image_id: image_id.into(),
        method: Method::Cam,
        angles_deg: [mt.to_degrees(), pt, tl],
        inflections: InflectionSet::default(),
        windows,
        flags: BTreeSet::new(),
    }
}

pub fn cam_baseline(sl: &SpineLandmarks) -> Result<CobbReport, TiltError> {
    let profile = TiltProfile::from_landmarks(sl)?;
    Ok(cam_from_tilts(sl.image_id.clone(), &profile.vertebral))
}

/// Degrees to a radian tilt array.
pub fn tilts_from_deg(deg: &[f64; VERTEBRA_COUNT]) -> Tilts {
    deg.map(f64::to_radians)
}
