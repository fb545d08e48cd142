//! Exhaustive-scan re-derivation of the segment-aware angles.
//!
//! Deliberately shares no code with `crate::cacm`: every vertebra is tested
//! against the inflection predicate, every window is scanned with explicit
//! loops, and the final choice is a lookup on the inflection count.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use crate::cacm::{CobbReport, Flag, InflectionSet, Method, SegmentWindow, WindowAngle, WindowKind};
use crate::landmarks::VERTEBRA_COUNT;

fn deg(rad: f64) -> f64 {
    rad * 180.0 / PI
}

fn window_min(t: &[f64], a: usize, b: usize) -> f64 {
    let mut m = t[a];
    for &x in &t[a..=b] {
        if x < m {
            m = x;
        }
    }
    m
}

fn window_max(t: &[f64], a: usize, b: usize) -> f64 {
    let mut m = t[a];
    for &x in &t[a..=b] {
        if x > m {
            m = x;
        }
    }
    m
}

pub fn oracle_cobb(tilts: &[f64; VERTEBRA_COUNT], epsilon: f64) -> CobbReport {
    let n = VERTEBRA_COUNT;
    let mut marked = vec![false; n];

    for k in 1..n - 1 {
        let zero = tilts[k].abs() <= epsilon;
        let opposite = tilts[k - 1] * tilts[k + 1] < 0.0;
        if zero && opposite {
            marked[k] = true;
        }
    }
    for k in 0..n - 1 {
        if tilts[k] * tilts[k + 1] >= 0.0 {
            continue;
        }
        let mut candidates: Vec<usize> = [k, k + 1]
            .into_iter()
            .filter(|&c| c > 0 && c < n - 1)
            .collect();
        candidates.sort_by(|&a, &b| {
            tilts[a]
                .abs()
                .partial_cmp(&tilts[b].abs())
                .unwrap()
                .then(a.cmp(&b))
        });
        marked[candidates[0]] = true;
    }
    let infl: Vec<usize> = (0..n).filter(|&k| marked[k]).collect();
    let m = infl.len();

    let mut windows = Vec::new();
    let mut interior = Vec::new();
    for i in 0..m {
        let a = if i == 0 { 0 } else { infl[i - 1] };
        let b = if i == m - 1 { n - 1 } else { infl[i + 1] };
        let d = deg(window_max(tilts, a, b) + window_min(tilts, a, b).abs());
        interior.push(d);
        windows.push(WindowAngle {
            window: SegmentWindow { kind: WindowKind::Interior, first: a, last: b },
            angle_deg: d,
        });
    }

    let mut flags = BTreeSet::new();
    let mut ends = Vec::new();
    if m > 0 {
        for (a, b) in [(0, infl[0]), (infl[m - 1], n - 1)] {
            let hi = window_max(tilts, a, b);
            let lo = window_min(tilts, a, b);
            if hi - lo.abs() < 0.0 {
                flags.insert(Flag::ClampedNegativeEndAngle);
            }
            let d = deg(hi - lo);
            ends.push(d);
            windows.push(WindowAngle {
                window: SegmentWindow { kind: WindowKind::End, first: a, last: b },
                angle_deg: d,
            });
        }
    }

    let angles = match m {
        0 => {
            flags.insert(Flag::SingleCurve);
            [deg(window_max(tilts, 0, n - 1) - window_min(tilts, 0, n - 1)), 0.0, 0.0]
        }
        1 => [interior[0], ends[0], ends[1]],
        2 => [interior[0], interior[1], if ends[0] >= ends[1] { ends[0] } else { ends[1] }],
        3 => [interior[0], interior[1], interior[2]],
        _ => {
            flags.insert(Flag::ManyInflections);
            let mut top = [f64::NEG_INFINITY; 3];
            let mut used = vec![false; m];
            for slot in top.iter_mut() {
                let mut best = None;
                for (i, &d) in interior.iter().enumerate() {
                    if !used[i] && best.map_or(true, |b: usize| d > interior[b]) {
                        best = Some(i);
                    }
                }
                let b = best.unwrap();
                used[b] = true;
                *slot = interior[b];
            }
            top
        }
    };

    CobbReport {
        image_id: String::new(),
        method: Method::Cacm,
        angles_deg: angles,
        inflections: InflectionSet::from_indices(infl).expect("scan yields interior indices"),
        windows,
        flags,
    }
}
