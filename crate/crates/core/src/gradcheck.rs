//! Central finite-difference verification of analytic gradients.

use serde::Serialize;

/// A scalar function with an analytic gradient.
pub trait Objective {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;

    /// Distance from `x[i]` to the nearest point where the function is not
    /// differentiable along coordinate `i`, if there is one.
    fn kink_distance(&self, _x: &[f64], _i: usize) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub mean_rel_err: f64,
    /// Coordinates compared.
    pub n_coords: usize,
    /// Coordinates skipped for lying within `10·h` of a kink.
    pub n_excluded: usize,
    pub worst_coord: Option<usize>,
    pub tolerance: f64,
    pub passed: bool,
}

/// Relative error with an absolute fallback when both sides are ~0.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-12 {
        (analytic - numeric).abs()
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// `(f(x + h·e_i) - f(x - h·e_i)) / 2h`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut probe = x.to_vec();
    probe[i] = x[i] + h;
    let up = f(&probe);
    probe[i] = x[i] - h;
    let down = f(&probe);
    (up - down) / (2.0 * h)
}

pub fn finite_diff_check<O: Objective + ?Sized>(objective: &O, point: &[f64], h: f64, tolerance: f64) -> GradCheckReport {
    assert!(h > 0.0, "step must be positive");
    let analytic = objective.gradient(point);
    assert_eq!(analytic.len(), point.len(), "gradient length");
    let mut max_rel_err = 0.0f64;
    let mut sum = 0.0;
    let mut n_coords = 0;
    let mut n_excluded = 0;
    let mut worst_coord = None;
    for i in 0..point.len() {
        if objective.kink_distance(point, i).is_some_and(|d| d <= 10.0 * h) {
            n_excluded += 1;
            continue;
        }
        let numeric = central_difference(|x| objective.value(x), point, i, h);
        let err = relative_error(analytic[i], numeric);
        if err > max_rel_err || worst_coord.is_none() {
            max_rel_err = max_rel_err.max(err);
            worst_coord = Some(i);
        }
        sum += err;
        n_coords += 1;
    }
    let mean_rel_err = if n_coords > 0 { sum / n_coords as f64 } else { 0.0 };
    GradCheckReport {
        max_rel_err,
        mean_rel_err,
        n_coords,
        n_excluded,
        worst_coord,
        tolerance,
        passed: max_rel_err <= tolerance,
    }
}
