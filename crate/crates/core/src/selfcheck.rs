//! Seeded invariant suites run by the `selfcheck`, `frem-check` and
//! `loss-check` commands.

use std::time::Instant;

use ndarray::Axis;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cacm::{
    cacm_from_tilts, end_angle, find_inflections, segment_windows, select_cobb, CobbReport, Flag, Method, Tilts,
    WindowAngle, DEFAULT_EPSILON,
};
use crate::frem::{frem_forward, fuse_attention, geometric_features, semantic_features, FeatureTensor, FremParams};
use crate::gradcheck::{finite_diff_check, GradCheckReport};
use crate::lof::{HeatmapObjective, HeatmapSet, LandmarkObjective, LossConfig};
use crate::landmarks::COORDINATE_COUNT;
use crate::synth::oracle::oracle_cobb;
use crate::synth::{generate_spine, random_profile_deg, SpineSpec, RANDOM_TILT_DEG};
use crate::tilt::TiltProfile;

pub const DEFAULT_SEED: u64 = 0;
pub const FREM_INSTANCES: usize = 100;
pub const ORACLE_PROFILES: usize = 10_000;
pub const SYNTH_SPINES: usize = 1_000;
pub const ROW_SUM_TOL: f64 = 1e-9;
pub const HEATMAP_GRAD_TOL: f64 = 1e-5;
pub const LANDMARK_GRAD_TOL: f64 = 1e-6;
pub const GRAD_STEP: f64 = 1e-6;
pub const ANGLE_TOL_DEG: f64 = 1e-9;
pub const SYNTH_TILT_TOL_RAD: f64 = 1e-9;
pub const SYNTH_ANGLE_TOL_DEG: f64 = 1e-6;

/// Segment-aware evaluator under test.
pub type CobbFn = fn(&Tilts, f64) -> CobbReport;

pub fn reference_cobb(tilts: &Tilts, epsilon: f64) -> CobbReport {
    cacm_from_tilts("", tilts, epsilon)
}

/// Deliberately broken evaluator: interior windows use `max - |min|`.
pub fn flipped_interior_sign(tilts: &Tilts, epsilon: f64) -> CobbReport {
    let inflections = find_inflections(tilts, epsilon);
    let mut windows = Vec::new();
    let mut interior = Vec::new();
    let mut ends = Vec::new();
    let mut clamped = false;
    if let Some(sw) = segment_windows(&inflections) {
        for w in &sw.interior {
            let vals = w.tilts(tilts);
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let d = (hi - lo.abs()).to_degrees();
            windows.push(WindowAngle { window: *w, angle_deg: d });
            interior.push(d);
        }
        for w in &sw.ends {
            let e = end_angle(w, tilts);
            clamped |= e.clamped;
            windows.push(WindowAngle { window: *w, angle_deg: e.deg });
            ends.push(e.deg);
        }
    }
    let mut sel = select_cobb(&interior, &ends, tilts);
    if clamped {
        sel.flags.insert(Flag::ClampedNegativeEndAngle);
    }
    CobbReport {
        image_id: String::new(),
        method: Method::Cacm,
        angles_deg: sel.angles_deg,
        inflections,
        windows,
        flags: sel.flags,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub cases: usize,
    /// Names of violated properties, each with its first counterexample.
    pub failures: Vec<String>,
    pub elapsed_ms: f64,
}

impl SuiteResult {
    fn finish(name: &'static str, cases: usize, failures: Vec<String>, start: Instant) -> Self {
        Self {
            name,
            passed: failures.is_empty(),
            cases,
            failures,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        }
    }
}

#[derive(Default)]
struct Failures(Vec<String>);

impl Failures {
    fn check(&mut self, ok: bool, property: &str, detail: impl FnOnce() -> String) {
        if !ok && !self.0.iter().any(|f| f.starts_with(property)) {
            self.0.push(format!("{property}: {}", detail()));
        }
    }
}

/// Instance `i` cycles channel counts {2, 4, 68} and sizes {4, 8}.
pub fn frem_instance_shape(i: usize) -> (usize, usize) {
    ([2, 4, 68][i % 3], [4, 8][(i / 3) % 2])
}

pub fn frem_check(seed: u64, instances: usize) -> SuiteResult {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = Failures::default();
    for i in 0..instances {
        let (c, side) = frem_instance_shape(i);
        let n = side * side;
        let fi = FeatureTensor::random(&mut rng, c, side, side);
        let fo = FeatureTensor::random(&mut rng, c, side, side);
        let p = FremParams::random(&mut rng, c, n);

        let out = frem_forward(&fi, &fo, &p).expect("shapes");
        let m = &out.intermediates;
        let (au1, au2, cr) = (&m.au1, &m.au2, &m.cr);
        for (label, map) in [("au1", au1), ("au2", au2), ("cr", cr), ("channel", &m.channel)] {
            let err = map.max_row_error();
            f.check(err <= ROW_SUM_TOL && map.min_entry() >= 0.0, "row-stochastic", || {
                format!("instance {i} map {label} row error {err:e}")
            });
        }

        let fg0 = geometric_features(m.fo_hat.view(), m.fused.view(), 0.0).expect("shapes");
        f.check(fg0 == m.fo_hat, "residual-identity", || format!("instance {i} geometric"));
        let fs0 = semantic_features(m.geometric.view(), m.channel.weights.view(), 0.0).expect("shapes");
        f.check(fs0 == m.geometric, "residual-identity", || format!("instance {i} semantic"));

        let one = |k: usize| {
            let mut g = [0.0; 3];
            g[k] = 1.0;
            g
        };
        for (k, map) in [au1, au2, cr].into_iter().enumerate() {
            f.check(fuse_attention(au1, au2, cr, one(k)).expect("shapes") == map.weights, "selector-gains", || {
                format!("instance {i} selector {k}")
            });
        }
        f.check(
            fuse_attention(au1, au2, cr, [0.0; 3]).expect("shapes").iter().all(|x| *x == 0.0),
            "selector-gains",
            || format!("instance {i} zero gains"),
        );
        let doubled = fuse_attention(au1, au2, cr, p.map_gains.map(|g| 2.0 * g)).expect("shapes");
        f.check(doubled == &m.fused * 2.0, "selector-gains", || format!("instance {i} scaling"));

        let mut perm: Vec<usize> = (0..c).collect();
        for k in (1..c).rev() {
            perm.swap(k, rng.gen_range(0..=k));
        }
        let permuted = frem_forward(&fi.permute_channels(&perm), &fo.permute_channels(&perm), &p.permute_channels(&perm))
            .expect("shapes");
        let heat_ok = perm
            .iter()
            .enumerate()
            .all(|(k, &src)| permuted.heatmaps.channel(k) == out.heatmaps.channel(src));
        f.check(
            permuted.landmarks == out.landmarks.select(Axis(0), &perm) && heat_ok,
            "permutation-equivariance",
            || format!("instance {i} (C={c}, H=W={side})"),
        );
        f.check(frem_forward(&fi, &fo, &p).expect("shapes") == out, "determinism", || format!("instance {i}"));
    }
    SuiteResult::finish("frem-check", instances, f.0, start)
}

#[derive(Debug, Clone, Serialize)]
pub struct LossCheckReport {
    pub max_rel_err: f64,
    pub mean_rel_err: f64,
    pub n_coords: usize,
    pub seed: u64,
    pub passed: bool,
    pub heatmap: GradCheckReport,
    pub landmark: GradCheckReport,
}

/// Gradient checks on a 4×8×8 heatmap instance and 136 landmark coordinates.
pub fn loss_check(seed: u64, alpha: f64, beta: f64) -> LossCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = LossConfig {
        alpha,
        beta,
        ..LossConfig::default()
    };
    let gt = HeatmapSet::random(&mut rng, 4, 8, 8);
    let pred = HeatmapSet::random(&mut rng, 4, 8, 8);
    let heatmap = finite_diff_check(
        &HeatmapObjective { gt: &gt, cfg },
        pred.values(),
        GRAD_STEP,
        HEATMAP_GRAD_TOL,
    );
    let target: Vec<f64> = (0..COORDINATE_COUNT).map(|_| rng.gen_range(0.0..512.0)).collect();
    let guess: Vec<f64> = target.iter().map(|t| t + rng.gen_range(-20.0..20.0)).collect();
    let landmark = finite_diff_check(&LandmarkObjective { gt: &target }, &guess, GRAD_STEP, LANDMARK_GRAD_TOL);
    let n_coords = heatmap.n_coords + landmark.n_coords;
    LossCheckReport {
        max_rel_err: heatmap.max_rel_err.max(landmark.max_rel_err),
        mean_rel_err: (heatmap.mean_rel_err * heatmap.n_coords as f64 + landmark.mean_rel_err * landmark.n_coords as f64)
            / n_coords as f64,
        n_coords,
        seed,
        passed: heatmap.passed && landmark.passed,
        heatmap,
        landmark,
    }
}

fn loss_suite(seed: u64) -> SuiteResult {
    let start = Instant::now();
    let r = loss_check(seed, crate::lof::DEFAULT_ALPHA, crate::lof::DEFAULT_BETA);
    let mut f = Failures::default();
    f.check(r.heatmap.passed, "heatmap-gradient", || format!("max rel err {:e}", r.heatmap.max_rel_err));
    f.check(r.landmark.passed, "landmark-gradient", || format!("max rel err {:e}", r.landmark.max_rel_err));
    SuiteResult::finish("loss-check", r.n_coords, f.0, start)
}

fn same_report(a: &CobbReport, b: &CobbReport, tol: f64) -> bool {
    a.inflections == b.inflections
        && a.flags == b.flags
        && a.angles_deg.iter().zip(&b.angles_deg).all(|(x, y)| (x - y).abs() <= tol)
}

/// Compares `sut` against the brute-force oracle on seeded random profiles.
pub fn oracle_equivalence(seed: u64, profiles: usize, sut: CobbFn) -> SuiteResult {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = Failures::default();
    for i in 0..profiles {
        let tilts = random_profile_deg(&mut rng, RANDOM_TILT_DEG).map(f64::to_radians);
        let got = sut(&tilts, DEFAULT_EPSILON);
        let want = oracle_cobb(&tilts, DEFAULT_EPSILON);
        f.check(same_report(&got, &want, ANGLE_TOL_DEG), "oracle-equivalence", || {
            format!("profile {i}: got {:?}, oracle {:?}", got.angles_deg, want.angles_deg)
        });
    }
    SuiteResult::finish("oracle-equivalence", profiles, f.0, start)
}

/// Jitter-free synthetic spines: recovered tilts and end-to-end angles.
pub fn synth_round_trip(seed: u64, spines: usize, sut: CobbFn) -> SuiteResult {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = Failures::default();
    for i in 0..spines {
        let spec = SpineSpec::new(random_profile_deg(&mut rng, RANDOM_TILT_DEG));
        let (sl, truth) = match generate_spine(&spec) {
            Ok(g) => g,
            Err(e) => {
                f.check(false, "synth-generation", || format!("spine {i}: {e}"));
                continue;
            }
        };
        let recovered = match TiltProfile::from_landmarks(&sl) {
            Ok(t) => t,
            Err(e) => {
                f.check(false, "synth-tilts", || format!("spine {i}: {e}"));
                continue;
            }
        };
        let spec_rad = spec.tilt_profile_deg.map(f64::to_radians);
        let worst = recovered
            .vertebral
            .iter()
            .zip(&spec_rad)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        f.check(worst <= SYNTH_TILT_TOL_RAD, "synth-tilts", || format!("spine {i}: {worst:e} rad"));
        let truth_gap = truth.vertebral.iter().zip(&spec_rad).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        f.check(truth_gap <= SYNTH_TILT_TOL_RAD, "synth-truth", || format!("spine {i}: {truth_gap:e} rad"));
        let got = sut(&recovered.vertebral, DEFAULT_EPSILON);
        let want = oracle_cobb(&spec_rad, DEFAULT_EPSILON);
        let diff = got
            .angles_deg
            .iter()
            .zip(&want.angles_deg)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        f.check(diff <= SYNTH_ANGLE_TOL_DEG, "synth-round-trip", || format!("spine {i}: {diff:e} deg"));
    }
    SuiteResult::finish("synth-round-trip", spines, f.0, start)
}

#[derive(Debug, Clone, Serialize)]
pub struct SelfCheckSummary {
    pub seed: u64,
    pub passed: bool,
    pub suites: Vec<SuiteResult>,
}

impl SelfCheckSummary {
    pub fn failing(&self) -> Vec<&'static str> {
        self.suites.iter().filter(|s| !s.passed).map(|s| s.name).collect()
    }
}

pub fn run_all(seed: u64, sut: CobbFn) -> SelfCheckSummary {
    let suites = vec![
        frem_check(seed, FREM_INSTANCES),
        loss_suite(seed),
        oracle_equivalence(seed, ORACLE_PROFILES, sut),
        synth_round_trip(seed, SYNTH_SPINES, sut),
    ];
    SelfCheckSummary {
        seed,
        passed: suites.iter().all(|s| s.passed),
        suites,
    }
}
