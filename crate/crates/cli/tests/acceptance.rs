//! Acceptance suite. Runs every criterion in order, prints one line per
//! criterion and exits non-zero if any failed.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use cobb_core::cacm::{cacm_pipeline, cam_baseline, CobbReport, WindowKind, DEFAULT_EPSILON};
use cobb_core::gradcheck::finite_diff_check;
use cobb_core::landmarks::{Point, SpineLandmarks};
use cobb_core::lof::{foreground_weight, heatmap_loss, landmark_loss, total_loss, HeatmapSet, LandmarkObjective, LossConfig};
use cobb_core::metrics::{angle_errors, evaluate, landmark_mse, sdr, smape, SDR_DELTAS_MM};
use cobb_core::selfcheck::{frem_check, loss_check, oracle_equivalence, reference_cobb, synth_round_trip};
use cobb_core::synth::{generate_spine, synth_batch, SpineSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const S_CURVE_DEG: [f64; 17] = [
    10.0, 8.0, 5.0, 2.0, 0.0, -3.0, -7.0, -10.0, -8.0, -4.0, 0.0, 3.0, 6.0, 9.0, 7.0, 4.0, 1.0,
];
const S_CURVE_ANGLES: [f64; 3] = [20.0, 19.0, 10.0];
const S_CURVE_INFLECTIONS_1B: [usize; 2] = [5, 11];
const FIXTURE_TOL_DEG: f64 = 1e-9;
const FIXTURE_BUDGET: Duration = Duration::from_millis(10);

const ORACLE_PROFILES: usize = 10_000;
const ORACLE_BUDGET: Duration = Duration::from_secs(5);

const SYNTH_SPINES: usize = 1_000;
const SYNTH_BUDGET: Duration = Duration::from_secs(5);

const INVARIANCE_TOL_DEG: f64 = 1e-6;
const TRANSLATIONS: [(f64, f64); 4] = [(100.0, 0.0), (0.0, -250.0), (-37.5, 81.25), (1000.0, 1000.0)];
const ROTATIONS_DEG: [f64; 6] = [-10.0, -5.0, -1.0, 1.0, 5.0, 10.0];
const SCALES: [f64; 4] = [0.5, 0.8, 1.5, 2.0];

const GRAD_TOL: f64 = 1e-5;
const GRAD_STEP: f64 = 1e-6;
const GRAD_BUDGET: Duration = Duration::from_secs(1);

const SLOPE_TOL: f64 = 1e-12;

const FREM_INSTANCES: usize = 100;
const FREM_BUDGET: Duration = Duration::from_secs(5);

const METRIC_TOL: f64 = 1e-12;
const NORM_PAIRS: usize = 1_000;

const CLI_IMAGES: usize = 100;
const CLI_BUDGET: Duration = Duration::from_secs(1);

struct Outcome {
    passed: bool,
    details: String,
}

impl Outcome {
    fn new(passed: bool, details: impl Into<String>) -> Self {
        Self {
            passed,
            details: details.into(),
        }
    }
}

fn spine(deg: [f64; 17]) -> SpineLandmarks {
    generate_spine(&SpineSpec::new(deg)).expect("fixture spine").0
}

/// Knots +20@0, 0@4, -5@6, 0@8, +5@10, 0@12, -20@16, linear in between.
fn three_curve_deg() -> [f64; 17] {
    let knots = [(0, 20.0), (4, 0.0), (6, -5.0), (8, 0.0), (10, 5.0), (12, 0.0), (16, -20.0)];
    let mut out = [0.0; 17];
    for w in knots.windows(2) {
        let ((a, ta), (b, tb)) = (w[0], w[1]);
        for (k, slot) in out.iter_mut().enumerate().take(b + 1).skip(a) {
            *slot = ta + (tb - ta) * (k - a) as f64 / (b - a) as f64;
        }
    }
    out
}

fn max_abs_diff(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn both(sl: &SpineLandmarks) -> [CobbReport; 2] {
    [
        cacm_pipeline(sl, DEFAULT_EPSILON).expect("cacm"),
        cam_baseline(sl).expect("cam"),
    ]
}

fn fixture_angles() -> Outcome {
    let sl = spine(S_CURVE_DEG);
    let start = Instant::now();
    let r = cacm_pipeline(&sl, DEFAULT_EPSILON).expect("cacm");
    let elapsed = start.elapsed();
    let err = max_abs_diff(&r.angles_deg, &S_CURVE_ANGLES);
    let infl: Vec<usize> = r.inflections.indices().iter().map(|k| k + 1).collect();
    let passed = err <= FIXTURE_TOL_DEG && infl == S_CURVE_INFLECTIONS_1B && elapsed < FIXTURE_BUDGET;
    Outcome::new(
        passed,
        format!("angles {:?}, max err {err:.1e}°, inflections {infl:?}, {elapsed:?}", r.angles_deg),
    )
}

fn oracle() -> Outcome {
    let start = Instant::now();
    let r = oracle_equivalence(0, ORACLE_PROFILES, reference_cobb);
    let elapsed = start.elapsed();
    Outcome::new(
        r.passed && r.cases == ORACLE_PROFILES && elapsed < ORACLE_BUDGET,
        format!("{} profiles, {} mismatches, {elapsed:?}", r.cases, r.failures.len()),
    )
}

fn synthesis() -> Outcome {
    let start = Instant::now();
    let r = synth_round_trip(0, SYNTH_SPINES, reference_cobb);
    let elapsed = start.elapsed();
    Outcome::new(
        r.passed && r.cases == SYNTH_SPINES && elapsed < SYNTH_BUDGET,
        format!("{} spines, {} failures, {elapsed:?}", r.cases, r.failures.len()),
    )
}

fn invariance() -> Outcome {
    let mut fixtures = vec![("s-curve", spine(S_CURVE_DEG)), ("three-curve", spine(three_curve_deg()))];
    for (i, (sl, _)) in synth_batch(3, 11, 0.0).expect("batch").into_iter().enumerate() {
        fixtures.push((["random-0", "random-1", "random-2"][i], sl));
    }
    // worst deviation per (transform family, method)
    let mut worst = [[0.0f64; 2]; 3];
    let mut rot_offenders = Vec::new();
    for (name, sl) in &fixtures {
        let base = both(sl);
        let c = sl.centroid();
        let mut record = |family: usize, moved: &SpineLandmarks, label: String| {
            for (m, (a, b)) in base.iter().zip(both(moved)).enumerate() {
                let d = max_abs_diff(&a.angles_deg, &b.angles_deg);
                worst[family][m] = worst[family][m].max(d);
                if d > INVARIANCE_TOL_DEG && family == 1 && m == 0 {
                    rot_offenders.push(format!("{name}@{label}"));
                }
            }
        };
        for (dx, dy) in TRANSLATIONS {
            record(0, &sl.translated(dx, dy), format!("{dx},{dy}"));
        }
        for deg in ROTATIONS_DEG {
            record(1, &sl.rotated(deg.to_radians(), c), format!("{deg}°"));
            record(1, &sl.rotated(deg.to_radians(), Point::new(0.0, 0.0)), format!("{deg}° about origin"));
        }
        for s in SCALES {
            record(2, &sl.scaled(s, c), format!("x{s}"));
        }
    }
    let ok = |f: usize, m: usize| worst[f][m] <= INVARIANCE_TOL_DEG;
    let passed = (0..3).all(|f| ok(f, 0) && ok(f, 1));
    let mark = |f: usize, m: usize| if ok(f, m) { "ok" } else { "FAIL" };
    let mut details = String::new();
    for (f, family) in ["translation", "rotation", "scale"].iter().enumerate() {
        details.push_str(&format!(
            "{family}: CACM {} ({:.1e}°) CAM {} ({:.1e}°); ",
            mark(f, 0),
            worst[f][0],
            mark(f, 1),
            worst[f][1]
        ));
    }
    if !rot_offenders.is_empty() {
        rot_offenders.truncate(6);
        details.push_str(&format!(
            "CACM inflections are read in the image frame, so rotation moves them (e.g. {})",
            rot_offenders.join(", ")
        ));
    }
    Outcome::new(passed, details)
}

fn failure_modes() -> Outcome {
    let mut notes = Vec::new();

    let double = spine(S_CURVE_DEG);
    let [cacm, cam] = both(&double);
    let spans_two = cam.windows.iter().any(|w| {
        cacm.inflections
            .indices()
            .iter()
            .any(|&k| w.window.first < k && k < w.window.last)
    });
    let interior: Vec<f64> = cacm.interior_windows().map(|w| w.angle_deg).collect();
    let distinct = interior.len() == 2 && interior[0] != interior[1];
    notes.push(format!(
        "double: CAM windows {:?}, CACM interior {interior:?}",
        cam.windows.iter().map(|w| (w.window.first, w.window.last)).collect::<Vec<_>>()
    ));

    let three = spine(three_curve_deg());
    let [cacm3, cam3] = both(&three);
    let nonzero = cacm3.angles_deg.iter().filter(|a| **a > 0.0).count();
    let has = |k: WindowKind| cam3.windows.iter().any(|w| w.window.kind == k);
    let omitted = !has(WindowKind::Proximal) || !has(WindowKind::Distal);
    notes.push(format!(
        "three: CACM {:?} ({nonzero} nonzero), CAM {:?} PT window {} TL window {}",
        cacm3.angles_deg,
        cam3.angles_deg,
        has(WindowKind::Proximal),
        has(WindowKind::Distal)
    ));

    Outcome::new(spans_two && distinct && nonzero == 3 && omitted, notes.join("; "))
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let r = loss_check(0, cobb_core::lof::DEFAULT_ALPHA, cobb_core::lof::DEFAULT_BETA);

    // coordinates sitting on the kink of the absolute value must be skipped
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let gt: Vec<f64> = (0..136).map(|_| rng.gen_range(0.0..512.0)).collect();
    let mut guess: Vec<f64> = gt.iter().map(|g| g + rng.gen_range(-5.0..5.0)).collect();
    for k in (0..guess.len()).step_by(9) {
        guess[k] = gt[k] + if k % 2 == 0 { 0.0 } else { 2.0 * GRAD_STEP };
    }
    let kinked = finite_diff_check(&LandmarkObjective { gt: &gt }, &guess, GRAD_STEP, GRAD_TOL);
    let elapsed = start.elapsed();
    let worst = r.max_rel_err.max(kinked.max_rel_err);
    let passed = r.heatmap.n_coords == 4 * 8 * 8
        && r.landmark.n_coords + r.landmark.n_excluded == 136
        && worst <= GRAD_TOL
        && kinked.n_excluded == 136usize.div_ceil(9)
        && elapsed < GRAD_BUDGET;
    Outcome::new(
        passed,
        format!(
            "heatmap {:.1e}, landmark {:.1e}, kinked instance {:.1e} with {} excluded, {elapsed:?}",
            r.heatmap.max_rel_err, r.landmark.max_rel_err, kinked.max_rel_err, kinked.n_excluded
        ),
    )
}

fn loss_defaults() -> Outcome {
    let cfg = LossConfig::default();
    let w1 = foreground_weight(1.0, cfg.beta);
    let w0 = foreground_weight(0.0, cfg.beta);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let gt = HeatmapSet::random(&mut rng, 4, 8, 8);
    let pred = HeatmapSet::random(&mut rng, 4, 8, 8);
    let y: Vec<f64> = (0..136).map(|_| rng.gen_range(0.0..512.0)).collect();
    let p: Vec<f64> = y.iter().map(|v| v + rng.gen_range(-3.0..3.0)).collect();
    let (lh, _) = heatmap_loss(&pred, &gt, &cfg).expect("heatmap");
    let (ll, _) = landmark_loss(&p, &y).expect("landmark");
    let at = |alpha: f64| total_loss(lh, ll, &LossConfig { alpha, ..cfg });
    let alphas = [0.0, 1.0, 5.0, 10.0];
    let mut worst = 0.0f64;
    for w in alphas.windows(2) {
        let slope = (at(w[1]) - at(w[0])) / (w[1] - w[0]);
        worst = worst.max((slope - lh).abs() / lh.abs());
    }
    let passed = cfg.beta == 15.0 && w1 == 16.0 && w0 == 1.0 && worst <= SLOPE_TOL;
    Outcome::new(
        passed,
        format!("W(1) = {w1}, W(0) = {w0}, slope rel err {worst:.1e} against L^H = {lh:.6}"),
    )
}

fn frem() -> Outcome {
    let start = Instant::now();
    let r = frem_check(0, FREM_INSTANCES);
    let elapsed = start.elapsed();
    let mut details = format!("{} instances, {} failures, {elapsed:?}", r.cases, r.failures.len());
    if let Some(f) = r.failures.first() {
        details.push_str(&format!(", first: {f}"));
    }
    Outcome::new(r.passed && r.cases == FREM_INSTANCES && elapsed < FREM_BUDGET, details)
}

fn metrics() -> Outcome {
    let batch = synth_batch(10, 3, 0.5).expect("batch");
    let pairs: Vec<(&SpineLandmarks, &SpineLandmarks)> = batch.iter().map(|(sl, _)| (sl, sl)).collect();
    let angles: Vec<([f64; 3], [f64; 3])> = batch
        .iter()
        .map(|(sl, _)| {
            let a = cacm_pipeline(sl, DEFAULT_EPSILON).expect("cacm").angles_deg;
            (a, a)
        })
        .collect();
    let s = evaluate(&pairs, &angles).expect("evaluate");
    let sdr_all = SDR_DELTAS_MM.iter().all(|d| sdr(&pairs, *d).expect("sdr") == 100.0);
    let identity = s.mse == 0.0
        && landmark_mse(&pairs).expect("mse") == 0.0
        && sdr_all
        && s.smape == 0.0
        && smape(&angles).expect("smape").percent == 0.0
        && [s.cmae, s.ed, s.md, s.cd].iter().all(|v| *v == 0.0);

    let e = angle_errors(&[([23.0, 14.0, 10.0], [20.0, 10.0, 10.0])]).expect("fixture");
    let fixture =
        (e.ed_deg - 5.0).abs() <= METRIC_TOL && (e.md_deg - 7.0).abs() <= METRIC_TOL && (e.cd_deg - 4.0).abs() <= METRIC_TOL;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut violations = 0;
    for _ in 0..NORM_PAIRS {
        let a: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..90.0));
        let g: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..90.0));
        let e = angle_errors(&[(a, g)]).expect("pair");
        if !(e.cd_deg <= e.ed_deg + METRIC_TOL && e.ed_deg <= e.md_deg + METRIC_TOL) {
            violations += 1;
        }
    }
    Outcome::new(
        identity && fixture && violations == 0,
        format!(
            "identity {identity}, fixture ED {} MD {} CD {}, norm-order violations {violations}/{NORM_PAIRS}",
            e.ed_deg, e.md_deg, e.cd_deg
        ),
    )
}

fn cobb(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_cobb")).args(args).output().expect("binary runs")
}

fn cli() -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = |name: &str| dir.path().join(name).to_str().expect("utf-8 path").to_owned();
    let (gt, pred, angles) = (path("gt.csv"), path("pred.json"), path("angles.jsonl"));
    let count = CLI_IMAGES.to_string();

    let start = Instant::now();
    let steps = [
        cobb(&["synth", "--output", &gt, "--count", &count, "--seed", "1"]),
        cobb(&["synth", "--output", &pred, "--count", &count, "--seed", "1", "--jitter", "0.5"]),
        cobb(&["angles", "--input", &pred, "--method", "both", "--output", &angles]),
        cobb(&["eval", "--input", &pred, "--gt", &gt]),
    ];
    let elapsed = start.elapsed();
    let codes: Vec<Option<i32>> = steps.iter().map(|o| o.status.code()).collect();
    let records = std::fs::read_to_string(&angles).map(|s| s.lines().count()).unwrap_or(0);
    let eval_ok = serde_json::from_slice::<serde_json::Value>(&steps[3].stdout)
        .map(|v| v["n_images"] == CLI_IMAGES)
        .unwrap_or(false);
    let pipeline = codes.iter().all(|c| *c == Some(0)) && records == 2 * CLI_IMAGES && eval_ok && elapsed < CLI_BUDGET;

    let sorted_run = |workers: &str| cobb(&["angles", "--input", &pred, "--method", "both", "--workers", workers, "--sorted"]).stdout;
    let one = sorted_run("1");
    let independent = !one.is_empty() && ["2", "4", "8"].iter().all(|w| sorted_run(w) == one);

    let selfcheck = cobb(&["selfcheck"]).status.code();
    let passed = pipeline && independent && selfcheck == Some(0) && Path::new(&gt).exists();
    Outcome::new(
        passed,
        format!(
            "exit codes {codes:?}, {records} angle records, {elapsed:?}; workers independent {independent}; selfcheck exit {selfcheck:?}"
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("S-curve fixture", fixture_angles),
        ("oracle equivalence", oracle),
        ("synthesis round trip", synthesis),
        ("rigid-motion invariance", invariance),
        ("failure-mode reproduction", failure_modes),
        ("loss gradient checks", gradients),
        ("loss defaults", loss_defaults),
        ("attention invariants", frem),
        ("metrics", metrics),
        ("CLI end to end", cli),
    ];
    let mut failed = 0;
    for (i, (title, run)) in criteria.iter().enumerate() {
        let o = run();
        let status = if o.passed { "PASS" } else { "FAIL" };
        println!("criterion {} {status} {title}: {}", i + 1, o.details);
        if !o.passed {
            failed += 1;
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
