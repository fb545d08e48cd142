//! Command implementations behind the `cobb` binary.

pub mod svg;

use std::fs;
use std::io::{BufWriter, Write};
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use cobb_core::cacm::{cacm_from_tilts, cam_from_tilts, CobbReport, Method, DEFAULT_EPSILON};
use cobb_core::io::{landmarks_to_string, read_landmark_file, LandmarkFormat};
use cobb_core::landmarks::{validate, SpineLandmarks};
use cobb_core::lof::{DEFAULT_ALPHA, DEFAULT_BETA};
use cobb_core::metrics::{evaluate, pair_landmarks};
use cobb_core::selfcheck::{
    flipped_interior_sign, frem_check, loss_check, reference_cobb, run_all, CobbFn, DEFAULT_SEED, FREM_INSTANCES,
};
use cobb_core::synth::{oracle_cobb, synth_batch};
use cobb_core::tilt::TiltProfile;

pub const EXIT_OK: u8 = 0;
pub const EXIT_IO: u8 = 1;
pub const EXIT_PARTIAL: u8 = 2;
pub const EXIT_SELFCHECK: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "cobb", version, about = "Landmark-based Cobb angle measurement")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-image Cobb angles as JSON lines.
    Angles(AnglesArgs),
    /// Landmark and angle metrics of predictions against ground truth.
    Eval(EvalArgs),
    /// Synthetic spines with a sidecar of true tilts and oracle angles.
    Synth(SynthArgs),
    /// All invariant suites.
    Selfcheck(SelfcheckArgs),
    /// Attention block invariants on seeded random instances.
    FremCheck(FremCheckArgs),
    /// Finite-difference check of the loss gradients.
    LossCheck(LossCheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Cacm,
    Cam,
    Both,
}

impl MethodArg {
    fn methods(self) -> &'static [Method] {
        match self {
            MethodArg::Cacm => &[Method::Cacm],
            MethodArg::Cam => &[Method::Cam],
            MethodArg::Both => &[Method::Cacm, Method::Cam],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for LandmarkFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => LandmarkFormat::Csv,
            FormatArg::Json => LandmarkFormat::Json,
        }
    }
}

fn resolve_format(explicit: Option<FormatArg>, path: &Path) -> Result<LandmarkFormat> {
    match explicit {
        Some(f) => Ok(f.into()),
        None => LandmarkFormat::from_path(path)
            .with_context(|| format!("cannot infer format of {}; pass --format", path.display())),
    }
}

fn parse_epsilon(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err("epsilon must be a finite value >= 0".into())
    }
}

#[derive(Debug, Args)]
pub struct AnglesArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    #[arg(long, value_enum, default_value = "cacm")]
    pub method: MethodArg,
    /// Zero-tilt tolerance in radians.
    #[arg(long, default_value_t = DEFAULT_EPSILON, value_parser = parse_epsilon)]
    pub epsilon: f64,
    /// Directory for one SVG per image and method.
    #[arg(long)]
    pub plot: Option<PathBuf>,
    #[arg(long, default_value = "1")]
    pub workers: NonZeroUsize,
    /// Order output by image id, then method.
    #[arg(long)]
    pub sorted: bool,
    /// Write JSON lines here instead of standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted landmarks.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    #[arg(long, value_enum, default_value = "cacm")]
    pub method: MethodArg,
    #[arg(long, default_value_t = DEFAULT_EPSILON, value_parser = parse_epsilon)]
    pub epsilon: f64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Landmark file to write; the sidecar goes next to it as `<name>.truth.json`.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Uniform per-coordinate noise bound in pixels.
    #[arg(long, default_value_t = 0.0)]
    pub jitter: f64,
    #[arg(long, default_value_t = DEFAULT_EPSILON, value_parser = parse_epsilon)]
    pub epsilon: f64,
}

#[derive(Debug, Args)]
pub struct SelfcheckArgs {
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Run the oracle suites against a deliberately broken evaluator.
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

#[derive(Debug, Args)]
pub struct FremCheckArgs {
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = FREM_INSTANCES)]
    pub instances: usize,
}

#[derive(Debug, Args)]
pub struct LossCheckArgs {
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, default_value_t = DEFAULT_BETA)]
    pub beta: f64,
}

/// Runs a parsed command, writing results to `out` and diagnostics to `err`.
pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<u8> {
    match cli.command {
        Command::Angles(a) => cmd_angles(&a, out, err),
        Command::Eval(a) => cmd_eval(&a, out, err),
        Command::Synth(a) => cmd_synth(&a, out),
        Command::Selfcheck(a) => cmd_selfcheck(&a, out, err),
        Command::FremCheck(a) => {
            let r = frem_check(a.seed, a.instances);
            writeln!(out, "{}", serde_json::to_string(&r)?)?;
            if !r.passed {
                writeln!(err, "frem-check failed: {}", r.failures.join("; "))?;
            }
            Ok(if r.passed { EXIT_OK } else { EXIT_SELFCHECK })
        }
        Command::LossCheck(a) => {
            let r = loss_check(a.seed, a.alpha, a.beta);
            writeln!(out, "{}", serde_json::to_string(&r)?)?;
            Ok(if r.passed { EXIT_OK } else { EXIT_SELFCHECK })
        }
    }
}

fn report_for(method: Method, sl: &SpineLandmarks, tilts: &TiltProfile, epsilon: f64) -> CobbReport {
    match method {
        Method::Cacm => cacm_from_tilts(sl.image_id.clone(), &tilts.vertebral, epsilon),
        Method::Cam => cam_from_tilts(sl.image_id.clone(), &tilts.vertebral),
    }
}

struct ImageOutcome {
    index: usize,
    image_id: String,
    lines: Vec<String>,
    diagnostics: Vec<String>,
    failed: bool,
}

fn process_image(index: usize, sl: &SpineLandmarks, args: &AnglesArgs) -> ImageOutcome {
    let mut o = ImageOutcome {
        index,
        image_id: sl.image_id.clone(),
        lines: Vec::new(),
        diagnostics: validate(sl).iter().map(|w| format!("{}: warning: {w}", sl.image_id)).collect(),
        failed: false,
    };
    let tilts = match TiltProfile::from_landmarks(sl) {
        Ok(t) => t,
        Err(e) => {
            o.diagnostics.push(format!("{}: error: {e}", sl.image_id));
            o.failed = true;
            return o;
        }
    };
    for &m in args.method.methods() {
        let report = report_for(m, sl, &tilts, args.epsilon);
        if let Some(dir) = &args.plot {
            let path = dir.join(svg::plot_file_name(&sl.image_id, m));
            if let Err(e) = fs::write(&path, svg::render_svg(&report, sl, &tilts.vertebral)) {
                o.diagnostics.push(format!("{}: error: writing {}: {e}", sl.image_id, path.display()));
                o.failed = true;
            }
        }
        o.lines.push(report.to_json_line());
    }
    o
}

pub fn cmd_angles(args: &AnglesArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<u8> {
    let format = resolve_format(args.format, &args.input)?;
    let images = read_landmark_file(&args.input, format).with_context(|| format!("reading {}", args.input.display()))?;
    if let Some(dir) = &args.plot {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut file_sink;
    let sink: &mut dyn Write = match &args.output {
        Some(p) => {
            file_sink = BufWriter::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?);
            &mut file_sink
        }
        None => out,
    };

    let next = AtomicUsize::new(0);
    let workers = args.workers.get().min(images.len().max(1));
    let mut failed = 0usize;
    let mut held = Vec::new();
    std::thread::scope(|scope| -> Result<()> {
        let (tx, rx) = mpsc::channel::<ImageOutcome>();
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, images) = (&next, &images);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(sl) = images.get(i) else { break };
                if tx.send(process_image(i, sl, args)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for o in rx {
            for d in &o.diagnostics {
                writeln!(err, "{d}")?;
            }
            failed += usize::from(o.failed);
            if args.sorted {
                held.push(o);
            } else {
                for l in &o.lines {
                    writeln!(sink, "{l}")?;
                }
            }
        }
        Ok(())
    })?;
    if args.sorted {
        held.sort_by(|a, b| a.image_id.cmp(&b.image_id).then(a.index.cmp(&b.index)));
        for o in &held {
            for l in &o.lines {
                writeln!(sink, "{l}")?;
            }
        }
    }
    sink.flush()?;
    if failed > 0 {
        writeln!(err, "{failed} of {} images failed", images.len())?;
        return Ok(EXIT_PARTIAL);
    }
    Ok(EXIT_OK)
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<u8> {
    let method = match args.method {
        MethodArg::Cacm => Method::Cacm,
        MethodArg::Cam => Method::Cam,
        MethodArg::Both => bail!("eval needs a single method: cacm or cam"),
    };
    let pf = resolve_format(args.format, &args.input)?;
    let gf = resolve_format(args.format, &args.gt)?;
    let pred = read_landmark_file(&args.input, pf).with_context(|| format!("reading {}", args.input.display()))?;
    let gt = read_landmark_file(&args.gt, gf).with_context(|| format!("reading {}", args.gt.display()))?;
    let pairs = pair_landmarks(&pred, &gt)?;

    let mut kept = Vec::with_capacity(pairs.len());
    let mut angles = Vec::with_capacity(pairs.len());
    let mut failed = 0usize;
    for (p, g) in pairs {
        let tp = TiltProfile::from_landmarks(p);
        let tg = TiltProfile::from_landmarks(g);
        match (tp, tg) {
            (Ok(tp), Ok(tg)) => {
                angles.push((
                    report_for(method, p, &tp, args.epsilon).angles_deg,
                    report_for(method, g, &tg, args.epsilon).angles_deg,
                ));
                kept.push((p, g));
            }
            (Err(e), _) | (_, Err(e)) => {
                writeln!(err, "{}: error: {e}", p.image_id)?;
                failed += 1;
            }
        }
    }
    if kept.is_empty() {
        bail!("no image could be evaluated");
    }
    let summary = evaluate(&kept, &angles)?;
    if summary.skipped > 0 {
        writeln!(err, "warning: {} images skipped in SMAPE (zero denominator)", summary.skipped)?;
    }
    writeln!(out, "{}", serde_json::to_string(&summary)?)?;
    Ok(if failed > 0 { EXIT_PARTIAL } else { EXIT_OK })
}

#[derive(Debug, Serialize)]
struct TruthRecord {
    image_id: String,
    tilts_deg: Vec<f64>,
    oracle_angles_deg: [f64; 3],
    inflections: Vec<usize>,
}

pub fn sidecar_path(output: &Path) -> PathBuf {
    let mut name = output.file_stem().unwrap_or_default().to_os_string();
    name.push(".truth.json");
    output.with_file_name(name)
}

pub fn cmd_synth(args: &SynthArgs, out: &mut dyn Write) -> Result<u8> {
    if !(args.jitter >= 0.0 && args.jitter.is_finite()) {
        bail!("--jitter must be a finite value >= 0");
    }
    let format = resolve_format(args.format, &args.output)?;
    let batch = synth_batch(args.count, args.seed, args.jitter)?;
    let images: Vec<SpineLandmarks> = batch.iter().map(|(sl, _)| sl.clone()).collect();
    fs::write(&args.output, landmarks_to_string(&images, format))
        .with_context(|| format!("writing {}", args.output.display()))?;
    let truth: Vec<TruthRecord> = batch
        .iter()
        .map(|(sl, t)| {
            let r = oracle_cobb(&t.vertebral, args.epsilon).to_record();
            TruthRecord {
                image_id: sl.image_id.clone(),
                tilts_deg: t.vertebral_deg().to_vec(),
                oracle_angles_deg: r.angles_deg,
                inflections: r.inflections,
            }
        })
        .collect();
    let side = sidecar_path(&args.output);
    fs::write(&side, serde_json::to_string_pretty(&truth)? + "\n").with_context(|| format!("writing {}", side.display()))?;
    writeln!(out, "wrote {} images to {} and {}", images.len(), args.output.display(), side.display())?;
    Ok(EXIT_OK)
}

pub fn cmd_selfcheck(args: &SelfcheckArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<u8> {
    let sut: CobbFn = if args.inject_fault { flipped_interior_sign } else { reference_cobb };
    let summary = run_all(args.seed, sut);
    writeln!(out, "{}", serde_json::to_string(&summary)?)?;
    if summary.passed {
        return Ok(EXIT_OK);
    }
    writeln!(err, "selfcheck failed: {}", summary.failing().join(", "))?;
    Ok(EXIT_SELFCHECK)
}
