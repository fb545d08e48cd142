//! Landmark-based scoliosis measurement.
//!
//! * [`landmarks`] and [`io`]: the 17-vertebra, 68-landmark model and its files.
//! * [`tilt`]: endplate and vertebral tilts.
//! * [`cacm`]: segment-aware Cobb angles and the max-pair baseline.
//! * [`frem`]: forward pass of the position/channel attention block.
//! * [`lof`]: weighted KL heatmap loss and landmark loss with gradients.
//! * [`gradcheck`]: central finite-difference gradient verification.
//! * [`metrics`]: landmark and angle evaluation.
//! * [`synth`]: synthetic spines and a brute-force angle oracle.
//! * [`selfcheck`]: the invariant suites behind the CLI self-checks.

pub mod cacm;
pub mod error;
pub mod frem;
pub mod io;
pub mod gradcheck;
pub mod landmarks;
pub mod lof;
pub mod metrics;
pub mod numeric;
pub mod selfcheck;
pub mod synth;
pub mod tilt;

pub use cacm::{cacm_pipeline, cam_baseline, CobbReport, Flag, InflectionSet, Method, SegmentWindow, WindowKind};
pub use frem::{frem_forward, FeatureTensor, FremOutput, FremParams};
pub use error::{ContainerError, LandmarkError, MetricsError, ShapeError, SynthError, TiltError};
pub use io::{parse_landmarks, serialize_landmarks, LandmarkFormat};
pub use lof::{heatmap_loss, landmark_loss, total_loss, HeatmapSet, LossConfig};
pub use metrics::{evaluate, EvalSummary};
pub use landmarks::{validate, Point, SpineLandmarks, ValidationWarning, Vertebra};
pub use synth::oracle::oracle_cobb;
pub use synth::{generate_spine, SpineSpec};
pub use tilt::TiltProfile;
