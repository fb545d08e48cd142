//! Forward pass of the feature robustness block.
//!
//! Two `C × H × W` feature maps are projected by channel mixing, turned into
//! position attention maps (two auto-correlations and one cross-correlation),
//! fused, and applied to the projected output features with a residual scale
//! `lambda`. Channel attention over the result follows with residual scale
//! `gamma`. A shared linear head maps each channel to an `(x, y)` landmark and
//! a per-channel spatial softmax produces heatmaps.
//!
//! Reductions over the channel axis use a correctly rounded sum, so permuting
//! channels permutes the outputs bit for bit. Reductions over positions keep
//! a fixed order, which channel permutations never change.

use std::io::{Read, Write};

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ContainerError, ShapeError};
use crate::lof::HeatmapSet;
use crate::numeric::{exact_dot, softmax_in_place};

pub const MAGIC: &[u8; 4] = b"FREM";

/// `C × (H·W)` feature values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTensor {
    height: usize,
    width: usize,
    values: Array2<f64>,
}

impl FeatureTensor {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self, ShapeError> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(ShapeError::Invalid {
                what: "feature tensor",
                message: "dimensions must be positive".into(),
            });
        }
        let expected = channels * height * width;
        if values.len() != expected {
            return Err(ShapeError::mismatch("feature values", expected, values.len()));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(ShapeError::NonFinite { what: "feature values", index });
        }
        let values = Array2::from_shape_vec((channels, height * width), values).expect("length checked");
        Ok(Self { height, width, values })
    }

    pub fn random<R: Rng>(rng: &mut R, channels: usize, height: usize, width: usize) -> Self {
        let values = (0..channels * height * width).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Self::new(channels, height, width, values).expect("valid dimensions")
    }

    pub fn channels(&self) -> usize {
        self.values.nrows()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn positions(&self) -> usize {
        self.height * self.width
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    /// Output channel `c` is input channel `perm[c]`.
    pub fn permute_channels(&self, perm: &[usize]) -> Self {
        Self {
            height: self.height,
            width: self.width,
            values: self.values.select(Axis(0), perm),
        }
    }

    /// Little-endian `FREM`, u32 C, H, W, then f64 values row-major.
    pub fn write_binary<W: Write>(&self, mut sink: W) -> std::io::Result<()> {
        sink.write_all(MAGIC)?;
        for d in [self.channels(), self.height, self.width] {
            sink.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in self.values.iter() {
            sink.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut source: R) -> Result<Self, ContainerError> {
        let mut header = [0u8; 16];
        read_exact_counted(&mut source, &mut header)?;
        let magic: [u8; 4] = header[..4].try_into().unwrap();
        if &magic != MAGIC {
            return Err(ContainerError::Magic(magic));
        }
        let dim = |i: usize| u32::from_le_bytes(header[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (c, h, w) = (dim(0), dim(1), dim(2));
        let mut body = vec![0u8; c * h * w * 8];
        read_exact_counted(&mut source, &mut body)?;
        let values = body
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok(Self::new(c, h, w, values)?)
    }
}

fn read_exact_counted<R: Read>(source: &mut R, buf: &mut [u8]) -> Result<(), ContainerError> {
    let mut filled = 0;
    while filled < buf.len() {
        match source.read(&mut buf[filled..])? {
            0 => {
                return Err(ContainerError::Truncated {
                    expected: buf.len(),
                    found: filled,
                })
            }
            n => filled += n,
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttentionKind {
    /// `N × N`, over spatial positions.
    Position,
    /// `C × C`, over channels.
    Channel,
}

/// Row-stochastic attention matrix: row `j` is the distribution of influence
/// of every source on target `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub kind: AttentionKind,
    pub weights: Array2<f64>,
}

impl AttentionMap {
    pub fn size(&self) -> usize {
        self.weights.nrows()
    }

    /// Largest |row sum - 1|.
    pub fn max_row_error(&self) -> f64 {
        self.weights
            .rows()
            .into_iter()
            .map(|r| (r.sum() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn min_entry(&self) -> f64 {
        self.weights.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn row_softmax(mut logits: Array2<f64>) -> Array2<f64> {
    for mut row in logits.rows_mut() {
        softmax_in_place(row.as_slice_mut().expect("standard layout"));
    }
    logits
}

/// Position attention between two `C × N` features: `s[j, i]` is the softmax
/// over `i` of `fx[:, i] · fy[:, j]`.
pub fn attention_map(fx: ArrayView2<'_, f64>, fy: ArrayView2<'_, f64>) -> Result<AttentionMap, ShapeError> {
    if fx.dim() != fy.dim() {
        return Err(ShapeError::mismatch("attention operands", format!("{:?}", fx.dim()), format!("{:?}", fy.dim())));
    }
    let n = fx.ncols();
    let xt = fx.t().as_standard_layout().into_owned();
    let symmetric = fx == fy;
    let yt = if symmetric { xt.clone() } else { fy.t().as_standard_layout().into_owned() };
    let mut logits = Array2::zeros((n, n));
    for j in 0..n {
        let start = if symmetric { j } else { 0 };
        for i in start..n {
            let v = exact_dot(xt.row(i), yt.row(j));
            logits[(j, i)] = v;
            if symmetric {
                logits[(i, j)] = v;
            }
        }
    }
    Ok(AttentionMap {
        kind: AttentionKind::Position,
        weights: row_softmax(logits),
    })
}

/// Gain-weighted elementwise sum of the two auto maps and the cross map.
pub fn fuse_attention(
    au1: &AttentionMap,
    au2: &AttentionMap,
    cr: &AttentionMap,
    gains: [f64; 3],
) -> Result<Array2<f64>, ShapeError> {
    let shape = au1.weights.dim();
    for m in [au2, cr] {
        if m.weights.dim() != shape {
            return Err(ShapeError::mismatch("attention map", format!("{shape:?}"), format!("{:?}", m.weights.dim())));
        }
    }
    Ok(Array2::from_shape_fn(shape, |ix| {
        gains[0] * au1.weights[ix] + gains[1] * au2.weights[ix] + gains[2] * cr.weights[ix]
    }))
}

/// `F^G[:, j] = lambda · Σ_i s[j, i] · fo[:, i] + fo[:, j]`.
pub fn geometric_features(
    fo_hat: ArrayView2<'_, f64>,
    s_total: ArrayView2<'_, f64>,
    lambda: f64,
) -> Result<Array2<f64>, ShapeError> {
    let n = fo_hat.ncols();
    if s_total.dim() != (n, n) {
        return Err(ShapeError::mismatch("fused attention", format!("({n}, {n})"), format!("{:?}", s_total.dim())));
    }
    Ok(Array2::from_shape_fn(fo_hat.dim(), |(c, j)| {
        lambda * s_total.row(j).dot(&fo_hat.row(c)) + fo_hat[(c, j)]
    }))
}

/// Channel attention: both projections of `fg`, then `v[j, i]` is the softmax
/// over `i` of `g1[i, :] · g2[j, :]`.
pub fn channel_attention(
    fg: ArrayView2<'_, f64>,
    g1_proj: ArrayView2<'_, f64>,
    g2_proj: ArrayView2<'_, f64>,
) -> Result<AttentionMap, ShapeError> {
    let g1 = mix_channels(g1_proj, fg)?;
    let g2 = mix_channels(g2_proj, fg)?;
    let c = fg.nrows();
    let logits = Array2::from_shape_fn((c, c), |(j, i)| g1.row(i).dot(&g2.row(j)));
    Ok(AttentionMap {
        kind: AttentionKind::Channel,
        weights: row_softmax(logits),
    })
}

/// `F^S[j, :] = gamma · Σ_i v[j, i] · fg[i, :] + fg[j, :]`.
pub fn semantic_features(
    fg: ArrayView2<'_, f64>,
    v: ArrayView2<'_, f64>,
    gamma: f64,
) -> Result<Array2<f64>, ShapeError> {
    let c = fg.nrows();
    if v.dim() != (c, c) {
        return Err(ShapeError::mismatch("channel attention", format!("({c}, {c})"), format!("{:?}", v.dim())));
    }
    let fgt = fg.t().as_standard_layout().into_owned();
    Ok(Array2::from_shape_fn(fg.dim(), |(j, n)| {
        gamma * exact_dot(v.row(j), fgt.row(n)) + fg[(j, n)]
    }))
}

/// `W · F` for a `C × C` mixing matrix.
pub fn mix_channels(w: ArrayView2<'_, f64>, f: ArrayView2<'_, f64>) -> Result<Array2<f64>, ShapeError> {
    let c = f.nrows();
    if w.dim() != (c, c) {
        return Err(ShapeError::mismatch("channel projection", format!("({c}, {c})"), format!("{:?}", w.dim())));
    }
    let ft = f.t().as_standard_layout().into_owned();
    Ok(Array2::from_shape_fn(f.dim(), |(a, n)| exact_dot(w.row(a), ft.row(n))))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FremParams {
    /// `C × C` channel mixing producing the projected input features.
    pub input_proj: Array2<f64>,
    /// `C × C` channel mixing producing the projected output features.
    pub output_proj: Array2<f64>,
    /// Gains on the two auto-correlation maps and the cross-correlation map.
    pub map_gains: [f64; 3],
    pub lambda: f64,
    pub g1_proj: Array2<f64>,
    pub g2_proj: Array2<f64>,
    pub gamma: f64,
    /// `N × 2` landmark head shared by all channels.
    pub head: Array2<f64>,
    pub head_offset: [f64; 2],
}

impl FremParams {
    /// Identity-plus-noise projections, unit gains, zero residual scales.
    pub fn init(channels: usize, positions: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut near_identity = || {
            Array2::from_shape_fn((channels, channels), |(a, b)| {
                f64::from(u8::from(a == b)) + 0.01 * rng.gen_range(-1.0..1.0)
            })
        };
        let (input_proj, output_proj, g1_proj, g2_proj) =
            (near_identity(), near_identity(), near_identity(), near_identity());
        let head = Array2::from_shape_fn((positions, 2), |_| 0.01 * rng.gen_range(-1.0..1.0));
        Self {
            input_proj,
            output_proj,
            map_gains: [1.0; 3],
            lambda: 0.0,
            g1_proj,
            g2_proj,
            gamma: 0.0,
            head,
            head_offset: [0.0; 2],
        }
    }

    /// Fully random parameters, used to exercise non-trivial attention.
    pub fn random<R: Rng>(rng: &mut R, channels: usize, positions: usize) -> Self {
        let mut square = |scale: f64| {
            Array2::from_shape_fn((channels, channels), |_| scale * rng.gen_range(-1.0..1.0))
        };
        let (input_proj, output_proj, g1_proj, g2_proj) = (square(1.0), square(1.0), square(0.5), square(0.5));
        Self {
            input_proj,
            output_proj,
            map_gains: [rng.gen_range(0.1..1.0), rng.gen_range(0.1..1.0), rng.gen_range(0.1..1.0)],
            lambda: rng.gen_range(-1.0..1.0),
            g1_proj,
            g2_proj,
            gamma: rng.gen_range(-1.0..1.0),
            head: Array2::from_shape_fn((positions, 2), |_| rng.gen_range(-1.0..1.0)),
            head_offset: [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)],
        }
    }

    /// Identity projections, zero scales and head: outputs equal the inputs'
    /// residual path.
    pub fn identity(channels: usize, positions: usize) -> Self {
        let eye = Array2::eye(channels);
        Self {
            input_proj: eye.clone(),
            output_proj: eye.clone(),
            map_gains: [1.0; 3],
            lambda: 0.0,
            g1_proj: eye.clone(),
            g2_proj: eye,
            gamma: 0.0,
            head: Array2::zeros((positions, 2)),
            head_offset: [0.0; 2],
        }
    }

    pub fn channels(&self) -> usize {
        self.input_proj.nrows()
    }

    pub fn positions(&self) -> usize {
        self.head.nrows()
    }

    pub fn check(&self, channels: usize, positions: usize) -> Result<(), ShapeError> {
        let square = (channels, channels);
        for (what, m) in [
            ("input projection", &self.input_proj),
            ("output projection", &self.output_proj),
            ("g1 projection", &self.g1_proj),
            ("g2 projection", &self.g2_proj),
        ] {
            if m.dim() != square {
                return Err(ShapeError::mismatch(what, format!("{square:?}"), format!("{:?}", m.dim())));
            }
        }
        if self.head.dim() != (positions, 2) {
            return Err(ShapeError::mismatch("landmark head", format!("({positions}, 2)"), format!("{:?}", self.head.dim())));
        }
        Ok(())
    }

    /// Consistent relabeling: new channel `c` is old channel `perm[c]`.
    pub fn permute_channels(&self, perm: &[usize]) -> Self {
        let both = |m: &Array2<f64>| m.select(Axis(0), perm).select(Axis(1), perm);
        Self {
            input_proj: both(&self.input_proj),
            output_proj: both(&self.output_proj),
            g1_proj: both(&self.g1_proj),
            g2_proj: both(&self.g2_proj),
            ..self.clone()
        }
    }

    /// Sequence of containers: the four projections (`1 × C × C`), the head
    /// (`1 × N × 2`) and the seven scalars (`1 × 1 × 7`: gains, lambda, gamma,
    /// offsets).
    pub fn write_binary<W: Write>(&self, mut sink: W) -> std::io::Result<()> {
        let c = self.channels();
        for m in [&self.input_proj, &self.output_proj, &self.g1_proj, &self.g2_proj] {
            FeatureTensor::new(1, c, c, m.iter().copied().collect())
                .map_err(std::io::Error::other)?
                .write_binary(&mut sink)?;
        }
        FeatureTensor::new(1, self.positions(), 2, self.head.iter().copied().collect())
            .map_err(std::io::Error::other)?
            .write_binary(&mut sink)?;
        let [g0, g1, g2] = self.map_gains;
        let [o0, o1] = self.head_offset;
        FeatureTensor::new(1, 1, 7, vec![g0, g1, g2, self.lambda, self.gamma, o0, o1])
            .map_err(std::io::Error::other)?
            .write_binary(&mut sink)
    }

    pub fn read_binary<R: Read>(mut source: R) -> Result<Self, ContainerError> {
        let mut next = |what: &'static str| -> Result<Array2<f64>, ContainerError> {
            let t = FeatureTensor::read_binary(&mut source)?;
            if t.channels() != 1 {
                return Err(ShapeError::mismatch(what, 1, t.channels()).into());
            }
            Ok(t.values.into_shape_with_order((t.height, t.width)).expect("1 channel"))
        };
        let input_proj = next("input projection")?;
        let output_proj = next("output projection")?;
        let g1_proj = next("g1 projection")?;
        let g2_proj = next("g2 projection")?;
        let head = next("landmark head")?;
        let s = next("scalars")?;
        if s.len() != 7 {
            return Err(ShapeError::mismatch("scalars", 7, s.len()).into());
        }
        let s: Vec<f64> = s.into_iter().collect();
        let params = Self {
            input_proj,
            output_proj,
            map_gains: [s[0], s[1], s[2]],
            lambda: s[3],
            g1_proj,
            g2_proj,
            gamma: s[4],
            head,
            head_offset: [s[5], s[6]],
        };
        params.check(params.channels(), params.positions())?;
        Ok(params)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FremOutput {
    /// `C × 2` landmark coordinates, one row per channel.
    pub landmarks: Array2<f64>,
    /// Per-channel spatial softmax of the semantic features.
    pub heatmaps: HeatmapSet,
    /// Semantic features before the heads.
    pub semantic: Array2<f64>,
    pub intermediates: FremIntermediates,
}

/// Everything computed on the way to the semantic features.
#[derive(Debug, Clone, PartialEq)]
pub struct FremIntermediates {
    pub fi_hat: Array2<f64>,
    pub fo_hat: Array2<f64>,
    pub au1: AttentionMap,
    pub au2: AttentionMap,
    pub cr: AttentionMap,
    pub fused: Array2<f64>,
    pub geometric: Array2<f64>,
    pub channel: AttentionMap,
}

pub fn frem_forward(fi: &FeatureTensor, fo: &FeatureTensor, params: &FremParams) -> Result<FremOutput, ShapeError> {
    if (fi.channels(), fi.height, fi.width) != (fo.channels(), fo.height, fo.width) {
        return Err(ShapeError::mismatch(
            "output features",
            format!("{}x{}x{}", fi.channels(), fi.height, fi.width),
            format!("{}x{}x{}", fo.channels(), fo.height, fo.width),
        ));
    }
    params.check(fi.channels(), fi.positions())?;

    let fi_hat = mix_channels(params.input_proj.view(), fi.view())?;
    let fo_hat = mix_channels(params.output_proj.view(), fo.view())?;
    let au1 = attention_map(fi_hat.view(), fi_hat.view())?;
    let au2 = attention_map(fo_hat.view(), fo_hat.view())?;
    let cr = attention_map(fi_hat.view(), fo_hat.view())?;
    let total = fuse_attention(&au1, &au2, &cr, params.map_gains)?;
    let geometric = geometric_features(fo_hat.view(), total.view(), params.lambda)?;
    let v = channel_attention(geometric.view(), params.g1_proj.view(), params.g2_proj.view())?;
    let semantic = semantic_features(geometric.view(), v.weights.view(), params.gamma)?;

    let landmarks = landmark_head(semantic.view(), params);
    let heatmaps = spatial_softmax(&semantic, fi.height, fi.width)?;
    Ok(FremOutput {
        landmarks,
        heatmaps,
        semantic,
        intermediates: FremIntermediates {
            fi_hat,
            fo_hat,
            au1,
            au2,
            cr,
            fused: total,
            geometric,
            channel: v,
        },
    })
}

/// Each channel's `N`-vector through the shared `N × 2` map plus offsets.
pub fn landmark_head(semantic: ArrayView2<'_, f64>, params: &FremParams) -> Array2<f64> {
    Array2::from_shape_fn((semantic.nrows(), 2), |(c, k)| {
        semantic.row(c).dot(&params.head.column(k)) + params.head_offset[k]
    })
}

/// Reshapes `C × N` to `C × H × W` and normalizes each channel with a softmax.
pub fn spatial_softmax(features: &Array2<f64>, height: usize, width: usize) -> Result<HeatmapSet, ShapeError> {
    let normalized = row_softmax(features.clone());
    HeatmapSet::new(normalized.nrows(), height, width, normalized.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn two_position_softmax() {
        let f = array![[1.0, 0.0]];
        let s = attention_map(f.view(), f.view()).unwrap();
        let e = std::f64::consts::E;
        assert!((s.weights[(0, 0)] - e / (e + 1.0)).abs() < 1e-15);
        assert!((s.weights[(0, 1)] - 1.0 / (e + 1.0)).abs() < 1e-15);
        assert!((s.weights[(0, 0)] - 0.73106).abs() < 1e-5);
        // row 1: logits f[:,i]·f[:,1] = 0 for both i
        assert_eq!(s.weights.row(1).to_vec(), vec![0.5, 0.5]);
    }

    #[test]
    fn zero_features_give_uniform_rows() {
        let z = Array2::<f64>::zeros((3, 5));
        let s = attention_map(z.view(), z.view()).unwrap();
        assert!(s.weights.iter().all(|w| (w - 0.2).abs() < 1e-15));
        let v = channel_attention(z.view(), Array2::eye(3).view(), Array2::eye(3).view()).unwrap();
        assert!(v.weights.iter().all(|w| (w - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn rows_are_distributions() {
        let mut r = rng(4);
        let a = FeatureTensor::random(&mut r, 4, 3, 3);
        let b = FeatureTensor::random(&mut r, 4, 3, 3);
        let s = attention_map(a.view(), b.view()).unwrap();
        assert!(s.max_row_error() <= 1e-12);
        assert!(s.min_entry() >= 0.0);
    }

    #[test]
    fn mismatched_operands_fail() {
        let a = Array2::<f64>::zeros((2, 4));
        let b = Array2::<f64>::zeros((3, 4));
        assert!(attention_map(a.view(), b.view()).is_err());
        let s = Array2::<f64>::zeros((3, 3));
        assert!(geometric_features(a.view(), s.view(), 1.0).is_err());
        assert!(semantic_features(a.view(), s.view(), 1.0).is_err());
    }

    #[test]
    fn fusion_is_linear() {
        let n = 4;
        let uniform = AttentionMap {
            kind: AttentionKind::Position,
            weights: Array2::from_elem((n, n), 0.25),
        };
        let mut r = rng(5);
        let f = FeatureTensor::random(&mut r, 2, 2, 2);
        let au1 = attention_map(f.view(), f.view()).unwrap();
        assert_eq!(fuse_attention(&au1, &uniform, &uniform, [1.0, 0.0, 0.0]).unwrap(), au1.weights);
        let all = fuse_attention(&uniform, &uniform, &uniform, [1.0; 3]).unwrap();
        assert!(all.iter().all(|v| (v - 0.75).abs() < 1e-15));
        assert!(fuse_attention(&au1, &uniform, &uniform, [0.0; 3]).unwrap().iter().all(|v| *v == 0.0));
    }

    /// Plain triple loop, independent of the exact-sum path.
    fn naive_geometric(fo: &Array2<f64>, s: &Array2<f64>, lambda: f64) -> Array2<f64> {
        let (c, n) = fo.dim();
        let mut out = fo.clone();
        for ch in 0..c {
            for j in 0..n {
                let mut acc = 0.0;
                for i in 0..n {
                    acc += s[(j, i)] * fo[(ch, i)];
                }
                out[(ch, j)] += lambda * acc;
            }
        }
        out
    }

    fn naive_semantic(fg: &Array2<f64>, v: &Array2<f64>, gamma: f64) -> Array2<f64> {
        let (c, n) = fg.dim();
        let mut out = fg.clone();
        for j in 0..c {
            for k in 0..n {
                let mut acc = 0.0;
                for i in 0..c {
                    acc += v[(j, i)] * fg[(i, k)];
                }
                out[(j, k)] += gamma * acc;
            }
        }
        out
    }

    #[test]
    fn residual_scales() {
        let mut r = rng(6);
        let fo = FeatureTensor::random(&mut r, 3, 2, 2).values;
        let s = Array2::from_shape_fn((4, 4), |_| r.gen_range(0.0..1.0));
        assert_eq!(geometric_features(fo.view(), s.view(), 0.0).unwrap(), fo);
        let eye = Array2::eye(4);
        let doubled = geometric_features(fo.view(), eye.view(), 1.0).unwrap();
        assert_eq!(doubled, &fo * 2.0);

        let v = Array2::from_shape_fn((3, 3), |_| r.gen_range(0.0..1.0));
        assert_eq!(semantic_features(fo.view(), v.view(), 0.0).unwrap(), fo);
        assert_eq!(semantic_features(fo.view(), Array2::eye(3).view(), 1.0).unwrap(), &fo * 2.0);
    }

    #[test]
    fn matches_naive_loops() {
        let mut r = rng(7);
        let fo = Array2::from_shape_fn((3, 4), |_| r.gen_range(-1.0..1.0));
        let s = Array2::from_shape_fn((4, 4), |_| r.gen_range(0.0..1.0));
        let got = geometric_features(fo.view(), s.view(), 0.7).unwrap();
        let want = naive_geometric(&fo, &s, 0.7);
        assert!(got.iter().zip(want.iter()).all(|(a, b)| (a - b).abs() < 1e-13));

        let v = Array2::from_shape_fn((3, 3), |_| r.gen_range(0.0..1.0));
        let got = semantic_features(fo.view(), v.view(), -0.4).unwrap();
        let want = naive_semantic(&fo, &v, -0.4);
        assert!(got.iter().zip(want.iter()).all(|(a, b)| (a - b).abs() < 1e-13));
    }

    #[test]
    fn two_channel_closed_form() {
        // projections pick orthogonal rows: g1 = g2 = fg = [[1, 0], [0, 1]]
        let fg = array![[1.0, 0.0], [0.0, 1.0]];
        let v = channel_attention(fg.view(), Array2::eye(2).view(), Array2::eye(2).view()).unwrap();
        let e = std::f64::consts::E;
        let hi = e / (e + 1.0);
        assert!((v.weights[(0, 0)] - hi).abs() < 1e-15);
        assert!((v.weights[(1, 1)] - hi).abs() < 1e-15);
        assert!((v.weights[(0, 1)] - (1.0 - hi)).abs() < 1e-15);
    }

    #[test]
    fn identity_params_pass_features_through() {
        let mut r = rng(8);
        let fi = FeatureTensor::random(&mut r, 3, 2, 3);
        let fo = FeatureTensor::random(&mut r, 3, 2, 3);
        let out = frem_forward(&fi, &fo, &FremParams::identity(3, 6)).unwrap();
        assert_eq!(out.semantic, fo.values);
        assert!(out.landmarks.iter().all(|v| *v == 0.0));
        let expected = spatial_softmax(&fo.values, 2, 3).unwrap();
        assert_eq!(out.heatmaps, expected);
    }

    #[test]
    fn forward_is_composition_of_steps() {
        let mut r = rng(9);
        let fi = FeatureTensor::random(&mut r, 4, 4, 4);
        let fo = FeatureTensor::random(&mut r, 4, 4, 4);
        let p = FremParams::random(&mut r, 4, 16);
        let out = frem_forward(&fi, &fo, &p).unwrap();

        let fi_hat = p.input_proj.dot(&fi.values);
        let fo_hat = p.output_proj.dot(&fo.values);
        let softmax_rows = |m: Array2<f64>| {
            let mut m = m;
            for mut row in m.rows_mut() {
                let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                row.mapv_inplace(|x| (x - mx).exp());
                let s = row.sum();
                row.mapv_inplace(|x| x / s);
            }
            m
        };
        let att = |x: &Array2<f64>, y: &Array2<f64>| softmax_rows(y.t().dot(x));
        let total = att(&fi_hat, &fi_hat) * p.map_gains[0]
            + att(&fo_hat, &fo_hat) * p.map_gains[1]
            + att(&fi_hat, &fo_hat) * p.map_gains[2];
        let fg = naive_geometric(&fo_hat, &total, p.lambda);
        let g1 = p.g1_proj.dot(&fg);
        let g2 = p.g2_proj.dot(&fg);
        let v = softmax_rows(g2.dot(&g1.t()));
        let fs = naive_semantic(&fg, &v, p.gamma);
        let lm = fs.dot(&p.head) + &array![[p.head_offset[0], p.head_offset[1]]];

        assert!(out.semantic.iter().zip(fs.iter()).all(|(a, b)| (a - b).abs() < 1e-10));
        assert!(out.landmarks.iter().zip(lm.iter()).all(|(a, b)| (a - b).abs() < 1e-10));
        let hm = softmax_rows(fs);
        assert!(out.heatmaps.values().iter().zip(hm.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn binary_container_round_trip() {
        let mut r = rng(10);
        let t = FeatureTensor::random(&mut r, 3, 2, 5);
        let mut buf = Vec::new();
        t.write_binary(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"FREM");
        assert_eq!(&buf[4..8], &3u32.to_le_bytes());
        assert_eq!(buf.len(), 16 + 30 * 8);
        assert_eq!(FeatureTensor::read_binary(&buf[..]).unwrap(), t);
        assert!(matches!(
            FeatureTensor::read_binary(&buf[..40]),
            Err(ContainerError::Truncated { .. })
        ));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(FeatureTensor::read_binary(&bad[..]), Err(ContainerError::Magic(_))));

        let p = FremParams::random(&mut r, 3, 10);
        let mut buf = Vec::new();
        p.write_binary(&mut buf).unwrap();
        assert_eq!(FremParams::read_binary(&buf[..]).unwrap(), p);
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<FremParams>(&json).unwrap(), p);
    }

    #[test]
    fn channel_permutation_is_exact() {
        let mut r = rng(11);
        let (c, h, w) = (5, 3, 4);
        let fi = FeatureTensor::random(&mut r, c, h, w);
        let fo = FeatureTensor::random(&mut r, c, h, w);
        let p = FremParams::random(&mut r, c, h * w);
        let base = frem_forward(&fi, &fo, &p).unwrap();
        let perm = [3, 0, 4, 1, 2];
        let out = frem_forward(&fi.permute_channels(&perm), &fo.permute_channels(&perm), &p.permute_channels(&perm)).unwrap();
        assert_eq!(out.landmarks, base.landmarks.select(Axis(0), &perm));
        assert_eq!(out.semantic, base.semantic.select(Axis(0), &perm));
        for (k, &src) in perm.iter().enumerate() {
            assert_eq!(out.heatmaps.channel(k), base.heatmaps.channel(src));
        }
    }

    #[test]
    fn repeated_runs_are_identical() {
        let mut r = rng(12);
        let fi = FeatureTensor::random(&mut r, 3, 4, 4);
        let fo = FeatureTensor::random(&mut r, 3, 4, 4);
        let p = FremParams::init(3, 16, 99);
        assert_eq!(p, FremParams::init(3, 16, 99));
        assert_eq!(frem_forward(&fi, &fo, &p).unwrap(), frem_forward(&fi, &fo, &p).unwrap());
    }

    #[test]
    fn loss_is_smooth_in_residual_scales() {
        use crate::lof::{heatmap_loss, landmark_loss, total_loss, LossConfig};
        let mut r = rng(13);
        let (c, h, w) = (3, 4, 4);
        let fi = FeatureTensor::random(&mut r, c, h, w);
        let fo = FeatureTensor::random(&mut r, c, h, w);
        let base = FremParams::random(&mut r, c, h * w);
        let gt_hm = HeatmapSet::gaussian(&[(1.0, 1.0), (2.0, 2.5), (3.0, 0.5)], h, w, 1.0).unwrap();
        let gt_lm: Vec<f64> = (0..2 * c).map(|_| r.gen_range(-20.0..20.0)).collect();
        let cfg = LossConfig::default();
        let loss = |lambda: f64, gamma: f64| {
            let p = FremParams { lambda, gamma, ..base.clone() };
            let out = frem_forward(&fi, &fo, &p).unwrap();
            let (lh, _) = heatmap_loss(&out.heatmaps, &gt_hm, &cfg).unwrap();
            let lm: Vec<f64> = out.landmarks.iter().copied().collect();
            let (ll, _) = landmark_loss(&lm, &gt_lm).unwrap();
            total_loss(lh, ll, &cfg)
        };
        let (l0, g0) = (base.lambda, base.gamma);
        let dl = |h: f64| (loss(l0 + h, g0) - loss(l0 - h, g0)) / (2.0 * h);
        let dg = |h: f64| (loss(l0, g0 + h) - loss(l0, g0 - h)) / (2.0 * h);
        for (coarse, fine) in [(dl(1e-3), dl(1e-4)), (dg(1e-3), dg(1e-4))] {
            let rel = (coarse - fine).abs() / coarse.abs().max(fine.abs()).max(1e-12);
            assert!(rel <= 1e-4, "coarse {coarse} fine {fine}");
        }
    }
}
