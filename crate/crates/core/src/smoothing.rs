//! Foreground masks and background smoothing.
//!
//! On background pixels a frame's latent is blended with the first frame's
//! latent warped into that frame; foreground pixels pass through untouched.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::diffusion::{ensure_same_shape, Latent, LatentSequence, Tensor};
use crate::error::{Error, Result};
use crate::motion::{warp_translate, MotionField, Offset, WarpMode};

pub const DEFAULT_ALPHA: f64 = 0.6;

/// Binary `height x width` mask; `true` marks foreground.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "MaskRepr", try_from = "MaskRepr")]
pub struct ForegroundMask {
    data: Array2<bool>,
}

/// Row-major `'0'`/`'1'` string form used in configs and hashes.
#[derive(Serialize, Deserialize)]
struct MaskRepr {
    shape: [usize; 2],
    bits: String,
}

impl From<ForegroundMask> for MaskRepr {
    fn from(m: ForegroundMask) -> Self {
        let (h, w) = m.data.dim();
        Self {
            shape: [h, w],
            bits: m.data.iter().map(|&b| if b { '1' } else { '0' }).collect(),
        }
    }
}

impl TryFrom<MaskRepr> for ForegroundMask {
    type Error = String;
    fn try_from(r: MaskRepr) -> std::result::Result<Self, String> {
        let bits = r
            .bits
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(format!("invalid mask character {other:?}")),
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Array2::from_shape_vec((r.shape[0], r.shape[1]), bits)
            .map(Self::new)
            .map_err(|e| e.to_string())
    }
}

impl ForegroundMask {
    pub fn new(data: Array2<bool>) -> Self {
        Self { data }
    }

    pub fn filled(shape: (usize, usize), value: bool) -> Self {
        Self {
            data: Array2::from_elem(shape, value),
        }
    }

    /// From 0/1 entries; anything else is rejected.
    pub fn from_binary(data: &Array2<u8>) -> Result<Self> {
        if data.iter().any(|&v| v > 1) {
            return Err(Error::param("mask entries must be 0 or 1"));
        }
        Ok(Self {
            data: data.mapv(|v| v == 1),
        })
    }

    pub fn data(&self) -> &Array2<bool> {
        &self.data
    }

    pub fn shape(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|v| **v).count()
    }

    pub fn is_foreground(&self, row: usize, col: usize) -> bool {
        self.data[[row, col]]
    }
}

/// When smoothing is applied during the final DDIM run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingWhen {
    /// Once, right after the run first reaches a timestep `<= t`.
    Once(usize),
    /// After every DDIM step.
    EveryStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSmoothingParams")]
pub struct SmoothingParams {
    alpha: f64,
    when: SmoothingWhen,
}

#[derive(Deserialize)]
struct RawSmoothingParams {
    alpha: f64,
    when: SmoothingWhen,
}

impl TryFrom<RawSmoothingParams> for SmoothingParams {
    type Error = Error;

    fn try_from(raw: RawSmoothingParams) -> Result<Self> {
        Self::new(raw.alpha, raw.when)
    }
}

impl SmoothingParams {
    pub fn new(alpha: f64, when: SmoothingWhen) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::param(format!("smoothing alpha must lie in [0, 1], got {alpha}")));
        }
        Ok(Self { alpha, when })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn when(&self) -> SmoothingWhen {
        self.when
    }
}

/// Synthetic stand-ins for a saliency detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SyntheticMask {
    /// A disk of `radius` around `center`, moving with the motion field.
    Disk { center: Offset, radius: f64 },
    /// Pixels whose channel-mean magnitude exceeds `level`.
    Threshold { level: f64 },
}

/// Per-frame masks from a synthetic provider. `frames` is only read by the
/// threshold provider.
pub fn synthetic_mask_provider(
    kind: &SyntheticMask,
    shape: (usize, usize),
    field: &MotionField,
    frames: Option<&[Tensor]>,
) -> Result<Vec<ForegroundMask>> {
    match *kind {
        SyntheticMask::Disk { center, radius } => disk_masks(shape, center, radius, field),
        SyntheticMask::Threshold { level } => {
            let frames = frames.ok_or_else(|| Error::param("threshold masks need frames"))?;
            threshold_masks(frames, level)
        }
    }
}

/// Disk masks whose centre follows `delta^k`. Distances wrap around the grid
/// in wrap mode. Radius 0 yields empty masks; the boundary is inclusive.
pub fn disk_masks(
    shape: (usize, usize),
    center: Offset,
    radius: f64,
    field: &MotionField,
) -> Result<Vec<ForegroundMask>> {
    if !(radius.is_finite() && radius >= 0.0) || !center.is_finite() {
        return Err(Error::param(format!("disk radius must be >= 0, got {radius}")));
    }
    let (h, w) = shape;
    let wrap = field.mode() == WarpMode::WrapInteger;
    let axis_dist = |p: f64, c: f64, n: usize| {
        let d = (p - c).abs();
        if wrap {
            let d = d.rem_euclid(n as f64);
            d.min(n as f64 - d)
        } else {
            d
        }
    };
    Ok((0..field.frames())
        .map(|k| {
            let c = center + field.offset(k);
            let data = Array2::from_shape_fn((h, w), |(i, j)| {
                let dr = axis_dist(i as f64, c.row, h);
                let dc = axis_dist(j as f64, c.col, w);
                radius > 0.0 && dr.hypot(dc) <= radius
            });
            ForegroundMask::new(data)
        })
        .collect())
}

pub fn threshold_masks(frames: &[Tensor], level: f64) -> Result<Vec<ForegroundMask>> {
    if !(level.is_finite() && level >= 0.0) {
        return Err(Error::param(format!("threshold level must be >= 0, got {level}")));
    }
    Ok(frames
        .iter()
        .map(|f| {
            let (h, w, c) = f.dim();
            let data = Array2::from_shape_fn((h, w), |(i, j)| {
                let mean = (0..c).map(|ch| f[[i, j, ch]]).sum::<f64>() / c as f64;
                mean.abs() > level
            });
            ForegroundMask::new(data)
        })
        .collect())
}

fn blend(fg: bool, xk: f64, xh: f64, alpha: f64) -> f64 {
    if fg || alpha == 0.0 {
        xk
    } else if alpha == 1.0 {
        xh
    } else {
        (alpha * xh + (1.0 - alpha) * xk).clamp(xk.min(xh), xk.max(xh))
    }
}

/// `M * x_k + (1 - M) * (alpha * W(x_1) + (1 - alpha) * x_k)`.
pub fn background_smooth(
    x_k: &Latent,
    x_1: &Latent,
    mask: &ForegroundMask,
    shift: Offset,
    alpha: f64,
    mode: WarpMode,
) -> Result<Latent> {
    ensure_same_shape(&x_k.data, &x_1.data)?;
    let (h, w, _) = x_k.data.dim();
    if mask.shape() != (h, w) {
        return Err(Error::Shape {
            expected: vec![h, w],
            actual: vec![mask.shape().0, mask.shape().1],
        });
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::param(format!("smoothing alpha must lie in [0, 1], got {alpha}")));
    }
    let warped = warp_translate(&x_1.data, shift, mode);
    let data = Tensor::from_shape_fn(x_k.data.dim(), |(i, j, c)| {
        blend(mask.data[[i, j]], x_k.data[[i, j, c]], warped[[i, j, c]], alpha)
    });
    Ok(Latent { data, t: x_k.t })
}

/// Smooths frames `2..m` of `seq` in place against frame 1.
pub fn smooth_sequence(
    seq: &mut LatentSequence,
    masks: &[ForegroundMask],
    field: &MotionField,
    alpha: f64,
) -> Result<()> {
    if masks.len() != seq.len() {
        return Err(Error::param(format!(
            "{} masks for {} frames",
            masks.len(),
            seq.len()
        )));
    }
    let t = seq.t();
    let first = seq.frame_latent(0);
    for (k, mask) in masks.iter().enumerate().skip(1) {
        let xk = seq.frame_latent(k);
        let out = background_smooth(&xk, &first, mask, field.offset(k), alpha, field.mode())?;
        seq.frames_mut()[k] = out.data;
    }
    debug_assert_eq!(seq.t(), t);
    Ok(())
}
