//! Global translation flows, latent warping, and motion-enriched initial
//! latents for a frame sequence.
//!
//! Offsets are `(row, col)`. A positive component moves content toward
//! increasing row or column index.

use std::ops::{Add, Neg};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::AttnMode;
use crate::denoisers::{Conditioning, Denoiser};
use crate::diffusion::{
    ddpm_forward, Latent, LatentSequence, NoiseSchedule, SequenceSampler, Tensor, TimeWindow,
};
use crate::error::{Error, Result};
use crate::rng::{Purpose, SeedStream};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Offset {
    pub row: f64,
    pub col: f64,
}

impl Offset {
    pub const ZERO: Offset = Offset { row: 0.0, col: 0.0 };

    pub fn new(row: f64, col: f64) -> Self {
        Self { row, col }
    }

    pub fn scale(self, s: f64) -> Self {
        Self::new(self.row * s, self.col * s)
    }

    pub fn norm(self) -> f64 {
        self.row.hypot(self.col)
    }

    pub fn is_finite(self) -> bool {
        self.row.is_finite() && self.col.is_finite()
    }
}

impl Add for Offset {
    type Output = Offset;
    fn add(self, o: Offset) -> Offset {
        Offset::new(self.row + o.row, self.col + o.col)
    }
}

impl Neg for Offset {
    type Output = Offset;
    fn neg(self) -> Offset {
        Offset::new(-self.row, -self.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarpMode {
    /// Integer translation on a torus; fractional shifts are rounded.
    #[default]
    WrapInteger,
    /// Fractional translation with bilinear sampling and edge clamping.
    ClampBilinear,
}

/// Constant-velocity global motion `delta^k = lambda * (k - 1) * delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionField {
    lambda: f64,
    delta: Offset,
    frames: usize,
    mode: WarpMode,
}

impl MotionField {
    pub fn new(lambda: f64, delta: Offset, frames: usize, mode: WarpMode) -> Result<Self> {
        if frames == 0 {
            return Err(Error::param("a motion field needs at least one frame"));
        }
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::param(format!("motion gain must be >= 0, got {lambda}")));
        }
        if !delta.is_finite() {
            return Err(Error::param("motion direction must be finite"));
        }
        Ok(Self {
            lambda,
            delta,
            frames,
            mode,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn delta(&self) -> Offset {
        self.delta
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn mode(&self) -> WarpMode {
        self.mode
    }

    /// Offset of frame `k` (0-based): `lambda * k * delta`.
    pub fn offset(&self, k: usize) -> Offset {
        self.delta.scale(self.lambda * k as f64)
    }
}

/// `[delta^1, ..., delta^m]`.
pub fn translation_flow(field: &MotionField) -> Vec<Offset> {
    (0..field.frames).map(|k| field.offset(k)).collect()
}

/// Translates `x` by `shift`.
pub fn warp_translate(x: &Tensor, shift: Offset, mode: WarpMode) -> Tensor {
    match mode {
        WarpMode::WrapInteger => warp_wrap(x, shift.row.round() as i64, shift.col.round() as i64),
        WarpMode::ClampBilinear => warp_bilinear(x, shift),
    }
}

pub fn warp_latent(x: &Latent, shift: Offset, mode: WarpMode) -> Latent {
    Latent {
        data: warp_translate(&x.data, shift, mode),
        t: x.t,
    }
}

fn warp_wrap(x: &Tensor, dr: i64, dc: i64) -> Tensor {
    let (h, w, _) = x.dim();
    let (dr, dc) = (dr.rem_euclid(h as i64) as usize, dc.rem_euclid(w as i64) as usize);
    Tensor::from_shape_fn(x.dim(), |(i, j, c)| {
        x[[(i + h - dr) % h, (j + w - dc) % w, c]]
    })
}

fn lerp(a: f64, b: f64, f: f64) -> f64 {
    let v = a + f * (b - a);
    v.clamp(a.min(b), a.max(b))
}

fn warp_bilinear(x: &Tensor, shift: Offset) -> Tensor {
    let (h, w, _) = x.dim();
    let locate = |pos: f64, n: usize| -> (usize, usize, f64) {
        let p = pos.clamp(0.0, (n - 1) as f64);
        let lo = p.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        (lo, hi, p - lo as f64)
    };
    Tensor::from_shape_fn(x.dim(), |(i, j, c)| {
        let (r0, r1, fr) = locate(i as f64 - shift.row, h);
        let (c0, c1, fc) = locate(j as f64 - shift.col, w);
        let top = lerp(x[[r0, c0, c]], x[[r0, c1, c]], fc);
        let bottom = lerp(x[[r1, c0, c]], x[[r1, c1, c]], fc);
        lerp(top, bottom, fr)
    })
}

/// Builds `x^{1:m}_T` with global motion: DDIM-denoise frame 1 from `T` to
/// `T'` in unit steps, translate the result by each frame's offset, then
/// re-noise each translated latent from `T'` back to `T`. Frame 1 is the
/// input latent itself.
#[allow(clippy::too_many_arguments)]
pub fn motion_latents(
    x1: &Latent,
    window: &TimeWindow,
    field: &MotionField,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    cond: Conditioning,
    mode: AttnMode,
    seeds: &SeedStream,
) -> Result<LatentSequence> {
    if x1.t != window.t_start() {
        return Err(Error::param(format!(
            "first latent is at t = {} but the window starts at T = {}",
            x1.t,
            window.t_start()
        )));
    }
    TimeWindow::new(window.t_start(), window.t_mid(), schedule)?;
    let x1_mid = if field.frames() > 1 {
        let steps: Vec<usize> = ((window.t_mid() + 1)..=window.t_start()).rev().collect();
        SequenceSampler::new(denoiser, schedule)
            .with_cond(cond)
            .with_mode(mode)
            .sample_to(LatentSequence::from_latent(x1.clone()), &steps, window.t_mid(), |_| Ok(()))?
            .frame_latent(0)
    } else {
        x1.clone()
    };
    let rest = (1..field.frames())
        .into_par_iter()
        .map(|k| {
            let warped = warp_latent(&x1_mid, field.offset(k), field.mode());
            let mut rng = seeds.stream(Purpose::ForwardNoise, k as u64);
            ddpm_forward(&warped, window.t_start(), schedule, &mut rng).map(|l| l.data)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut frames = Vec::with_capacity(field.frames());
    frames.push(x1.data.clone());
    frames.extend(rest);
    LatentSequence::new(frames, window.t_start())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn grid(v: ndarray::Array2<f64>) -> Tensor {
        let (h, w) = v.dim();
        v.into_shape_with_order((h, w, 1)).unwrap()
    }

    #[test]
    fn flow_values() {
        let f = MotionField::new(1.0, Offset::new(1.0, 1.0), 8, WarpMode::WrapInteger).unwrap();
        let flow = translation_flow(&f);
        for (k, o) in flow.iter().enumerate() {
            assert_eq!(*o, Offset::new(k as f64, k as f64));
        }
        let f = MotionField::new(2.0, Offset::new(1.0, 0.0), 3, WarpMode::WrapInteger).unwrap();
        assert_eq!(
            translation_flow(&f),
            vec![Offset::ZERO, Offset::new(2.0, 0.0), Offset::new(4.0, 0.0)]
        );
        let f = MotionField::new(0.37, Offset::new(-3.0, 2.5), 1, WarpMode::ClampBilinear).unwrap();
        assert_eq!(translation_flow(&f), vec![Offset::ZERO]);
    }

    #[test]
    fn field_validation() {
        assert!(MotionField::new(1.0, Offset::ZERO, 0, WarpMode::WrapInteger).is_err());
        assert!(MotionField::new(-1.0, Offset::ZERO, 2, WarpMode::WrapInteger).is_err());
        assert!(MotionField::new(1.0, Offset::new(f64::NAN, 0.0), 2, WarpMode::WrapInteger).is_err());
    }

    #[test]
    fn wrap_permutation_table() {
        let x = grid(array![[1.0, 2.0], [3.0, 4.0]]);
        let y = warp_translate(&x, Offset::new(1.0, 0.0), WarpMode::WrapInteger);
        assert_eq!(y, grid(array![[3.0, 4.0], [1.0, 2.0]]));
        let y = warp_translate(&x, Offset::new(0.0, 1.0), WarpMode::WrapInteger);
        assert_eq!(y, grid(array![[2.0, 1.0], [4.0, 3.0]]));
    }

    #[test]
    fn wrap_moves_content_toward_larger_index() {
        let mut x = Tensor::zeros((4, 5, 1));
        x[[1, 1, 0]] = 1.0;
        let y = warp_translate(&x, Offset::new(2.0, 3.0), WarpMode::WrapInteger);
        assert_eq!(y[[3, 4, 0]], 1.0);
        let y = warp_translate(&x, Offset::new(-2.0, 14.0), WarpMode::WrapInteger);
        assert_eq!(y[[3, 0, 0]], 1.0);
    }

    #[test]
    fn zero_shift_identity_both_modes() {
        let x = Tensor::from_shape_fn((3, 4, 2), |(i, j, c)| (i * 8 + j * 2 + c) as f64 * 0.7);
        assert_eq!(warp_translate(&x, Offset::ZERO, WarpMode::WrapInteger), x);
        assert_eq!(warp_translate(&x, Offset::ZERO, WarpMode::ClampBilinear), x);
    }

    #[test]
    fn wrap_rounds_fractional_shift() {
        let x = Tensor::from_shape_fn((4, 4, 1), |(i, j, _)| (i * 4 + j) as f64);
        assert_eq!(
            warp_translate(&x, Offset::new(0.6, -1.4), WarpMode::WrapInteger),
            warp_translate(&x, Offset::new(1.0, -1.0), WarpMode::WrapInteger)
        );
    }

    #[test]
    fn bilinear_half_pixel_and_clamp() {
        let x = grid(array![[0.0, 2.0, 4.0]]);
        let y = warp_translate(&x, Offset::new(0.0, 0.5), WarpMode::ClampBilinear);
        assert_eq!(y, grid(array![[0.0, 1.0, 3.0]]));
        let y = warp_translate(&x, Offset::new(0.0, -5.0), WarpMode::ClampBilinear);
        assert_eq!(y, grid(array![[4.0, 4.0, 4.0]]));
    }
}
