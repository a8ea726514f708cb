//! Temporal-consistency metrics over generated frame sequences.

use ndarray::Zip;
use serde::{Deserialize, Serialize};

use crate::denoisers::MixtureModel;
use crate::diffusion::{LatentSequence, Tensor};
use crate::motion::{warp_translate, MotionField, Offset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub config_hash: String,
    /// Mean over consecutive frame pairs of the per-element squared error.
    pub inter_frame_mse: f64,
    /// Mean over frames `2..m` of the per-element squared error between the
    /// motion-compensated frame and frame 1.
    pub warped_inconsistency: f64,
    /// Per frame, Euclidean distance to the nearest mixture mean; empty when
    /// no mixture is known.
    pub nearest_mode_distance: Vec<f64>,
}

/// Per-element mean squared difference.
pub fn mse(a: &Tensor, b: &Tensor) -> f64 {
    let mut acc = 0.0;
    Zip::from(a).and(b).for_each(|&x, &y| acc += (x - y) * (x - y));
    acc / a.len().max(1) as f64
}

pub fn inter_frame_mse(frames: &[Tensor]) -> f64 {
    if frames.len() < 2 {
        return 0.0;
    }
    let total: f64 = frames.windows(2).map(|p| mse(&p[0], &p[1])).sum();
    total / (frames.len() - 1) as f64
}

pub fn warped_inconsistency(frames: &[Tensor], field: &MotionField) -> f64 {
    if frames.len() < 2 {
        return 0.0;
    }
    let total: f64 = frames
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, f)| mse(&warp_translate(f, -field.offset(k), field.mode()), &frames[0]))
        .sum();
    total / (frames.len() - 1) as f64
}

pub fn consistency_metrics(
    frames: &LatentSequence,
    field: &MotionField,
    mixture: Option<&MixtureModel>,
    seed: u64,
    config_hash: impl Into<String>,
) -> MetricsReport {
    let fs = frames.frames();
    MetricsReport {
        seed,
        config_hash: config_hash.into(),
        inter_frame_mse: inter_frame_mse(fs),
        warped_inconsistency: warped_inconsistency(fs, field),
        nearest_mode_distance: mixture
            .map(|m| fs.iter().map(|f| m.nearest_mean_distance(f)).collect())
            .unwrap_or_default(),
    }
}

/// Integer wrap shift `s` maximizing the circular cross-correlation
/// `sum_x a(x) b(x + s)`, reported in `[-n/2, n/2)` per axis. Ties are
/// broken toward the first shift in row-major scan order.
pub fn estimate_shift(a: &Tensor, b: &Tensor) -> Offset {
    let (h, w, c) = a.dim();
    let (mut best, mut arg) = (f64::NEG_INFINITY, (0usize, 0usize));
    for dr in 0..h {
        for dc in 0..w {
            let mut acc = 0.0;
            for i in 0..h {
                for j in 0..w {
                    for ch in 0..c {
                        acc += a[[i, j, ch]] * b[[(i + dr) % h, (j + dc) % w, ch]];
                    }
                }
            }
            if acc > best {
                best = acc;
                arg = (dr, dc);
            }
        }
    }
    let signed = |d: usize, n: usize| {
        if 2 * d >= n {
            d as f64 - n as f64
        } else {
            d as f64
        }
    };
    Offset::new(signed(arg.0, h), signed(arg.1, w))
}

/// Mean Euclidean length of the estimated shift between consecutive frames.
pub fn mean_displacement(frames: &[Tensor]) -> f64 {
    if frames.len() < 2 {
        return 0.0;
    }
    let total: f64 = frames
        .windows(2)
        .map(|p| estimate_shift(&p[0], &p[1]).norm())
        .sum();
    total / (frames.len() - 1) as f64
}
