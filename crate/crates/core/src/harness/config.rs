//! Flat run configuration. File keys mirror the CLI flags; flags win.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attention::AttnMode;
use crate::denoisers::{Conditioning, MixtureSpec, ToyConfig};
use crate::diffusion::BetaKind;
use crate::error::{Error, Result};
use crate::motion::{Offset, WarpMode};
use crate::pipeline::{DenoiserConfig, GenerationConfig, MaskSource, ScheduleConfig, SmoothingConfig};
use crate::smoothing::{SmoothingParams, SmoothingWhen, SyntheticMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DenoiserKind {
    #[default]
    Toy,
    Mixture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    #[default]
    Disk,
    Threshold,
    Files,
}

/// Every field is optional; unset fields take the defaults of
/// [`GenerationConfig`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub frames: Option<usize>,
    pub lambda: Option<f64>,
    /// Column displacement per frame.
    pub delta_x: Option<f64>,
    /// Row displacement per frame.
    pub delta_y: Option<f64>,
    pub dt: Option<usize>,
    pub t_start: Option<usize>,
    pub t_mid: Option<usize>,
    /// Enables background smoothing.
    pub smooth_alpha: Option<f64>,
    pub attn: Option<AttnMode>,
    pub steps: Option<usize>,
    pub height: Option<usize>,
    pub width: Option<usize>,
    pub channels: Option<usize>,
    pub warp: Option<WarpMode>,
    pub motion: Option<bool>,
    pub denoiser: Option<DenoiserKind>,
    pub hidden: Option<usize>,
    pub vocab: Option<u32>,
    pub qk_gain: Option<f64>,
    pub residual: Option<f64>,
    pub denoiser_seed: Option<u64>,
    pub label: Option<u32>,
    pub schedule: Option<BetaKind>,
    pub train_steps: Option<usize>,
    pub beta_start: Option<f64>,
    pub beta_end: Option<f64>,
    pub smooth_every_step: Option<bool>,
    /// Timestep for one-shot smoothing; defaults to `t_mid`.
    pub smooth_at: Option<usize>,
    pub mask: Option<MaskKind>,
    pub mask_radius: Option<f64>,
    /// `[row, col]`; defaults to the grid centre.
    pub mask_center: Option<[f64; 2]>,
    pub mask_threshold: Option<f64>,
    /// Directory of `mask_000.pgm`.. files, used with `mask = "files"`.
    pub mask_dir: Option<PathBuf>,
    pub mixtures: Option<Vec<MixtureSpec>>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident; $($f:ident),* $(,)?) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f.clone(); } )*
    };
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Values set in `other` replace those in `self`.
    pub fn overlay(mut self, other: &RunConfig) -> Self {
        let dst = &mut self;
        overlay!(dst, other;
            seed, frames, lambda, delta_x, delta_y, dt, t_start, t_mid, smooth_alpha, attn, steps,
            height, width, channels, warp, motion, denoiser, hidden, vocab, qk_gain, residual,
            denoiser_seed, label, schedule, train_steps, beta_start, beta_end, smooth_every_step,
            smooth_at, mask, mask_radius, mask_center, mask_threshold, mask_dir, mixtures);
        self
    }

    /// `(T, T')` from any two of `t_start`, `t_mid`, `dt`. With only `dt`,
    /// `T` keeps its default. All three must agree when given.
    fn window(&self, d: &GenerationConfig) -> Result<(usize, usize)> {
        let sub = |a: usize, b: usize| {
            a.checked_sub(b)
                .ok_or_else(|| Error::Config(format!("dt = {b} exceeds t_start = {a}")))
        };
        match (self.t_start, self.t_mid, self.dt) {
            (Some(t), Some(m), Some(dt)) => {
                if t.checked_sub(m) != Some(dt) {
                    return Err(Error::Config(format!(
                        "t_start = {t}, t_mid = {m} and dt = {dt} disagree"
                    )));
                }
                Ok((t, m))
            }
            (Some(t), Some(m), None) => Ok((t, m)),
            (Some(t), None, Some(dt)) => Ok((t, sub(t, dt)?)),
            (None, Some(m), Some(dt)) => m
                .checked_add(dt)
                .map(|t| (t, m))
                .ok_or_else(|| Error::Config("t_mid + dt overflows".into())),
            (None, None, Some(dt)) => Ok((d.t_start, sub(d.t_start, dt)?)),
            (Some(t), None, None) => {
                let gap = d.t_start - d.t_mid;
                Ok((t, t.saturating_sub(gap).max(1)))
            }
            (None, Some(m), None) => Ok((d.t_start.max(m), m)),
            (None, None, None) => Ok((d.t_start, d.t_mid)),
        }
    }

    pub fn to_generation(&self) -> Result<GenerationConfig> {
        let d = GenerationConfig::default();
        let (t_start, t_mid) = self.window(&d)?;
        let (dh, dw, dc) = d.shape;
        let shape = (
            self.height.unwrap_or(dh),
            self.width.unwrap_or(dw),
            self.channels.unwrap_or(dc),
        );
        let ds = ScheduleConfig::default();
        let schedule = ScheduleConfig {
            train_steps: self.train_steps.unwrap_or(ds.train_steps),
            beta_start: self.beta_start.unwrap_or(ds.beta_start),
            beta_end: self.beta_end.unwrap_or(ds.beta_end),
            kind: self.schedule.unwrap_or(ds.kind),
        };
        let dt = ToyConfig::default();
        let denoiser = match self.denoiser.unwrap_or_default() {
            DenoiserKind::Toy => DenoiserConfig::Toy {
                seed: self.denoiser_seed.unwrap_or(0),
                config: ToyConfig {
                    hidden: self.hidden.unwrap_or(dt.hidden),
                    vocab: self.vocab.unwrap_or(dt.vocab),
                    qk_gain: self.qk_gain.unwrap_or(dt.qk_gain),
                    residual: self.residual.unwrap_or(dt.residual),
                },
            },
            DenoiserKind::Mixture => DenoiserConfig::Mixture {
                mixtures: self.mixtures.clone(),
            },
        };
        let smoothing = match self.smooth_alpha {
            None => None,
            Some(alpha) => {
                let when = if self.smooth_every_step.unwrap_or(false) {
                    SmoothingWhen::EveryStep
                } else {
                    SmoothingWhen::Once(self.smooth_at.unwrap_or(t_mid))
                };
                let params = SmoothingParams::new(alpha, when).map_err(|e| Error::Config(e.to_string()))?;
                Some(SmoothingConfig {
                    params,
                    masks: self.mask_source(shape, self.frames.unwrap_or(d.frames))?,
                })
            }
        };
        Ok(GenerationConfig {
            frames: self.frames.unwrap_or(d.frames),
            shape,
            schedule,
            t_start,
            t_mid,
            lambda: self.lambda.unwrap_or(d.lambda),
            delta: Offset::new(
                self.delta_y.unwrap_or(d.delta.row),
                self.delta_x.unwrap_or(d.delta.col),
            ),
            warp: self.warp.unwrap_or(d.warp),
            motion: self.motion.unwrap_or(d.motion),
            attn: self.attn.unwrap_or(d.attn),
            smoothing,
            denoiser,
            cond: Conditioning { label: self.label },
            steps: self.steps.unwrap_or(d.steps),
            seed: self.seed.unwrap_or(d.seed),
        })
    }

    fn mask_source(&self, shape: (usize, usize, usize), frames: usize) -> Result<MaskSource> {
        let (h, w, _) = shape;
        Ok(match self.mask.unwrap_or_default() {
            MaskKind::Disk => {
                let [r, c] = self
                    .mask_center
                    .unwrap_or([(h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0]);
                MaskSource::Synthetic(SyntheticMask::Disk {
                    center: Offset::new(r, c),
                    radius: self.mask_radius.unwrap_or(h.min(w) as f64 / 4.0),
                })
            }
            MaskKind::Threshold => MaskSource::Synthetic(SyntheticMask::Threshold {
                level: self.mask_threshold.unwrap_or(0.5),
            }),
            MaskKind::Files => {
                let dir = self
                    .mask_dir
                    .as_ref()
                    .ok_or_else(|| Error::Config("mask = \"files\" needs mask_dir".into()))?;
                MaskSource::Provided {
                    masks: super::io::read_masks(dir, frames)?,
                }
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        let g = RunConfig::default().to_generation().unwrap();
        assert_eq!(g, GenerationConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_json(r#"{"sed": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"seed": 1, "attn": "cross"}"#).is_ok());
        assert!(RunConfig::from_json(r#"{"attn": "both"}"#).is_err());
    }

    #[test]
    fn overlay_prefers_later() {
        let file = RunConfig::from_json(r#"{"seed": 1, "frames": 4}"#).unwrap();
        let cli = RunConfig {
            seed: Some(9),
            ..Default::default()
        };
        let merged = file.overlay(&cli);
        assert_eq!((merged.seed, merged.frames), (Some(9), Some(4)));
    }

    #[test]
    fn window_resolution() {
        let w = |t, m, dt| {
            RunConfig {
                t_start: t,
                t_mid: m,
                dt,
                ..Default::default()
            }
            .to_generation()
            .map(|g| (g.t_start, g.t_mid))
        };
        assert_eq!(w(Some(941), Some(881), Some(60)).unwrap(), (941, 881));
        assert!(w(Some(941), Some(881), Some(50)).unwrap_err().is_config());
        assert_eq!(w(Some(1000), None, Some(0)).unwrap(), (1000, 1000));
        assert_eq!(w(None, Some(800), Some(10)).unwrap(), (810, 800));
        assert_eq!(w(None, None, Some(41)).unwrap(), (941, 900));
        assert!(w(Some(10), None, Some(20)).is_err());
    }

    #[test]
    fn delta_axes() {
        let g = RunConfig {
            delta_x: Some(2.0),
            delta_y: Some(-1.0),
            ..Default::default()
        }
        .to_generation()
        .unwrap();
        assert_eq!(g.delta, Offset::new(-1.0, 2.0));
    }

    #[test]
    fn smoothing_defaults_to_t_mid() {
        let g = RunConfig {
            smooth_alpha: Some(0.6),
            ..Default::default()
        }
        .to_generation()
        .unwrap();
        let s = g.smoothing.unwrap();
        assert_eq!(s.params.when(), SmoothingWhen::Once(881));
        assert!(RunConfig {
            smooth_alpha: Some(1.5),
            ..Default::default()
        }
        .to_generation()
        .unwrap_err()
        .is_config());
    }
}
