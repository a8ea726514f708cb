//! Noise-prediction models behind a common sequence interface.

mod mixture;
mod toy;

use serde::{Deserialize, Serialize};

use crate::attention::AttnMode;
use crate::diffusion::{LatentSequence, Tensor};
use crate::error::Result;

pub use mixture::{
    mixture_posterior_eps, Component, ComponentSpec, MixtureModel, MixtureSequenceDenoiser,
    MixtureSpec,
};
pub use toy::{build_toy_attention_denoiser, ToyAttentionDenoiser, ToyConfig};

/// Stand-in for the text prompt: a small class label, or unconditional.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Conditioning {
    pub label: Option<u32>,
}

impl Conditioning {
    pub const NONE: Conditioning = Conditioning { label: None };

    pub fn label(label: u32) -> Self {
        Self { label: Some(label) }
    }
}

/// Predicts the noise component of every frame of `latents` at timestep `t`.
///
/// Implementations must return one tensor per frame with the frame's shape,
/// and must be deterministic. Under [`AttnMode::PerFrameSelf`] the output
/// for frame `k` may depend only on frame `k`.
pub trait Denoiser: Send + Sync {
    fn eval(
        &self,
        latents: &LatentSequence,
        t: usize,
        cond: Conditioning,
        mode: AttnMode,
    ) -> Result<Vec<Tensor>>;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn eval(
        &self,
        latents: &LatentSequence,
        t: usize,
        cond: Conditioning,
        mode: AttnMode,
    ) -> Result<Vec<Tensor>> {
        (**self).eval(latents, t, cond, mode)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn eval(
        &self,
        latents: &LatentSequence,
        t: usize,
        cond: Conditioning,
        mode: AttnMode,
    ) -> Result<Vec<Tensor>> {
        (**self).eval(latents, t, cond, mode)
    }
}
