//! Noise schedules, latents, and the DDPM/DDIM machinery.

mod latent;
mod sampler;
mod schedule;

pub use latent::{Latent, LatentSequence, Tensor};
pub(crate) use latent::{ensure_finite, ensure_same_shape, shape_error};
pub use sampler::{
    ddim_invert, ddim_sample, ddim_step, ddpm_forward, eps_from_mu, mu_from_eps, SequenceSampler,
    StepEvent,
};
pub use schedule::{
    BetaKind, NoiseSchedule, TimeWindow, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_TRAIN_STEPS,
};
