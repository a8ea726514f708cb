//! Zero-shot video generation on top of a frozen image diffusion model,
//! reduced to desk scale: latents are the images, the denoiser is either an
//! exact mixture oracle or a fixed random attention network.
//!
//! The pieces compose as in [`pipeline::generate_video`]: sample the first
//! frame's latent, give the sequence global motion ([`motion`]), denoise all
//! frames jointly with cross-frame attention ([`attention`]), and optionally
//! blend backgrounds toward the warped first frame ([`smoothing`]).

pub mod attention;
pub mod denoisers;
pub mod diffusion;
pub mod error;
pub mod harness;
pub mod motion;
pub mod pipeline;
pub mod rng;
pub mod smoothing;

pub use attention::AttnMode;
pub use denoisers::{Conditioning, Denoiser};
pub use diffusion::{Latent, LatentSequence, NoiseSchedule, Tensor, TimeWindow};
pub use error::{Error, Result};
pub use motion::{MotionField, Offset, WarpMode};
