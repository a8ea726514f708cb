//! DDPM forward noising and the deterministic DDIM recurrence in both
//! directions.

use ndarray::Zip;
use rand::Rng;
use rand_distr::StandardNormal;

use super::latent::{ensure_finite, ensure_same_shape, Latent, LatentSequence, Tensor};
use super::schedule::NoiseSchedule;
use crate::attention::AttnMode;
use crate::denoisers::{Conditioning, Denoiser};
use crate::error::{Error, Result};

/// Jumps `x` from its timestep to `t_to` through the closed-form marginal
/// of the forward chain. A zero-length jump returns `x` and draws nothing.
pub fn ddpm_forward<R: Rng + ?Sized>(
    x: &Latent,
    t_to: usize,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<Latent> {
    if t_to < x.t {
        return Err(Error::param(format!(
            "forward noising cannot go from t = {} back to t = {t_to}",
            x.t
        )));
    }
    let ab_from = schedule.alpha_bar(x.t)?;
    let ab_to = schedule.alpha_bar(t_to)?;
    if t_to == x.t {
        return Ok(x.clone());
    }
    let ratio = ab_to / ab_from;
    let (keep, noise) = (ratio.sqrt(), (1.0 - ratio).sqrt());
    let mut data = x.data.clone();
    for v in data.iter_mut() {
        let e: f64 = rng.sample(StandardNormal);
        *v = keep * *v + noise * e;
    }
    Ok(Latent { data, t: t_to })
}

/// One DDIM update from `x_t.t` down to `t_prev`.
pub fn ddim_step(
    x_t: &Latent,
    t_prev: usize,
    eps: &Tensor,
    schedule: &NoiseSchedule,
) -> Result<Latent> {
    if t_prev >= x_t.t {
        return Err(Error::param(format!(
            "DDIM step must descend, got t = {} -> {t_prev}",
            x_t.t
        )));
    }
    let data = ddim_transfer(&x_t.data, x_t.t, t_prev, eps, schedule)?;
    Ok(Latent { data, t: t_prev })
}

/// The DDIM recurrence between two arbitrary timesteps, written as
/// `c_x * x + c_eps * eps` with `c_x = sqrt(ab_to / ab_from)`.
pub(crate) fn ddim_transfer(
    x: &Tensor,
    t_from: usize,
    t_to: usize,
    eps: &Tensor,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    ensure_same_shape(x, eps)?;
    ensure_finite(eps, "noise prediction")?;
    let ab_from = schedule.alpha_bar(t_from)?;
    let ab_to = schedule.alpha_bar(t_to)?;
    let c_x = (ab_to / ab_from).sqrt();
    let c_eps = (1.0 - ab_to).sqrt() - c_x * (1.0 - ab_from).sqrt();
    let mut out = Tensor::zeros(x.dim());
    Zip::from(&mut out)
        .and(x)
        .and(eps)
        .for_each(|o, &xv, &ev| *o = c_x * xv + c_eps * ev);
    ensure_finite(&out, "DDIM step")?;
    Ok(out)
}

/// Recovers the noise prediction implied by a posterior mean `mu` of
/// `p(x_{t-1} | x_t)`, inverting
/// `mu = (x_t - beta_t / sqrt(1 - ab_t) * eps) / sqrt(1 - beta_t)`.
pub fn eps_from_mu(
    mu: &Tensor,
    x_t: &Latent,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    ensure_same_shape(mu, &x_t.data)?;
    let beta = schedule.beta(t)?;
    let ab = schedule.alpha_bar(t)?;
    let (keep, gain) = ((1.0 - beta).sqrt(), (1.0 - ab).sqrt() / beta);
    let mut out = Tensor::zeros(mu.dim());
    Zip::from(&mut out)
        .and(&x_t.data)
        .and(mu)
        .for_each(|o, &x, &m| *o = (x - keep * m) * gain);
    Ok(out)
}

/// Posterior mean of `p(x_{t-1} | x_t)` for a given noise prediction.
pub fn mu_from_eps(
    eps: &Tensor,
    x_t: &Latent,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    ensure_same_shape(eps, &x_t.data)?;
    let beta = schedule.beta(t)?;
    let ab = schedule.alpha_bar(t)?;
    let (scale, gain) = (1.0 / (1.0 - beta).sqrt(), beta / (1.0 - ab).sqrt());
    let mut out = Tensor::zeros(eps.dim());
    Zip::from(&mut out)
        .and(&x_t.data)
        .and(eps)
        .for_each(|o, &x, &e| *o = (x - gain * e) * scale);
    Ok(out)
}

/// What a [`SequenceSampler`] hook sees after each step.
pub struct StepEvent<'a> {
    /// Timestep at which the denoiser was queried.
    pub t: usize,
    /// The latents the denoiser saw.
    pub input: &'a LatentSequence,
    pub eps: &'a [Tensor],
    /// The stepped latents; hooks may modify them in place.
    pub output: &'a mut LatentSequence,
}

/// Runs DDIM over a whole frame sequence, one joint denoiser call per
/// timestep.
pub struct SequenceSampler<'a> {
    pub denoiser: &'a dyn Denoiser,
    pub schedule: &'a NoiseSchedule,
    pub cond: Conditioning,
    pub mode: AttnMode,
}

impl<'a> SequenceSampler<'a> {
    pub fn new(denoiser: &'a dyn Denoiser, schedule: &'a NoiseSchedule) -> Self {
        Self {
            denoiser,
            schedule,
            cond: Conditioning::default(),
            mode: AttnMode::default(),
        }
    }

    pub fn with_cond(mut self, cond: Conditioning) -> Self {
        self.cond = cond;
        self
    }

    pub fn with_mode(mut self, mode: AttnMode) -> Self {
        self.mode = mode;
        self
    }

    fn predict(&self, x: &LatentSequence, t: usize) -> Result<Vec<Tensor>> {
        let eps = self
            .denoiser
            .eval(x, t, self.cond, self.mode)
            .map_err(|e| e.at_step(t))?;
        if eps.len() != x.len() {
            return Err(Error::param(format!(
                "denoiser returned {} frames for {} inputs",
                eps.len(),
                x.len()
            ))
            .at_step(t));
        }
        Ok(eps)
    }

    /// DDIM from `x.t()` to 0. `steps` lists the query timesteps in strictly
    /// descending order starting at `x.t()`; the final target is 0.
    pub fn sample(&self, x: LatentSequence, steps: &[usize]) -> Result<LatentSequence> {
        self.sample_to(x, steps, 0, |_| Ok(()))
    }

    /// DDIM from `x.t()` down to `t_end`, calling `hook` after every step.
    pub fn sample_to<F>(
        &self,
        mut x: LatentSequence,
        steps: &[usize],
        t_end: usize,
        mut hook: F,
    ) -> Result<LatentSequence>
    where
        F: FnMut(StepEvent<'_>) -> Result<()>,
    {
        check_descending(steps, x.t(), t_end)?;
        for (i, &t) in steps.iter().enumerate() {
            let t_prev = steps.get(i + 1).copied().unwrap_or(t_end);
            let eps = self.predict(&x, t)?;
            let frames = x
                .frames()
                .iter()
                .zip(&eps)
                .map(|(f, e)| ddim_transfer(f, t, t_prev, e, self.schedule))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| e.at_step(t))?;
            let mut next = x.clone();
            next.replace(frames, t_prev);
            hook(StepEvent {
                t,
                input: &x,
                eps: &eps,
                output: &mut next,
            })
            .map_err(|e| e.at_step(t))?;
            x = next;
        }
        Ok(x)
    }

    /// Deterministic inversion from clean latents (`t = 0`) up through the
    /// strictly ascending `steps`. The step into `t` queries the denoiser on
    /// the current latents labelled with the target timestep `t`.
    pub fn invert(&self, mut x: LatentSequence, steps: &[usize]) -> Result<LatentSequence> {
        if x.t() != 0 {
            return Err(Error::param(format!(
                "inversion starts from clean latents, got t = {}",
                x.t()
            )));
        }
        if steps.first() == Some(&0) || steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param(
                "inversion timesteps must be positive and strictly ascending",
            ));
        }
        for &t in steps {
            let t_from = x.t();
            let eps = self.predict(&x, t)?;
            let frames = x
                .frames()
                .iter()
                .zip(&eps)
                .map(|(f, e)| ddim_transfer(f, t_from, t, e, self.schedule))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| e.at_step(t))?;
            x.replace(frames, t);
        }
        Ok(x)
    }
}

fn check_descending(steps: &[usize], t_start: usize, t_end: usize) -> Result<()> {
    match steps.first() {
        None if t_start == t_end => Ok(()),
        None => Err(Error::param("empty step grid")),
        Some(&first) if first != t_start => Err(Error::param(format!(
            "step grid starts at {first} but the latents are at t = {t_start}"
        ))),
        Some(_) => {
            if steps.windows(2).any(|w| w[0] <= w[1]) || steps.last().is_some_and(|&l| l <= t_end) {
                Err(Error::param(format!(
                    "step grid must be strictly descending and stay above {t_end}"
                )))
            } else {
                Ok(())
            }
        }
    }
}

/// DDIM sampling of a single latent.
pub fn ddim_sample(
    x_t: &Latent,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    steps: &[usize],
    cond: Conditioning,
) -> Result<Latent> {
    let out = SequenceSampler::new(denoiser, schedule)
        .with_cond(cond)
        .sample(LatentSequence::from_latent(x_t.clone()), steps)?;
    Ok(out.frame_latent(0))
}

/// DDIM inversion of a single clean latent.
pub fn ddim_invert(
    x_0: &Latent,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    steps: &[usize],
    cond: Conditioning,
) -> Result<Latent> {
    let out = SequenceSampler::new(denoiser, schedule)
        .with_cond(cond)
        .invert(LatentSequence::from_latent(x_0.clone()), steps)?;
    Ok(out.frame_latent(0))
}
