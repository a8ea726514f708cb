//! Exact MMSE noise prediction for a mixture of point masses.
//!
//! With `x_0 ~ sum_j w_j delta(mu_j)` the forward marginal is
//! `x_t | j ~ N(sqrt(ab_t) mu_j, (1 - ab_t) I)`, so the posterior over
//! components and hence `E[x_0 | x_t]` are available in closed form.

use ndarray::Zip;
use serde::{Deserialize, Serialize};

use super::{Conditioning, Denoiser};
use crate::attention::AttnMode;
use crate::diffusion::{ensure_finite, ensure_same_shape, Latent, LatentSequence, NoiseSchedule, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    components: Vec<Component>,
}

/// Serialized form: weights plus flattened row-major mean grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub shape: [usize; 3],
    pub components: Vec<ComponentSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub weight: f64,
    pub mean: Vec<f64>,
}

impl MixtureModel {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::param("a mixture needs at least one component"))?;
        let mut total = 0.0;
        for c in &components {
            if !(c.weight.is_finite() && c.weight > 0.0) {
                return Err(Error::param(format!(
                    "mixture weights must be positive, got {}",
                    c.weight
                )));
            }
            ensure_same_shape(&first.mean, &c.mean)?;
            ensure_finite(&c.mean, "mixture mean")?;
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::param(format!("mixture weights sum to {total}, not 1")));
        }
        for (i, a) in components.iter().enumerate() {
            for b in &components[i + 1..] {
                if a.mean == b.mean {
                    return Err(Error::param("mixture means must be pairwise distinct"));
                }
            }
        }
        Ok(Self { components })
    }

    /// Equal-weight mixture over the given means.
    pub fn uniform(means: Vec<Tensor>) -> Result<Self> {
        let w = 1.0 / means.len().max(1) as f64;
        Self::new(
            means
                .into_iter()
                .map(|mean| Component { weight: w, mean })
                .collect(),
        )
    }

    pub fn from_spec(spec: &MixtureSpec) -> Result<Self> {
        let [h, w, c] = spec.shape;
        let components = spec
            .components
            .iter()
            .map(|cs| {
                let mean = Tensor::from_shape_vec((h, w, c), cs.mean.clone()).map_err(|_| {
                    Error::Config(format!(
                        "mixture mean has {} values, which does not fit shape {h}x{w}x{c}",
                        cs.mean.len()
                    ))
                })?;
                Ok(Component {
                    weight: cs.weight,
                    mean,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(components)
    }

    pub fn to_spec(&self) -> MixtureSpec {
        let (h, w, c) = self.shape();
        MixtureSpec {
            shape: [h, w, c],
            components: self
                .components
                .iter()
                .map(|c| ComponentSpec {
                    weight: c.weight,
                    mean: c.mean.iter().copied().collect(),
                })
                .collect(),
        }
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn means(&self) -> impl Iterator<Item = &Tensor> {
        self.components.iter().map(|c| &c.mean)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.components[0].mean.dim()
    }

    /// Posterior component probabilities given `x` at timestep `t`.
    pub fn responsibilities(&self, x: &Tensor, t: usize, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
        ensure_same_shape(&self.components[0].mean, x)?;
        ensure_finite(x, "mixture query")?;
        let ab = schedule.alpha_bar(t)?;
        if ab >= 1.0 {
            return Err(Error::DegenerateNoise { t });
        }
        let (s, var) = (ab.sqrt(), 1.0 - ab);
        let logits: Vec<f64> = self
            .components
            .iter()
            .map(|c| {
                let mut d2 = 0.0;
                Zip::from(x).and(&c.mean).for_each(|&xv, &m| {
                    let d = xv - s * m;
                    d2 += d * d;
                });
                c.weight.ln() - d2 / (2.0 * var)
            })
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let ws: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = ws.iter().sum();
        Ok(ws.into_iter().map(|w| w / z).collect())
    }

    /// `E[x_0 | x_t = x]`.
    pub fn posterior_mean(&self, x: &Tensor, t: usize, schedule: &NoiseSchedule) -> Result<Tensor> {
        let r = self.responsibilities(x, t, schedule)?;
        let mut out = Tensor::zeros(x.dim());
        for (rj, c) in r.iter().zip(&self.components) {
            out.scaled_add(*rj, &c.mean);
        }
        Ok(out)
    }

    /// Euclidean distance from `x` to the closest mean.
    pub fn nearest_mean_distance(&self, x: &Tensor) -> f64 {
        self.means()
            .map(|m| {
                let mut d2 = 0.0;
                Zip::from(x).and(m).for_each(|&a, &b| d2 += (a - b) * (a - b));
                d2.sqrt()
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// The noise prediction `(x_t - sqrt(ab_t) E[x_0 | x_t]) / sqrt(1 - ab_t)`.
pub fn mixture_posterior_eps(
    x_t: &Latent,
    t: usize,
    mixture: &MixtureModel,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    let x0 = mixture.posterior_mean(&x_t.data, t, schedule)?;
    let ab = schedule.alpha_bar(t)?;
    let (s, sigma) = (ab.sqrt(), (1.0 - ab).sqrt());
    let mut eps = Tensor::zeros(x0.dim());
    Zip::from(&mut eps)
        .and(&x_t.data)
        .and(&x0)
        .for_each(|e, &x, &m| *e = (x - s * m) / sigma);
    Ok(eps)
}

/// Frame-wise oracle behind the sequence interface. The conditioning label
/// indexes `mixtures`; the unconditional label uses the first entry.
#[derive(Debug, Clone)]
pub struct MixtureSequenceDenoiser {
    mixtures: Vec<MixtureModel>,
    schedule: NoiseSchedule,
}

impl MixtureSequenceDenoiser {
    pub fn new(mixtures: Vec<MixtureModel>, schedule: NoiseSchedule) -> Result<Self> {
        let first = mixtures
            .first()
            .ok_or_else(|| Error::param("need at least one mixture"))?
            .shape();
        if let Some(m) = mixtures.iter().find(|m| m.shape() != first) {
            return Err(crate::diffusion::shape_error(first, m.shape()));
        }
        Ok(Self { mixtures, schedule })
    }

    pub fn single(mixture: MixtureModel, schedule: NoiseSchedule) -> Self {
        Self {
            mixtures: vec![mixture],
            schedule,
        }
    }

    pub fn mixture(&self, cond: Conditioning) -> Result<&MixtureModel> {
        let idx = cond.label.unwrap_or(0) as usize;
        self.mixtures
            .get(idx)
            .ok_or(Error::Conditioning { label: cond.label })
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }
}

impl Denoiser for MixtureSequenceDenoiser {
    fn eval(
        &self,
        latents: &LatentSequence,
        t: usize,
        cond: Conditioning,
        _mode: AttnMode,
    ) -> Result<Vec<Tensor>> {
        let mixture = self.mixture(cond)?;
        (0..latents.len())
            .map(|k| mixture_posterior_eps(&latents.frame_latent(k), t, mixture, &self.schedule))
            .collect()
    }
}
