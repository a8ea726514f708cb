//! A fixed random-weight denoiser with one attention block.
//!
//! Every pixel is lifted to `hidden` channels by a shared linear map plus a
//! per-label embedding, passed through one single-head attention block, and
//! mapped back by a shared linear head to a bounded clean-latent estimate,
//! which is then converted to a noise prediction. All spatial processing is
//! shared across pixels and attention accumulates keys in query-anchored
//! order, so under per-frame attention the map commutes bitwise with integer
//! wrap translations.

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Conditioning, Denoiser};
use crate::attention::{attention_ordered, flatten_tokens, matmul, AttnMode, FrameQkv, KeyOrder, QkvWeights};
use crate::diffusion::{shape_error, LatentSequence, NoiseSchedule, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    /// Attention channels `c`.
    pub hidden: usize,
    /// Number of conditioning labels.
    pub vocab: u32,
    /// Standard-deviation multiplier on the query and key projections;
    /// larger values sharpen attention.
    pub qk_gain: f64,
    /// Weight of the skip path around the attention block.
    pub residual: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            hidden: 8,
            vocab: 4,
            qk_gain: 4.0,
            residual: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyAttentionDenoiser {
    shape: (usize, usize, usize),
    config: ToyConfig,
    lift: Array2<f64>,
    lift_bias: Array1<f64>,
    /// Row 0 is the unconditional embedding (zero); row `l + 1` is label `l`.
    cond_embed: Array2<f64>,
    qkv: QkvWeights,
    head: Array2<f64>,
    head_bias: Array1<f64>,
    schedule: NoiseSchedule,
}

pub fn build_toy_attention_denoiser(
    seed: u64,
    shape: (usize, usize, usize),
    config: ToyConfig,
    schedule: NoiseSchedule,
) -> Result<ToyAttentionDenoiser> {
    let (h, w, c_in) = shape;
    if h == 0 || w == 0 || c_in == 0 || config.hidden == 0 {
        return Err(Error::param(format!(
            "toy denoiser needs non-empty shape and hidden width, got {h}x{w}x{c_in}, hidden {}",
            config.hidden
        )));
    }
    if !(config.qk_gain.is_finite() && config.residual.is_finite()) {
        return Err(Error::param("toy denoiser gains must be finite"));
    }
    let c = config.hidden;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |rows: usize, cols: usize, std: f64| -> Array2<f64> {
        let dist = Normal::new(0.0, std).expect("finite std");
        Array2::from_shape_simple_fn((rows, cols), || dist.sample(&mut rng))
    };
    let lift = draw(c_in, c, 1.0 / (c_in as f64).sqrt());
    let lift_bias = draw(1, c, 0.1).remove_axis(Axis(0));
    let mut cond_embed = draw(config.vocab as usize + 1, c, 0.5);
    cond_embed.row_mut(0).fill(0.0);
    let qk_std = config.qk_gain / (c as f64).sqrt();
    let qkv = QkvWeights {
        wq: draw(c, c, qk_std),
        wk: draw(c, c, qk_std),
        wv: draw(c, c, 1.0 / (c as f64).sqrt()),
    };
    let head = draw(c, c_in, 1.0 / (c as f64).sqrt());
    let head_bias = Array1::zeros(c_in);
    Ok(ToyAttentionDenoiser {
        shape,
        config,
        lift,
        lift_bias,
        cond_embed,
        qkv,
        head,
        head_bias,
        schedule,
    })
}

impl ToyAttentionDenoiser {
    pub fn shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn config(&self) -> &ToyConfig {
        &self.config
    }

    fn embedding(&self, cond: Conditioning) -> Result<ndarray::ArrayView1<'_, f64>> {
        let row = match cond.label {
            None => 0,
            Some(l) if l < self.config.vocab => l as usize + 1,
            Some(_) => return Err(Error::Conditioning { label: cond.label }),
        };
        Ok(self.cond_embed.row(row))
    }

    fn features(&self, x: &Tensor, embed: ndarray::ArrayView1<'_, f64>) -> (Array2<f64>, FrameQkv) {
        let mut h = matmul(flatten_tokens(x).view(), self.lift.view());
        for mut row in h.rows_mut() {
            for ((v, b), e) in row.iter_mut().zip(&self.lift_bias).zip(embed) {
                *v += b + e;
            }
        }
        let qkv = FrameQkv {
            q: matmul(h.view(), self.qkv.wq.view()),
            k: matmul(h.view(), self.qkv.wk.view()),
            v: matmul(h.view(), self.qkv.wv.view()),
        };
        (h, qkv)
    }

    fn order(&self) -> KeyOrder {
        KeyOrder::Anchored {
            height: self.shape.0,
            width: self.shape.1,
        }
    }

    fn readout(&self, x: &Tensor, hidden: &Array2<f64>, attn: &Array2<f64>, t: usize) -> Result<Tensor> {
        let ab = self.schedule.alpha_bar(t)?;
        let (s, sigma) = (ab.sqrt(), (1.0 - ab).sqrt());
        let mut z = attn.clone();
        z.scaled_add(self.config.residual, hidden);
        let mut out = matmul(z.view(), self.head.view());
        for mut row in out.rows_mut() {
            for (v, b) in row.iter_mut().zip(&self.head_bias) {
                *v = (*v + b).tanh();
            }
        }
        let x0 = out
            .into_shape_with_order(self.shape)
            .expect("token count matches shape");
        Ok(Tensor::from_shape_fn(self.shape, |idx| (x[idx] - s * x0[idx]) / sigma))
    }
}

impl Denoiser for ToyAttentionDenoiser {
    fn eval(
        &self,
        latents: &LatentSequence,
        t: usize,
        cond: Conditioning,
        mode: AttnMode,
    ) -> Result<Vec<Tensor>> {
        if latents.shape() != self.shape {
            return Err(shape_error(self.shape, latents.shape()));
        }
        if self.schedule.alpha_bar(t)? >= 1.0 {
            return Err(Error::DegenerateNoise { t });
        }
        let embed = self.embedding(cond)?;
        let feats: Vec<(Array2<f64>, FrameQkv)> = latents
            .frames()
            .par_iter()
            .map(|x| self.features(x, embed))
            .collect();
        let anchor = &feats[0].1;
        let order = self.order();
        latents
            .frames()
            .par_iter()
            .zip(feats.par_iter())
            .map(|(x, (hidden, qkv))| {
                let attn = match mode {
                    AttnMode::PerFrameSelf => attention_ordered(&qkv.q, &qkv.k, &qkv.v, order)?,
                    AttnMode::CrossFrameFirst => {
                        attention_ordered(&qkv.q, &anchor.k, &anchor.v, order)?
                    }
                };
                self.readout(x, hidden, &attn, t)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{warp_translate, Offset, WarpMode};

    fn toy(seed: u64) -> ToyAttentionDenoiser {
        build_toy_attention_denoiser(seed, (6, 5, 2), ToyConfig::default(), NoiseSchedule::default()).unwrap()
    }

    fn frame(seed: u64) -> Tensor {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_shape_simple_fn((6, 5, 2), || rng.random_range(-2.0..2.0))
    }

    #[test]
    fn same_seed_same_weights_and_output() {
        let (a, b) = (toy(3), toy(3));
        assert_eq!(a.lift, b.lift);
        assert_eq!(a.qkv, b.qkv);
        let seq = LatentSequence::new(vec![frame(1), frame(2)], 500).unwrap();
        let ea = a.eval(&seq, 500, Conditioning::NONE, AttnMode::CrossFrameFirst).unwrap();
        let eb = b.eval(&seq, 500, Conditioning::NONE, AttnMode::CrossFrameFirst).unwrap();
        assert_eq!(ea, eb);
        assert_ne!(toy(4).lift, a.lift);
    }

    #[test]
    fn wrap_translation_commutes_exactly() {
        let d = toy(9);
        let x = frame(5);
        for shift in [Offset::new(1.0, 0.0), Offset::new(2.0, 3.0), Offset::new(-4.0, 7.0)] {
            let moved = warp_translate(&x, shift, WarpMode::WrapInteger);
            let a = d
                .eval(&LatentSequence::new(vec![moved], 300).unwrap(), 300, Conditioning::label(1), AttnMode::PerFrameSelf)
                .unwrap();
            let b = d
                .eval(&LatentSequence::new(vec![x.clone()], 300).unwrap(), 300, Conditioning::label(1), AttnMode::PerFrameSelf)
                .unwrap();
            assert_eq!(a[0], warp_translate(&b[0], shift, WarpMode::WrapInteger));
        }
    }

    #[test]
    fn identical_frames_cross_mode() {
        let d = toy(2);
        let x = frame(8);
        let seq = LatentSequence::new(vec![x.clone(), x.clone(), x], 700).unwrap();
        let out = d.eval(&seq, 700, Conditioning::NONE, AttnMode::CrossFrameFirst).unwrap();
        assert_eq!(out[0], out[1]);
        assert_eq!(out[0], out[2]);
    }

    #[test]
    fn per_frame_mode_isolates_frames() {
        let d = toy(2);
        let seq = LatentSequence::new(vec![frame(1), frame(2), frame(3)], 200).unwrap();
        let zeroed = LatentSequence::new(vec![frame(1), Tensor::zeros((6, 5, 2)), Tensor::zeros((6, 5, 2))], 200).unwrap();
        let a = d.eval(&seq, 200, Conditioning::NONE, AttnMode::PerFrameSelf).unwrap();
        let b = d.eval(&zeroed, 200, Conditioning::NONE, AttnMode::PerFrameSelf).unwrap();
        assert_eq!(a[0], b[0]);
        let c = d.eval(&seq, 200, Conditioning::NONE, AttnMode::CrossFrameFirst).unwrap();
        assert_ne!(a[1], c[1]);
    }

    #[test]
    fn conditioning_changes_output_and_is_validated() {
        let d = toy(2);
        let seq = LatentSequence::new(vec![frame(1)], 200).unwrap();
        let a = d.eval(&seq, 200, Conditioning::label(0), AttnMode::PerFrameSelf).unwrap();
        let b = d.eval(&seq, 200, Conditioning::label(1), AttnMode::PerFrameSelf).unwrap();
        assert_ne!(a, b);
        assert!(d.eval(&seq, 200, Conditioning::label(4), AttnMode::PerFrameSelf).is_err());
        assert!(d.eval(&seq, 0, Conditioning::NONE, AttnMode::PerFrameSelf).is_err());
        let wrong = LatentSequence::new(vec![Tensor::zeros((5, 5, 2))], 200).unwrap();
        assert!(d.eval(&wrong, 200, Conditioning::NONE, AttnMode::PerFrameSelf).is_err());
    }
}
