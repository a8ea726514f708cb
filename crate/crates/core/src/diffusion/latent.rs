use ndarray::Array3;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Height x width x channels tensor.
pub type Tensor = Array3<f64>;

/// A single latent `x_t` with its timestep (0 = clean).
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    pub data: Tensor,
    pub t: usize,
}

impl Latent {
    pub fn new(data: Tensor, t: usize) -> Result<Self> {
        ensure_finite(&data, "latent")?;
        Ok(Self { data, t })
    }

    /// Standard-normal latent of the given shape.
    pub fn gaussian<R: Rng + ?Sized>(shape: (usize, usize, usize), t: usize, rng: &mut R) -> Self {
        let data = Tensor::from_shape_simple_fn(shape, || rng.sample(StandardNormal));
        Self { data, t }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.data.dim()
    }
}

/// `m` frame latents sharing a shape and a timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSequence {
    frames: Vec<Tensor>,
    t: usize,
}

impl LatentSequence {
    pub fn new(frames: Vec<Tensor>, t: usize) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::param("a latent sequence needs at least one frame"))?
            .dim();
        for f in &frames {
            if f.dim() != first {
                return Err(shape_error(first, f.dim()));
            }
            ensure_finite(f, "latent sequence")?;
        }
        Ok(Self { frames, t })
    }

    pub fn from_latent(latent: Latent) -> Self {
        Self {
            frames: vec![latent.data],
            t: latent.t,
        }
    }

    pub fn frames(&self) -> &[Tensor] {
        &self.frames
    }

    pub fn frame(&self, k: usize) -> &Tensor {
        &self.frames[k]
    }

    pub fn frame_latent(&self, k: usize) -> Latent {
        Latent {
            data: self.frames[k].clone(),
            t: self.t,
        }
    }

    pub fn into_frames(self) -> Vec<Tensor> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.frames[0].dim()
    }

    pub(crate) fn replace(&mut self, frames: Vec<Tensor>, t: usize) {
        debug_assert_eq!(frames.len(), self.frames.len());
        self.frames = frames;
        self.t = t;
    }

    pub(crate) fn frames_mut(&mut self) -> &mut [Tensor] {
        &mut self.frames
    }
}

pub(crate) fn ensure_finite(data: &Tensor, what: &'static str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(what))
    }
}

pub(crate) fn shape_error(expected: (usize, usize, usize), actual: (usize, usize, usize)) -> Error {
    Error::Shape {
        expected: vec![expected.0, expected.1, expected.2],
        actual: vec![actual.0, actual.1, actual.2],
    }
}

pub(crate) fn ensure_same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dim() == b.dim() {
        Ok(())
    } else {
        Err(shape_error(a.dim(), b.dim()))
    }
}
