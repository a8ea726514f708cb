//! Single-head scaled dot-product attention and its cross-frame variant,
//! where every frame queries the keys and values of the first frame.
//!
//! Spatial feature maps are flattened to tokens in row-major order.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::diffusion::Tensor;
use crate::error::{Error, Result};

/// Which keys and values each frame's queries attend to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum AttnMode {
    /// Frame `k` attends to its own keys and values.
    #[default]
    #[serde(rename = "self")]
    PerFrameSelf,
    /// Frame `k` attends to frame 1's keys and values.
    #[serde(rename = "cross")]
    CrossFrameFirst,
}

/// Order in which keys are accumulated for a given query.
///
/// Both orders compute the same softmax; they differ only in floating-point
/// summation order. `Anchored` visits keys by their wrapped offset from the
/// query position on an `height x width` grid, which makes the result
/// bitwise equivariant under integer wrap translations of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KeyOrder {
    #[default]
    RowMajor,
    Anchored { height: usize, width: usize },
}

impl KeyOrder {
    fn key_index(self, query: usize, r: usize) -> usize {
        match self {
            KeyOrder::RowMajor => r,
            KeyOrder::Anchored { height, width } => {
                let (y, x) = (query / width, query % width);
                let (dy, dx) = (r / width, r % width);
                ((y + dy) % height) * width + (x + dx) % width
            }
        }
    }

    fn check(self, tokens: usize) -> Result<()> {
        match self {
            KeyOrder::Anchored { height, width } if height * width != tokens => {
                Err(Error::param(format!(
                    "anchored key order over {height}x{width} needs {} tokens, got {tokens}",
                    height * width
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Query, key and value projections of one frame, `tokens x channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameQkv {
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
}

/// Per-frame projections of a whole sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTensors {
    frames: Vec<FrameQkv>,
}

impl AttentionTensors {
    pub fn new(frames: Vec<FrameQkv>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::param("attention needs at least one frame"))?;
        let dim = first.q.dim();
        if dim.1 == 0 {
            return Err(Error::param("attention needs at least one channel"));
        }
        for f in &frames {
            for m in [&f.q, &f.k, &f.v] {
                if m.dim() != dim {
                    return Err(Error::Shape {
                        expected: vec![dim.0, dim.1],
                        actual: vec![m.nrows(), m.ncols()],
                    });
                }
            }
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[FrameQkv] {
        &self.frames
    }

    pub fn frames_mut(&mut self) -> &mut [FrameQkv] {
        &mut self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// The three `c x c` projection matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct QkvWeights {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
}

impl QkvWeights {
    pub fn identity(c: usize) -> Self {
        Self {
            wq: Array2::eye(c),
            wk: Array2::eye(c),
            wv: Array2::eye(c),
        }
    }

    pub fn channels(&self) -> usize {
        self.wq.nrows()
    }
}

/// Flattens an `h x w x c` map to `(h*w) x c` tokens, row-major.
pub fn flatten_tokens(x: &Tensor) -> Array2<f64> {
    let (h, w, c) = x.dim();
    x.as_standard_layout()
        .into_owned()
        .into_shape_with_order((h * w, c))
        .expect("contiguous tensor reshapes")
}

/// Linear projections `Q = xW_q`, `K = xW_k`, `V = xW_v` of a feature map.
pub fn project_qkv(x: &Tensor, weights: &QkvWeights) -> Result<FrameQkv> {
    let c = x.dim().2;
    for w in [&weights.wq, &weights.wk, &weights.wv] {
        if w.dim() != (c, c) {
            return Err(Error::Shape {
                expected: vec![c, c],
                actual: vec![w.nrows(), w.ncols()],
            });
        }
    }
    let tokens = flatten_tokens(x);
    Ok(FrameQkv {
        q: matmul(tokens.view(), weights.wq.view()),
        k: matmul(tokens.view(), weights.wk.view()),
        v: matmul(tokens.view(), weights.wv.view()),
    })
}

/// Plain triple loop so that each entry is a left-to-right sum over the
/// shared dimension, independent of any BLAS blocking.
pub(crate) fn matmul(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    let (n, k) = a.dim();
    let m = b.ncols();
    let mut out = Array2::zeros((n, m));
    for i in 0..n {
        for j in 0..m {
            let mut acc = 0.0;
            for l in 0..k {
                acc += a[[i, l]] * b[[l, j]];
            }
            out[[i, j]] = acc;
        }
    }
    out
}

fn check_inputs(q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>) -> Result<()> {
    if q.ncols() == 0 || q.ncols() != k.ncols() {
        return Err(Error::Shape {
            expected: vec![k.nrows(), q.ncols()],
            actual: vec![k.nrows(), k.ncols()],
        });
    }
    if k.nrows() == 0 || k.nrows() != v.nrows() {
        return Err(Error::Shape {
            expected: vec![k.nrows(), v.ncols()],
            actual: vec![v.nrows(), v.ncols()],
        });
    }
    for m in [q, k, v] {
        if !m.iter().all(|x| x.is_finite()) {
            return Err(Error::Numeric("attention input"));
        }
    }
    Ok(())
}

fn scaled_scores(q_row: ArrayView2<'_, f64>, k: &Array2<f64>, i: usize, order: KeyOrder, out: &mut [f64]) {
    let c = k.ncols();
    let scale = 1.0 / (c as f64).sqrt();
    for (r, s) in out.iter_mut().enumerate() {
        let j = order.key_index(i, r);
        let mut dot = 0.0;
        for l in 0..c {
            dot += q_row[[0, l]] * k[[j, l]];
        }
        *s = dot * scale;
    }
}

/// Softmax of `QK^T / sqrt(c)` over the key axis. Row `i` holds query `i`'s
/// weights indexed by key token.
pub fn attention_weights(q: &Array2<f64>, k: &Array2<f64>) -> Result<Array2<f64>> {
    check_inputs(q, k, k)?;
    let tokens = k.nrows();
    let mut out = Array2::zeros((q.nrows(), tokens));
    let mut scores = vec![0.0; tokens];
    for i in 0..q.nrows() {
        scaled_scores(q.slice(ndarray::s![i..i + 1, ..]), k, i, KeyOrder::RowMajor, &mut scores);
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for s in scores.iter_mut() {
            *s = (*s - max).exp();
            denom += *s;
        }
        for (j, s) in scores.iter().enumerate() {
            out[[i, j]] = s / denom;
        }
    }
    Ok(out)
}

/// `Softmax(QK^T / sqrt(c)) V` with keys accumulated in row-major order.
pub fn self_attention(q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>) -> Result<Array2<f64>> {
    attention_ordered(q, k, v, KeyOrder::RowMajor)
}

/// `Softmax(QK^T / sqrt(c)) V` with an explicit key accumulation order.
pub fn attention_ordered(
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    order: KeyOrder,
) -> Result<Array2<f64>> {
    check_inputs(q, k, v)?;
    let tokens = k.nrows();
    order.check(tokens)?;
    if let KeyOrder::Anchored { .. } = order {
        if q.nrows() != tokens {
            return Err(Error::param(
                "anchored key order needs as many queries as keys",
            ));
        }
    }
    let cv = v.ncols();
    let mut out = Array2::zeros((q.nrows(), cv));
    let mut scores = vec![0.0; tokens];
    let mut acc = vec![0.0; cv];
    for i in 0..q.nrows() {
        scaled_scores(q.slice(ndarray::s![i..i + 1, ..]), k, i, order, &mut scores);
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        acc.iter_mut().for_each(|a| *a = 0.0);
        for (r, s) in scores.iter().enumerate() {
            let w = (s - max).exp();
            denom += w;
            let j = order.key_index(i, r);
            for (a, vv) in acc.iter_mut().zip(v.row(j)) {
                *a += w * vv;
            }
        }
        for (o, a) in out.row_mut(i).iter_mut().zip(&acc) {
            *o = a / denom;
        }
    }
    if !out.iter().all(|x| x.is_finite()) {
        return Err(Error::Numeric("attention output"));
    }
    Ok(out)
}

/// Every frame's queries against frame 1's keys and values. Keys and values
/// of frames `2..m` are never read.
pub fn cross_frame_attention(tensors: &AttentionTensors) -> Result<Vec<Array2<f64>>> {
    cross_frame_attention_ordered(tensors, KeyOrder::RowMajor)
}

pub fn cross_frame_attention_ordered(
    tensors: &AttentionTensors,
    order: KeyOrder,
) -> Result<Vec<Array2<f64>>> {
    let anchor = &tensors.frames()[0];
    tensors
        .frames()
        .iter()
        .map(|f| attention_ordered(&f.q, &anchor.k, &anchor.v, order))
        .collect()
}

/// Per-frame self attention over a whole sequence.
pub fn per_frame_attention_ordered(
    tensors: &AttentionTensors,
    order: KeyOrder,
) -> Result<Vec<Array2<f64>>> {
    tensors
        .frames()
        .iter()
        .map(|f| attention_ordered(&f.q, &f.k, &f.v, order))
        .collect()
}

/// Routes a sequence through self or cross-frame attention.
pub fn attend(tensors: &AttentionTensors, mode: AttnMode, order: KeyOrder) -> Result<Vec<Array2<f64>>> {
    match mode {
        AttnMode::PerFrameSelf => per_frame_attention_ordered(tensors, order),
        AttnMode::CrossFrameFirst => cross_frame_attention_ordered(tensors, order),
    }
}

/// Row sums of a weight matrix; used by tests and diagnostics.
pub fn row_sums(weights: &Array2<f64>) -> Vec<f64> {
    weights.sum_axis(Axis(1)).to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identity_and_zero_projection() {
        let x = Tensor::from_shape_fn((2, 2, 3), |(i, j, c)| (i * 6 + j * 3 + c) as f64);
        let p = project_qkv(&x, &QkvWeights::identity(3)).unwrap();
        let flat = flatten_tokens(&x);
        assert_eq!(p.q, flat);
        assert_eq!(p.k, flat);
        assert_eq!(p.v, flat);
        assert_eq!(flat.row(1).to_vec(), vec![3.0, 4.0, 5.0]);
        let zero = QkvWeights {
            wq: Array2::zeros((3, 3)),
            wk: Array2::zeros((3, 3)),
            wv: Array2::zeros((3, 3)),
        };
        let p = project_qkv(&x, &zero).unwrap();
        assert!(p.q.iter().chain(p.k.iter()).chain(p.v.iter()).all(|v| *v == 0.0));
    }

    #[test]
    fn projection_matches_hand_matmul() {
        // tokens [1, 2] and [3, -1]
        let x = Tensor::from_shape_vec((1, 2, 2), vec![1.0, 2.0, 3.0, -1.0]).unwrap();
        let w = QkvWeights {
            wq: array![[0.5, -1.0], [2.0, 0.25]],
            wk: array![[1.0, 0.0], [0.0, 1.0]],
            wv: array![[0.0, 1.0], [1.0, 0.0]],
        };
        let p = project_qkv(&x, &w).unwrap();
        assert_eq!(p.q, array![[4.5, -0.5], [-0.5, -3.25]]);
        assert_eq!(p.k, array![[1.0, 2.0], [3.0, -1.0]]);
        assert_eq!(p.v, array![[2.0, 1.0], [-1.0, 3.0]]);
    }

    #[test]
    fn projection_shape_mismatch() {
        let x = Tensor::zeros((2, 2, 3));
        assert!(project_qkv(&x, &QkvWeights::identity(2)).is_err());
    }

    #[test]
    fn one_token_returns_value() {
        let q = array![[0.3, -2.0]];
        let k = array![[1.0, 5.0]];
        let v = array![[7.0, -3.0]];
        assert_eq!(self_attention(&q, &k, &v).unwrap(), v);
    }

    #[test]
    fn identical_keys_average_values() {
        let q = array![[1.0], [-4.0]];
        let k = array![[2.0], [2.0], [2.0]];
        let v = array![[1.0], [2.0], [6.0]];
        let out = self_attention(&q, &k, &v).unwrap();
        for o in out.iter() {
            assert!((o - 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn two_token_ln2_weights() {
        // c = 1, scores q*k/1: query 1 sees [0, ln 2] -> weights [1/3, 2/3]
        let ln2 = std::f64::consts::LN_2;
        let q = array![[0.0], [1.0]];
        let k = array![[0.0], [ln2]];
        let w = attention_weights(&q, &k).unwrap();
        assert!((w[[0, 0]] - 0.5).abs() < 1e-15);
        assert!((w[[1, 0]] - 1.0 / 3.0).abs() < 1e-15);
        assert!((w[[1, 1]] - 2.0 / 3.0).abs() < 1e-15);
        let v = array![[3.0], [6.0]];
        let out = self_attention(&q, &k, &v).unwrap();
        assert!((out[[0, 0]] - 4.5).abs() < 1e-14);
        assert!((out[[1, 0]] - 5.0).abs() < 1e-14);
    }

    #[test]
    fn huge_scores_stay_finite() {
        let q = array![[100.0], [-100.0]];
        let k = array![[100.0], [-100.0]];
        let v = array![[1.0], [2.0]];
        let out = self_attention(&q, &k, &v).unwrap();
        assert_eq!(out, array![[1.0], [2.0]]);
        let w = attention_weights(&q, &k).unwrap();
        for s in row_sums(&w) {
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_non_finite() {
        let q = array![[f64::NAN]];
        let k = array![[1.0]];
        assert!(matches!(self_attention(&q, &k, &k), Err(Error::Numeric(_))));
    }

    #[test]
    fn anchored_order_matches_row_major() {
        let q = Array2::from_shape_fn((6, 2), |(i, j)| ((i * 7 + j * 3) % 5) as f64 * 0.4 - 1.0);
        let k = Array2::from_shape_fn((6, 2), |(i, j)| ((i * 3 + j) % 4) as f64 * 0.3);
        let v = Array2::from_shape_fn((6, 3), |(i, j)| (i + j) as f64);
        let a = self_attention(&q, &k, &v).unwrap();
        let b = attention_ordered(&q, &k, &v, KeyOrder::Anchored { height: 2, width: 3 }).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(attention_ordered(&q, &k, &v, KeyOrder::Anchored { height: 2, width: 2 }).is_err());
    }

    #[test]
    fn cross_frame_reads_only_first_frame() {
        let f = |s: f64| FrameQkv {
            q: Array2::from_shape_fn((4, 2), |(i, j)| s + (i * 2 + j) as f64 * 0.1),
            k: Array2::from_shape_fn((4, 2), |(i, j)| s * (i as f64 - j as f64)),
            v: Array2::from_shape_fn((4, 2), |(i, j)| s * 2.0 + i as f64 - j as f64),
        };
        let seq = AttentionTensors::new(vec![f(1.0), f(2.0), f(-0.5)]).unwrap();
        let out = cross_frame_attention(&seq).unwrap();
        let direct = self_attention(&seq.frames()[2].q, &seq.frames()[0].k, &seq.frames()[0].v).unwrap();
        assert_eq!(out[2], direct);

        let single = AttentionTensors::new(vec![f(1.0)]).unwrap();
        let one = cross_frame_attention(&single).unwrap();
        let s = &single.frames()[0];
        assert_eq!(one[0], self_attention(&s.q, &s.k, &s.v).unwrap());
    }

    #[test]
    fn tensors_reject_mismatched_frames() {
        let a = FrameQkv {
            q: Array2::zeros((4, 2)),
            k: Array2::zeros((4, 2)),
            v: Array2::zeros((4, 2)),
        };
        let mut b = a.clone();
        b.v = Array2::zeros((3, 2));
        assert!(AttentionTensors::new(vec![a, b]).is_err());
        assert!(AttentionTensors::new(vec![]).is_err());
    }
}
