//! Monte-Carlo checks against analytic expectations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use zsvid::denoisers::MixtureModel;
use zsvid::diffusion::{ddpm_forward, Latent, LatentSequence, NoiseSchedule, Tensor};
use zsvid::harness::metrics::{inter_frame_mse, mean_displacement};
use zsvid::motion::{MotionField, Offset, WarpMode};
use zsvid::pipeline::{generate_video, GenerationConfig};
use zsvid::AttnMode;

fn gaussian(shape: (usize, usize, usize), rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_shape_simple_fn(shape, || rng.sample(StandardNormal))
}

#[test]
fn posterior_mean_matches_importance_sampling() {
    let s = NoiseSchedule::default();
    let means = [
        Tensor::from_elem((1, 1, 2), 1.0),
        Tensor::from_shape_vec((1, 1, 2), vec![-1.0, 0.5]).unwrap(),
        Tensor::from_shape_vec((1, 1, 2), vec![0.2, -1.5]).unwrap(),
    ];
    let weights = [0.5, 0.3, 0.2];
    let m = MixtureModel::new(
        means
            .iter()
            .zip(weights)
            .map(|(mean, weight)| zsvid::denoisers::Component { weight, mean: mean.clone() })
            .collect(),
    )
    .unwrap();
    let t = 400;
    let ab = s.alpha_bar(t).unwrap();
    let x = Tensor::from_shape_vec((1, 1, 2), vec![0.3, 0.1]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (mut num, mut den) = (Tensor::zeros((1, 1, 2)), 0.0);
    for _ in 0..1_000_000 {
        let u: f64 = rng.random();
        let idx = if u < 0.5 { 0 } else if u < 0.8 { 1 } else { 2 };
        let mu = &means[idx];
        let d2: f64 = x.iter().zip(mu.iter()).map(|(a, b)| (a - ab.sqrt() * b).powi(2)).sum();
        let w = (-d2 / (2.0 * (1.0 - ab))).exp();
        num.scaled_add(w, mu);
        den += w;
    }
    let mc = num.mapv(|v| v / den);
    let exact = m.posterior_mean(&x, t, &s).unwrap();
    for (a, b) in mc.iter().zip(exact.iter()) {
        assert!((a - b).abs() <= 0.01 * b.abs().max(0.1), "{a} vs {b}");
    }
}

#[test]
fn forward_jump_preserves_unit_variance() {
    let s = NoiseSchedule::default();
    for (from, to) in [(0, 941), (881, 941), (100, 101)] {
        let n = 1000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for seed in 0..n {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Latent::new(gaussian((1, 1, 1), &mut rng), from).unwrap();
            let v = ddpm_forward(&x, to, &s, &mut rng).unwrap().data[[0, 0, 0]];
            sum += v;
            sq += v * v;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        assert!((var - 1.0).abs() < 0.1, "{from}->{to}: variance {var}");
    }
}

#[test]
fn iid_frames_inter_frame_mse_near_two() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let frames: Vec<Tensor> = (0..8).map(|_| gaussian((16, 16, 2), &mut rng)).collect();
    let v = inter_frame_mse(&frames);
    assert!((v - 2.0).abs() < 0.2, "{v}");
}

#[test]
fn larger_lambda_moves_frames_further() {
    let mut prev = -1.0;
    for lambda in [0.0, 1.0, 2.0, 3.0] {
        let config = GenerationConfig {
            frames: 4,
            steps: 20,
            t_mid: 941,
            lambda,
            delta: Offset::new(1.0, 0.0),
            attn: AttnMode::PerFrameSelf,
            seed: 2,
            ..GenerationConfig::default()
        };
        let g = generate_video(&config).unwrap();
        let d = mean_displacement(g.frames.frames());
        assert!(d > prev, "lambda {lambda}: displacement {d} <= {prev}");
        prev = d;
    }
}

#[test]
fn iid_sequence_metrics_are_finite() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let frames: Vec<Tensor> = (0..3).map(|_| gaussian((4, 4, 1), &mut rng)).collect();
    let seq = LatentSequence::new(frames, 0).unwrap();
    let field = MotionField::new(1.0, Offset::new(1.0, 1.0), 3, WarpMode::WrapInteger).unwrap();
    let r = zsvid::harness::metrics::consistency_metrics(&seq, &field, None, 4, "x");
    assert!(r.inter_frame_mse.is_finite() && r.inter_frame_mse >= 0.0);
    assert!(r.warped_inconsistency.is_finite() && r.warped_inconsistency >= 0.0);
}
