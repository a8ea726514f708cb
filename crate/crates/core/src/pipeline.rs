//! End-to-end video generation and the motion x cross-attention ablation.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attention::AttnMode;
use crate::denoisers::{
    build_toy_attention_denoiser, Conditioning, Denoiser, MixtureModel, MixtureSequenceDenoiser,
    MixtureSpec, ToyConfig,
};
use crate::diffusion::{BetaKind, Latent, LatentSequence, NoiseSchedule, SequenceSampler, Tensor, TimeWindow};
use crate::error::{Error, Result};
use crate::harness::metrics::{consistency_metrics, warped_inconsistency, MetricsReport};
use crate::motion::{motion_latents, MotionField, Offset, WarpMode};
use crate::rng::{Purpose, SeedStream};
use crate::smoothing::{smooth_sequence, synthetic_mask_provider, ForegroundMask, SmoothingParams, SmoothingWhen, SyntheticMask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub train_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub kind: BetaKind,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            train_steps: crate::diffusion::DEFAULT_TRAIN_STEPS,
            beta_start: crate::diffusion::DEFAULT_BETA_START,
            beta_end: crate::diffusion::DEFAULT_BETA_END,
            kind: BetaKind::ScaledLinear,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::build(self.train_steps, self.beta_start, self.beta_end, self.kind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DenoiserConfig {
    /// Fixed random attention network; weights drawn from `seed`.
    Toy { seed: u64, config: ToyConfig },
    /// Exact point-mass mixture oracle, one mixture per conditioning label.
    /// `None` selects [`default_mixture`].
    Mixture { mixtures: Option<Vec<MixtureSpec>> },
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig::Toy {
            seed: 0,
            config: ToyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source")]
pub enum MaskSource {
    Synthetic(SyntheticMask),
    Provided { masks: Vec<ForegroundMask> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    pub params: SmoothingParams,
    pub masks: MaskSource,
}

/// Everything one generation run depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub frames: usize,
    /// Latent `(height, width, channels)`.
    pub shape: (usize, usize, usize),
    pub schedule: ScheduleConfig,
    /// `T`
    pub t_start: usize,
    /// `T'`
    pub t_mid: usize,
    pub lambda: f64,
    pub delta: Offset,
    pub warp: WarpMode,
    /// When false, frames `2..m` start from fresh i.i.d. noise.
    pub motion: bool,
    pub attn: AttnMode,
    pub smoothing: Option<SmoothingConfig>,
    pub denoiser: DenoiserConfig,
    pub cond: Conditioning,
    /// DDIM steps from `T` to 0.
    pub steps: usize,
    pub seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            frames: 8,
            shape: (16, 16, 2),
            schedule: ScheduleConfig::default(),
            t_start: 941,
            t_mid: 881,
            lambda: 1.0,
            delta: Offset::new(1.0, 1.0),
            warp: WarpMode::WrapInteger,
            motion: true,
            attn: AttnMode::CrossFrameFirst,
            smoothing: None,
            denoiser: DenoiserConfig::default(),
            cond: Conditioning::NONE,
            steps: 50,
            seed: 0,
        }
    }
}

impl GenerationConfig {
    /// First 16 hex digits of the SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn field(&self) -> Result<MotionField> {
        MotionField::new(self.lambda, self.delta, self.frames, self.warp)
    }
}

/// Deterministic default means: three low-frequency cosine patterns.
pub fn default_mixture(shape: (usize, usize, usize)) -> Result<MixtureModel> {
    let (h, w, _) = shape;
    let freqs = [(1.0, 0.0), (0.0, 1.0), (1.0, 1.0)];
    let means = freqs
        .iter()
        .map(|&(fr, fc)| {
            Tensor::from_shape_fn(shape, |(i, j, c)| {
                let phase = 2.0 * std::f64::consts::PI * (fr * i as f64 / h as f64 + fc * j as f64 / w as f64);
                (phase + 0.5 * c as f64).cos()
            })
        })
        .collect();
    MixtureModel::uniform(means)
}

/// A validated, ready-to-run generation setup.
pub struct Prepared {
    pub config: GenerationConfig,
    pub schedule: NoiseSchedule,
    pub window: TimeWindow,
    pub field: MotionField,
    pub grid: Vec<usize>,
    pub denoiser: Box<dyn Denoiser>,
    /// The mixture selected by the conditioning label, when the denoiser is
    /// the oracle.
    pub mixture: Option<MixtureModel>,
}

pub fn prepare(config: &GenerationConfig) -> Result<Prepared> {
    let schedule = config.schedule.build()?;
    let window = TimeWindow::new(config.t_start, config.t_mid, &schedule)?;
    let field = config.field()?;
    if config.steps == 0 {
        return Err(Error::param("need at least one DDIM step"));
    }
    let grid = schedule.uniform_grid(config.t_start, config.steps)?;
    let (h, w, c) = config.shape;
    if h == 0 || w == 0 || c == 0 {
        return Err(Error::param("latent shape must be non-empty"));
    }
    if let Some(s) = &config.smoothing {
        if let MaskSource::Provided { masks } = &s.masks {
            if masks.len() != config.frames {
                return Err(Error::param(format!(
                    "{} masks provided for {} frames",
                    masks.len(),
                    config.frames
                )));
            }
            if let Some(m) = masks.iter().find(|m| m.shape() != (h, w)) {
                return Err(Error::Shape {
                    expected: vec![h, w],
                    actual: vec![m.shape().0, m.shape().1],
                });
            }
        }
    }
    let (denoiser, mixture): (Box<dyn Denoiser>, Option<MixtureModel>) = match &config.denoiser {
        DenoiserConfig::Toy { seed, config: toy } => (
            Box::new(build_toy_attention_denoiser(*seed, config.shape, *toy, schedule.clone())?),
            None,
        ),
        DenoiserConfig::Mixture { mixtures } => {
            let models = match mixtures {
                Some(specs) => specs.iter().map(MixtureModel::from_spec).collect::<Result<Vec<_>>>()?,
                None => vec![default_mixture(config.shape)?],
            };
            if let Some(m) = models.iter().find(|m| m.shape() != config.shape) {
                return Err(crate::diffusion::shape_error(config.shape, m.shape()));
            }
            let d = MixtureSequenceDenoiser::new(models, schedule.clone())?;
            let selected = d.mixture(config.cond)?.clone();
            (Box::new(d), Some(selected))
        }
    };
    Ok(Prepared {
        config: config.clone(),
        schedule,
        window,
        field,
        grid,
        denoiser,
        mixture,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// Timestep at which the denoiser was queried.
    pub t: usize,
    pub frame: usize,
    pub latent_norm: f64,
    pub eps_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub t: usize,
    pub t_next: usize,
    /// Warped inconsistency of the latents entering the step.
    pub warped_inconsistency: f64,
    pub smoothed: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    pub steps: Vec<StepSummary>,
}

#[derive(Debug, Clone)]
pub struct Generation {
    pub frames: LatentSequence,
    /// The sequence DDIM started from, at `T`.
    pub initial: LatentSequence,
    pub trace: Trace,
    pub masks: Option<Vec<ForegroundMask>>,
}

fn l2(t: &Tensor) -> f64 {
    t.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Initial latents at `T`: motion-enriched or i.i.d., frame 1 always drawn
/// from the same stream.
pub fn initial_latents(p: &Prepared) -> Result<LatentSequence> {
    let seeds = SeedStream::new(p.config.seed);
    let shape = p.config.shape;
    let x1 = Latent::gaussian(shape, p.window.t_start(), &mut seeds.stream(Purpose::InitialLatent, 0));
    if p.config.motion {
        motion_latents(
            &x1,
            &p.window,
            &p.field,
            p.denoiser.as_ref(),
            &p.schedule,
            p.config.cond,
            p.config.attn,
            &seeds,
        )
        .map_err(|e| e.in_stage("motion latents"))
    } else {
        let mut frames = vec![x1.data];
        frames.extend((1..p.config.frames).map(|k| {
            Latent::gaussian(shape, p.window.t_start(), &mut seeds.stream(Purpose::IidFrames, k as u64)).data
        }));
        LatentSequence::new(frames, p.window.t_start())
    }
}

fn run_ddim(
    p: &Prepared,
    start: LatentSequence,
    smoothing: Option<(&SmoothingParams, &[ForegroundMask])>,
) -> Result<(LatentSequence, Trace)> {
    let mut trace = Trace::default();
    let mut start = start;
    let mut applied = false;
    if let Some((params, masks)) = smoothing {
        if let SmoothingWhen::Once(ts) = params.when() {
            if start.t() <= ts {
                smooth_sequence(&mut start, masks, &p.field, params.alpha())?;
                applied = true;
            }
        }
    }
    let sampler = SequenceSampler::new(p.denoiser.as_ref(), &p.schedule)
        .with_cond(p.config.cond)
        .with_mode(p.config.attn);
    let field = p.field;
    let out = sampler.sample_to(start, &p.grid, 0, |ev| {
        for (k, (x, e)) in ev.input.frames().iter().zip(ev.eps).enumerate() {
            trace.records.push(TraceRecord {
                t: ev.t,
                frame: k,
                latent_norm: l2(x),
                eps_norm: l2(e),
            });
        }
        let mut smoothed = false;
        if let Some((params, masks)) = smoothing {
            let due = match params.when() {
                SmoothingWhen::EveryStep => true,
                SmoothingWhen::Once(ts) => !applied && ev.output.t() <= ts,
            };
            if due {
                smooth_sequence(ev.output, masks, &field, params.alpha())?;
                applied = true;
                smoothed = true;
            }
        }
        trace.steps.push(StepSummary {
            t: ev.t,
            t_next: ev.output.t(),
            warped_inconsistency: warped_inconsistency(ev.input.frames(), &field),
            smoothed,
        });
        Ok(())
    })?;
    Ok((out, trace))
}

/// Generates `m` clean frames: initial latents, joint DDIM from `T` to 0
/// with attention routed per the configured mode, and optional background
/// smoothing. Threshold masks are computed on an unsmoothed first pass.
pub fn generate_video(config: &GenerationConfig) -> Result<Generation> {
    let p = prepare(config)?;
    generate_prepared(&p)
}

pub fn generate_prepared(p: &Prepared) -> Result<Generation> {
    let initial = initial_latents(p)?;
    let Some(smoothing) = &p.config.smoothing else {
        let (frames, trace) = run_ddim(p, initial.clone(), None)?;
        return Ok(Generation {
            frames,
            initial,
            trace,
            masks: None,
        });
    };
    let (h, w, _) = p.config.shape;
    let masks = match &smoothing.masks {
        MaskSource::Provided { masks } => masks.clone(),
        MaskSource::Synthetic(kind @ SyntheticMask::Disk { .. }) => {
            synthetic_mask_provider(kind, (h, w), &p.field, None)?
        }
        MaskSource::Synthetic(kind @ SyntheticMask::Threshold { .. }) => {
            let (draft, _) = run_ddim(p, initial.clone(), None)?;
            synthetic_mask_provider(kind, (h, w), &p.field, Some(draft.frames()))?
        }
    };
    let (frames, trace) = run_ddim(p, initial.clone(), Some((&smoothing.params, &masks)))?;
    Ok(Generation {
        frames,
        initial,
        trace,
        masks: Some(masks),
    })
}

/// Metrics for a finished generation.
pub fn report(p: &Prepared, gen: &Generation) -> MetricsReport {
    consistency_metrics(
        &gen.frames,
        &p.field,
        p.mixture.as_ref(),
        p.config.seed,
        p.config.hash(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub motion: bool,
    pub cross_attention: bool,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant { motion: false, cross_attention: false },
        Variant { motion: true, cross_attention: false },
        Variant { motion: false, cross_attention: true },
        Variant { motion: true, cross_attention: true },
    ];

    pub fn name(&self) -> &'static str {
        match (self.motion, self.cross_attention) {
            (false, false) => "iid+self",
            (true, false) => "motion+self",
            (false, true) => "iid+cross",
            (true, true) => "motion+cross",
        }
    }

    pub fn apply(&self, config: &GenerationConfig) -> GenerationConfig {
        let mut c = config.clone();
        c.motion = self.motion;
        c.attn = if self.cross_attention {
            AttnMode::CrossFrameFirst
        } else {
            AttnMode::PerFrameSelf
        };
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub motion: bool,
    pub cross_attention: bool,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, v: Variant) -> Option<&AblationRow> {
        self.rows
            .iter()
            .find(|r| r.motion == v.motion && r.cross_attention == v.cross_attention)
    }
}

/// Runs the 2x2 grid {motion on/off} x {cross-frame attention on/off} with a
/// shared seed.
pub fn ablate(config: &GenerationConfig) -> Result<AblationTable> {
    let rows = Variant::ALL
        .iter()
        .map(|v| {
            let p = prepare(&v.apply(config))?;
            let gen = generate_prepared(&p).map_err(|e| e.in_stage(v.name()))?;
            Ok(AblationRow {
                variant: v.name().to_string(),
                motion: v.motion,
                cross_attention: v.cross_attention,
                metrics: report(&p, &gen),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationTable { rows })
}
