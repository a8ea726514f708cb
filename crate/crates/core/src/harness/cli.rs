//! Command-line entry point.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use super::config::RunConfig;
use super::io::{read_frames, write_frames, FrameFormat};
use super::metrics::{consistency_metrics, mean_displacement, MetricsReport};
use crate::attention::AttnMode;
use crate::diffusion::{LatentSequence, SequenceSampler};
use crate::error::{Error, Result};
use crate::motion::MotionField;
use crate::pipeline::{ablate, generate_prepared, initial_latents, prepare, report, AblationTable};

#[derive(Debug, Parser)]
#[command(name = "zsvid", version, about = "Zero-shot video sampling over toy diffusion denoisers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a frame sequence and its metrics.
    Generate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value_t = FormatArg::Pgm)]
        format: FormatArg,
    },
    /// Run the motion x cross-attention grid and print its metrics table.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Sample frame 1, invert it with DDIM, resample, and report the error.
    Invert {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score an existing directory of frame_NNN.pgm files.
    Metrics {
        dir: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AttnArg {
    #[value(name = "self")]
    SelfAttn,
    Cross,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Pgm,
    Png,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON config with keys mirroring these flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    lambda: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    delta_x: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    delta_y: Option<f64>,
    #[arg(long)]
    dt: Option<usize>,
    #[arg(long)]
    t_start: Option<usize>,
    #[arg(long)]
    t_mid: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    smooth_alpha: Option<f64>,
    #[arg(long, value_enum)]
    attn: Option<AttnArg>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let base = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let flags = RunConfig {
            seed: self.seed,
            frames: self.frames,
            lambda: self.lambda,
            delta_x: self.delta_x,
            delta_y: self.delta_y,
            dt: self.dt,
            t_start: self.t_start,
            t_mid: self.t_mid,
            smooth_alpha: self.smooth_alpha,
            attn: self.attn.map(|a| match a {
                AttnArg::SelfAttn => AttnMode::PerFrameSelf,
                AttnArg::Cross => AttnMode::CrossFrameFirst,
            }),
            steps: self.steps,
            ..Default::default()
        };
        Ok(base.overlay(&flags))
    }
}

/// Contents of `metrics.json`. Every field is always present.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsFile {
    pub seed: u64,
    pub config_hash: String,
    pub frames: usize,
    pub inter_frame_mse: f64,
    pub warped_inconsistency: f64,
    pub mean_displacement: f64,
    pub nearest_mode_distance: Vec<f64>,
}

impl MetricsFile {
    fn new(report: MetricsReport, frames: &LatentSequence) -> Self {
        Self {
            seed: report.seed,
            config_hash: report.config_hash,
            frames: frames.len(),
            inter_frame_mse: report.inter_frame_mse,
            warped_inconsistency: report.warped_inconsistency,
            mean_displacement: mean_displacement(frames.frames()),
            nearest_mode_distance: report.nearest_mode_distance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InversionReport {
    pub seed: u64,
    pub config_hash: String,
    pub steps: usize,
    pub t_start: usize,
    /// `||x0' - x0|| / ||x0||` after invert-then-sample.
    pub relative_error: f64,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn print_table(table: &AblationTable) {
    println!(
        "{:<14} {:>6} {:>6} {:>16} {:>20}",
        "variant", "motion", "cross", "inter_frame_mse", "warped_inconsistency"
    );
    for r in &table.rows {
        println!(
            "{:<14} {:>6} {:>6} {:>16.6e} {:>20.6e}",
            r.variant, r.motion, r.cross_attention, r.metrics.inter_frame_mse, r.metrics.warped_inconsistency
        );
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { run, format } => {
            let out = run.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            let config = run.resolve()?.to_generation()?;
            let p = prepare(&config)?;
            let gen = generate_prepared(&p)?;
            let format = match format {
                FormatArg::Pgm => FrameFormat::Pgm,
                FormatArg::Png => FrameFormat::Png,
            };
            let files = write_frames(gen.frames.frames(), &out, format)?;
            let metrics = MetricsFile::new(report(&p, &gen), &gen.frames);
            write_json(&out.join("metrics.json"), &metrics)?;
            write_json(&out.join("trace.json"), &gen.trace)?;
            println!("wrote {} frames to {}", files.len(), out.display());
        }
        Command::Ablate { run } => {
            let config = run.resolve()?.to_generation()?;
            let table = ablate(&config)?;
            print_table(&table);
            if let Some(out) = &run.out {
                write_json(&out.join("ablation.json"), &table)?;
            }
        }
        Command::Invert { run } => {
            let config = run.resolve()?.to_generation()?;
            let p = prepare(&config)?;
            let x1 = initial_latents(&p)?.frame_latent(0);
            let sampler = SequenceSampler::new(p.denoiser.as_ref(), &p.schedule)
                .with_cond(config.cond)
                .with_mode(config.attn);
            let x0 = sampler.sample(LatentSequence::from_latent(x1), &p.grid)?;
            let up: Vec<usize> = p.grid.iter().rev().copied().collect();
            let noised = sampler.invert(x0.clone(), &up)?;
            let back = sampler.sample(noised, &p.grid)?;
            let (a, b) = (x0.frame(0), back.frame(0));
            let num = (a - b).iter().map(|v| v * v).sum::<f64>().sqrt();
            let den = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            let rep = InversionReport {
                seed: config.seed,
                config_hash: config.hash(),
                steps: config.steps,
                t_start: config.t_start,
                relative_error: if den > 0.0 { num / den } else { num },
            };
            println!("{}", serde_json::to_string_pretty(&rep).expect("serializable"));
            if let Some(out) = &run.out {
                write_json(&out.join("invert.json"), &rep)?;
            }
        }
        Command::Metrics { dir, run } => {
            let config = run.resolve()?.to_generation()?;
            let frames = read_frames(&dir)?;
            let seq = LatentSequence::new(frames, 0).map_err(|e| Error::Config(e.to_string()))?;
            let field = MotionField::new(config.lambda, config.delta, seq.len(), config.warp)?;
            let rep = consistency_metrics(&seq, &field, None, config.seed, config.hash());
            let metrics = MetricsFile::new(rep, &seq);
            println!("{}", serde_json::to_string_pretty(&metrics).expect("serializable"));
            if let Some(out) = &run.out {
                write_json(&out.join("metrics.json"), &metrics)?;
            }
        }
    }
    Ok(())
}

/// Parses `argv` and resolves the run configuration without running
/// anything. Usage errors come back as [`Error::Config`].
pub fn parse_config<I, T>(argv: I) -> Result<crate::pipeline::GenerationConfig>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| Error::Config(e.to_string()))?;
    let run = match &cli.command {
        Command::Generate { run, .. }
        | Command::Ablate { run }
        | Command::Invert { run }
        | Command::Metrics { run, .. } => run,
    };
    run.resolve()?.to_generation()
}

/// Parses `argv` (including the program name) and runs the subcommand.
/// Returns 0 on success, 2 for usage or configuration errors, 1 otherwise.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                2
            } else {
                1
            }
        }
    }
}
