//! Command-line front end: argument parsing, run configuration and the
//! subcommands that chain the library stages and write artifacts.
//!
//! Every subcommand is deterministic given its inputs and seed. Artifacts
//! never contain timestamps or wall-clock durations.

mod commands;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

pub use commands::{
    cmd_eval, cmd_gradcheck, cmd_reconstruct, cmd_render, cmd_synth, EvalReport, ReconstructSummary,
};

use crate::error::Error;
use crate::evaluation::{DEFAULT_SAMPLES, DEFAULT_TAU};
use crate::fit::{FitConfig, LearningRates, ReconstructConfig};
use crate::losses::{LossWeights, SamplingConfig};
use crate::meshing::{Preset, TsdfConfig};
use crate::scene::{SceneKind, TextureKind};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Error,
    },
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    /// 2 for unreadable or malformed inputs, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Stage { source, .. } => match source {
                Error::Io { .. }
                | Error::Format { .. }
                | Error::Invalid { .. }
                | Error::ShapeMismatch(_)
                | Error::NonDivisibleSize { .. } => 2,
                _ => 1,
            },
            CliError::Verification(_) => 1,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError>;
}

impl<T> StageExt<T> for crate::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Stage { stage, source })
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "sparse-surfel",
    version,
    about = "Two-view surfel reconstruction and TSDF meshing"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic scene into an input bundle.
    Synth(SynthArgs),
    /// Reconstruct splats and a mesh from a camera bundle.
    Reconstruct(ReconstructArgs),
    /// Score a predicted mesh against ground truth.
    Eval(EvalArgs),
    /// Finite-difference check of every analytic gradient.
    Gradcheck(GradcheckArgs),
    /// Render a splat field at one camera.
    Render(RenderArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Scene kind: textured_plane, box_room or sphere_room.
    #[arg(long, default_value = "box_room")]
    pub scene: SceneKind,
    /// Scene dimensions; meaning depends on the kind.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_values_t = [4.0, 3.0, 2.5])]
    pub dims: Vec<f64>,
    /// Full scene description as JSON; overrides --scene, --dims and the texture flags.
    #[arg(long)]
    pub scene_json: Option<PathBuf>,
    #[arg(long, default_value = "value_noise")]
    pub texture: TextureArg,
    #[arg(long, default_value_t = 2.0)]
    pub texture_frequency: f64,
    #[arg(long, default_value_t = 3)]
    pub views: usize,
    #[arg(long, default_value_t = 128)]
    pub width: usize,
    #[arg(long, default_value_t = 128)]
    pub height: usize,
    /// Focal length in pixels (defaults to 0.8 * width).
    #[arg(long)]
    pub focal: Option<f64>,
    #[arg(long, default_value_t = 0.3)]
    pub baseline: f64,
    /// Angular noise in degrees added to the pseudo ground-truth normals.
    #[arg(long, default_value_t = 5.0)]
    pub normal_noise: f64,
    /// Supplies near and far.
    #[arg(long, default_value = "scannet")]
    pub preset: Preset,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum TextureArg {
    ValueNoise,
    Stripes,
    NoiseStripes,
}

impl From<TextureArg> for TextureKind {
    fn from(t: TextureArg) -> Self {
        match t {
            TextureArg::ValueNoise => TextureKind::ValueNoise,
            TextureArg::Stripes => TextureKind::Stripes,
            TextureArg::NoiseStripes => TextureKind::NoiseStripes,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ReconstructArgs {
    /// Camera list of the input bundle; paths inside are relative to it.
    #[arg(long)]
    pub cameras: PathBuf,
    /// Ground-truth mesh; when given, metrics/eval.json is written too.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long, default_value = "scannet")]
    pub preset: Preset,
    #[arg(long = "depth-bins", default_value_t = 128)]
    pub depth_bins: usize,
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    /// Multiplier applied to every per-class learning rate.
    #[arg(long, default_value_t = 1.0)]
    pub lr: f64,
    #[arg(long)]
    pub w1: Option<f64>,
    #[arg(long)]
    pub w2: Option<f64>,
    #[arg(long)]
    pub w3: Option<f64>,
    #[arg(long)]
    pub w11: Option<f64>,
    #[arg(long)]
    pub w12: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long = "sample-frac")]
    pub sample_frac: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    pub tau: f64,
    #[arg(long)]
    pub voxel: Option<f64>,
    #[arg(long)]
    pub trunc: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Predicted mesh (.ply or .obj).
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth mesh (.ply or .obj).
    #[arg(long)]
    pub gt: PathBuf,
    /// Input cameras used for culling; GT depth/normal maps listed there are
    /// compared with the maps in --pred-maps.
    #[arg(long)]
    pub cameras: PathBuf,
    /// Directory holding depth_<i>.pfm / normal_<i>.pfm predictions.
    #[arg(long)]
    pub pred_maps: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    pub tau: f64,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Metrics JSON path; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    #[arg(long, default_value_t = 8)]
    pub image_size: usize,
    #[arg(long, default_value_t = 5)]
    pub splats: usize,
    #[arg(long, default_value_t = 24)]
    pub points: usize,
}

#[derive(Debug, Clone, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub splats: PathBuf,
    #[arg(long)]
    pub cameras: PathBuf,
    /// Index into the camera list.
    #[arg(long, default_value_t = 0)]
    pub view: usize,
    /// Writes rgb.png, depth.pfm and normal.pfm here.
    #[arg(long)]
    pub out: PathBuf,
}

/// Fully resolved settings of a reconstruction, written to metrics/run.json.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub cameras: PathBuf,
    pub gt: Option<PathBuf>,
    pub preset: Preset,
    pub reconstruct: ReconstructConfig,
    pub fit: FitConfig,
    pub tsdf: TsdfConfig,
    pub tau: f64,
    pub samples: usize,
    pub seed: u64,
    /// Not serialized, so runs that differ only in their output directory
    /// write identical files.
    #[serde(skip)]
    pub out: PathBuf,
}

impl RunConfig {
    /// Preset values first, explicit flags on top.
    pub fn from_args(a: &ReconstructArgs) -> Self {
        let mut tsdf = TsdfConfig::from_preset(a.preset);
        if let Some(v) = a.voxel {
            tsdf.voxel_size = v;
        }
        if let Some(t) = a.trunc {
            tsdf.truncation = t;
        }
        let d = LossWeights::default();
        let weights = LossWeights {
            w1: a.w1.unwrap_or(d.w1),
            w2: a.w2.unwrap_or(d.w2),
            w3: a.w3.unwrap_or(d.w3),
            w11: a.w11.unwrap_or(d.w11),
            w12: a.w12.unwrap_or(d.w12),
        };
        let s = SamplingConfig::default();
        let fit = FitConfig {
            steps: a.steps,
            lr: LearningRates::default().scaled(a.lr),
            weights,
            sampling: SamplingConfig {
                beta: a.beta.unwrap_or(s.beta),
                fraction: a.sample_frac.unwrap_or(s.fraction),
            },
            seed: a.seed,
            ..FitConfig::default()
        };
        Self {
            cameras: a.cameras.clone(),
            gt: a.gt.clone(),
            preset: a.preset,
            reconstruct: ReconstructConfig {
                depth_bins: a.depth_bins,
                ..ReconstructConfig::default()
            },
            fit,
            tsdf,
            tau: a.tau,
            samples: a.samples,
            seed: a.seed,
            out: a.out.clone(),
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.reconstruct.depth_bins < 2 {
            return Err(Error::invalid(
                "depth-bins",
                format!("need at least 2, got {}", self.reconstruct.depth_bins),
            ));
        }
        self.fit.validate()?;
        self.tsdf.validate()?;
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid(
                "tau",
                format!("must be positive, got {}", self.tau),
            ));
        }
        if self.samples == 0 {
            return Err(Error::invalid("samples", "must be positive"));
        }
        Ok(())
    }
}

/// Runs one parsed command line.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a).map(|_| ()),
        Command::Reconstruct(a) => cmd_reconstruct(&a).map(|_| ()),
        Command::Eval(a) => {
            let report = cmd_eval(&a)?;
            if a.out.is_none() {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&report).expect("report serializes")
                );
            }
            Ok(())
        }
        Command::Gradcheck(a) => {
            let report = cmd_gradcheck(&a);
            for c in &report.classes {
                println!(
                    "{:<26} {} worst rel error {:.3e} over {} instances",
                    c.class.name(),
                    if c.passed() { "ok  " } else { "FAIL" },
                    c.worst_rel_error,
                    c.instances
                );
            }
            if report.passed() {
                Ok(())
            } else {
                let names: Vec<&str> = report.failures().iter().map(|c| c.name()).collect();
                Err(CliError::Verification(format!(
                    "gradient mismatch in {}",
                    names.join(", ")
                )))
            }
        }
        Command::Render(a) => cmd_render(&a).map(|_| ()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_presets() {
        let cli = Cli::try_parse_from([
            "sparse-surfel",
            "reconstruct",
            "--cameras",
            "c.json",
            "--out",
            "o",
            "--preset",
            "re10k",
            "--trunc",
            "0.2",
            "--w2",
            "0",
            "--lr",
            "2",
        ])
        .unwrap();
        let Command::Reconstruct(a) = cli.command else {
            panic!("wrong subcommand")
        };
        let cfg = RunConfig::from_args(&a);
        assert_eq!(cfg.tsdf.voxel_size, 0.005);
        assert_eq!(cfg.tsdf.truncation, 0.2);
        assert_eq!(cfg.fit.weights.w2, 0.0);
        assert_eq!(cfg.fit.weights.w1, LossWeights::default().w1);
        assert_eq!(cfg.fit.lr, LearningRates::default().scaled(2.0));
        assert_eq!(cfg.reconstruct.depth_bins, 128);
        cfg.validate().unwrap();
    }

    #[test]
    fn bad_values_fail_validation() {
        let parse = |extra: &[&str]| {
            let mut argv = vec![
                "sparse-surfel",
                "reconstruct",
                "--cameras",
                "c.json",
                "--out",
                "o",
            ];
            argv.extend_from_slice(extra);
            let Command::Reconstruct(a) = Cli::try_parse_from(argv).unwrap().command else {
                unreachable!()
            };
            RunConfig::from_args(&a).validate()
        };
        assert!(parse(&["--depth-bins", "1"]).is_err());
        assert!(parse(&["--beta", "1.5"]).is_err());
        assert!(parse(&["--voxel", "0"]).is_err());
        assert!(parse(&["--lr", "0"]).is_err());
        assert!(Cli::try_parse_from(["sparse-surfel", "reconstruct", "--preset", "kitti"]).is_err());
    }

    #[test]
    fn exit_codes() {
        let schema = CliError::Stage {
            stage: "load",
            source: Error::format("c.json", "bad"),
        };
        assert_eq!(schema.exit_code(), 2);
        let runtime = CliError::Stage {
            stage: "fit",
            source: Error::EmptyMesh,
        };
        assert_eq!(runtime.exit_code(), 1);
        let culled = CliError::Stage {
            stage: "eval",
            source: Error::EmptyAfterCull("ground truth"),
        };
        assert_eq!(culled.exit_code(), 1);
        assert!(culled.to_string().contains("empty after frustum culling"));
    }
}
