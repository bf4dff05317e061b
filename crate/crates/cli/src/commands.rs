use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ganblend_core::checkpoint::{self, Checkpoint};
use ganblend_core::projector::{self, LatentFile, LatentSpace, ProjectionConfig};
use ganblend_core::sampling::{render_grid_png, SampleGridSpec};
use ganblend_core::tensor::{decode_png, encode_png};
use ganblend_core::topology::partition;
use ganblend_core::{blend_checkpoints, init_random, synth_transfer, BlendSchedule, GeneratorConfig, MappingPolicy, Source};

pub const DEFAULT_PORT: u16 = 7860;

#[derive(Debug, Parser)]
#[command(name = "ganblend", version, about = "Blend style-based generators band by band")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a randomly initialized base model.
    InitBase {
        /// Generator config as JSON (file path or inline); the desk config by default.
        #[arg(long)]
        config: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Write a synthetic fine-tuned copy of a base model.
    MakeTransfer {
        #[arg(long)]
        base: PathBuf,
        /// Perturbation size relative to each tensor's spread.
        #[arg(long, default_value_t = 0.5)]
        strength: f32,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Print the band layout of a checkpoint.
    Inspect { path: PathBuf },
    /// Interpolate two checkpoints with a per-band schedule.
    Blend(BlendArgs),
    /// Render a grid of uncurated samples.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 24)]
        count: usize,
        #[arg(long, default_value_t = 6)]
        columns: usize,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Recover a latent that reproduces a target image.
    Project {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Latent JSON output.
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        reconstruction: Option<PathBuf>,
        #[command(flatten)]
        projection: ProjectionArgs,
    },
    /// Project into the base model and render the latent with the blend.
    Toonify {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        blended: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        reconstruction: Option<PathBuf>,
        #[arg(long)]
        latent: Option<PathBuf>,
        #[command(flatten)]
        projection: ProjectionArgs,
    },
    /// Serve the HTTP API on the loopback interface.
    Serve {
        #[arg(long, env = "GANBLEND_PORT", default_value_t = DEFAULT_PORT)]
        port: u16,
        /// Checkpoints to register at startup.
        #[arg(long = "model")]
        models: Vec<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LowFrom {
    Base,
    Transfer,
}

impl From<LowFrom> for Source {
    fn from(v: LowFrom) -> Self {
        match v {
            LowFrom::Base => Source::Base,
            LowFrom::Transfer => Source::Transfer,
        }
    }
}

#[derive(Debug, Args)]
pub struct BlendArgs {
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub transfer: PathBuf,
    /// Take bands up to this resolution from `--low-from`, the rest from the other model.
    #[arg(long, conflicts_with = "schedule")]
    pub swap_at: Option<u32>,
    #[arg(long, value_enum, default_value_t = LowFrom::Transfer)]
    pub low_from: LowFrom,
    /// Schedule JSON (file path or inline).
    #[arg(long)]
    pub schedule: Option<String>,
    /// `base`, `transfer`, or a mapping alpha in [0, 1].
    #[arg(long, default_value = "base", value_parser = parse_mapping)]
    pub mapping: MappingPolicy,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args, Default)]
pub struct ProjectionArgs {
    /// Full projection config as JSON (file path or inline); flags override it.
    #[arg(long = "projection-config")]
    pub config: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long, value_enum)]
    pub space: Option<SpaceArg>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SpaceArg {
    W,
    Z,
}

impl ProjectionArgs {
    pub fn resolve(&self) -> Result<ProjectionConfig> {
        let mut cfg: ProjectionConfig = match &self.config {
            Some(src) => serde_json::from_str(&inline_or_file(src)?).context("projection config")?,
            None => ProjectionConfig::default(),
        };
        if let Some(v) = self.steps {
            cfg.steps = v;
        }
        if let Some(v) = self.lr {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.space {
            cfg.space = match v {
                SpaceArg::W => LatentSpace::W,
                SpaceArg::Z => LatentSpace::Z,
            };
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn parse_mapping(s: &str) -> Result<MappingPolicy, String> {
    let policy = match s {
        "base" => MappingPolicy::Base,
        "transfer" => MappingPolicy::Transfer,
        other => MappingPolicy::Alpha(
            other
                .parse()
                .map_err(|_| format!("expected base, transfer or a number, got `{other}`"))?,
        ),
    };
    policy.validate().map_err(|e| e.to_string())?;
    Ok(policy)
}

/// JSON given inline (starting with `{`) or as a path to a file.
fn inline_or_file(src: &str) -> Result<String> {
    if src.trim_start().starts_with('{') {
        Ok(src.to_owned())
    } else {
        std::fs::read_to_string(src).with_context(|| format!("reading {src}"))
    }
}

fn load(path: &Path) -> Result<Checkpoint> {
    Ok(checkpoint::load(path)?)
}

fn save(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    Ok(checkpoint::save(ckpt, path)?)
}

pub fn blend_schedule(args: &BlendArgs, config: &GeneratorConfig) -> Result<BlendSchedule> {
    let schedule = match (&args.schedule, args.swap_at) {
        (Some(src), _) => serde_json::from_str(&inline_or_file(src)?).context("schedule")?,
        (None, Some(r)) => BlendSchedule::swap(r, args.low_from.into()),
        (None, None) => bail!("give --swap-at or --schedule"),
    };
    schedule.validate(config)?;
    Ok(schedule)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::InitBase { config, seed, output } => {
            let config = match config {
                Some(src) => GeneratorConfig::from_json(&inline_or_file(&src)?)?,
                None => GeneratorConfig::desk(),
            };
            config.validate()?;
            save(&init_random(&config, seed), &output)
        }
        Command::MakeTransfer {
            base,
            strength,
            seed,
            output,
        } => save(&synth_transfer(&load(&base)?, strength, seed)?, &output),
        Command::Inspect { path } => {
            print!("{}", inspect_table(&load(&path)?)?);
            Ok(())
        }
        Command::Blend(args) => {
            let (base, transfer) = (load(&args.base)?, load(&args.transfer)?);
            let schedule = blend_schedule(&args, base.meta())?;
            let out = blend_checkpoints(&base, &transfer, &schedule, args.mapping)?;
            save(&out, &args.output)
        }
        Command::Sample {
            model,
            seed,
            count,
            columns,
            output,
        } => {
            let spec = SampleGridSpec { seed, count, columns };
            let png = render_grid_png(&load(&model)?, &spec, Default::default())?;
            std::fs::write(&output, png).with_context(|| format!("writing {}", output.display()))
        }
        Command::Project {
            model,
            target,
            output,
            reconstruction,
            projection,
        } => {
            let cfg = projection.resolve()?;
            let result = projector::project(&load(&model)?, &decode_png(&target)?, &cfg)?;
            write_latent(&output, &LatentFile::from_result(&result, None))?;
            if let Some(path) = reconstruction {
                encode_png(&result.reconstruction, path)?;
            }
            println!("final mse {:.6e}", result.final_loss);
            Ok(())
        }
        Command::Toonify {
            base,
            blended,
            target,
            output,
            reconstruction,
            latent,
            projection,
        } => {
            let cfg = projection.resolve()?;
            let out = projector::toonify(&load(&base)?, &load(&blended)?, &decode_png(&target)?, &cfg)?;
            encode_png(&out.image, &output)?;
            if let Some(path) = reconstruction {
                encode_png(&out.projection.reconstruction, path)?;
            }
            if let Some(path) = latent {
                write_latent(&path, &LatentFile::from_result(&out.projection, None))?;
            }
            println!("final mse {:.6e}", out.projection.final_loss);
            Ok(())
        }
        Command::Serve { port, models } => crate::service::serve(port, &models),
    }
}

fn write_latent(path: &Path, latent: &LatentFile) -> Result<()> {
    let json = serde_json::to_string_pretty(latent)?;
    std::fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))
}

/// One row per band plus the mapping network: tensor and scalar counts.
pub fn inspect_table(ckpt: &Checkpoint) -> Result<String> {
    let meta = ckpt.meta();
    let part = partition(ckpt)?;
    let numel = |names: &[String]| -> usize { names.iter().map(|n| ckpt.params()[n].numel()).sum() };
    let mut out = format!(
        "latent_dim {}  style_dim {}  mapping_layers {}  max_resolution {}\n",
        meta.latent_dim, meta.style_dim, meta.mapping_layers, meta.max_resolution
    );
    out += &format!("{:<10} {:>8} {:>8} {:>10}\n", "band", "channels", "tensors", "scalars");
    out += &format!("{:<10} {:>8} {:>8} {:>10}\n", "mapping", "-", part.mapping.len(), numel(&part.mapping));
    for (r, names) in &part.bands {
        let channels = meta.channels(*r).unwrap_or(0);
        out += &format!("{:<10} {:>8} {:>8} {:>10}\n", r, channels, names.len(), numel(names));
    }
    out += &format!("{:<10} {:>8} {:>8} {:>10}\n", "total", "", ckpt.len(), numel(&part.mapping) + part.bands.values().map(|n| numel(n)).sum::<usize>());
    Ok(out)
}
