use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

use satsynth_cli::commands;
use satsynth_cli::config::{HarnessConfig, Scale};
use satsynth_cli::experiments::ExperimentKind;
use satsynth_data::LatentMode;

#[derive(Parser)]
#[command(
    name = "satsynth",
    about = "Mask-conditional synthetic satellite imagery: training, synthesis, evaluation, and experiment sweeps"
)]
struct Cli {
    /// TOML configuration overriding the selected scale profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; every stage derives its streams from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "runs/out")]
    out: PathBuf,
    /// Configuration profile.
    #[arg(long, global = true, value_enum, default_value_t = Scale::Desk)]
    scale: Scale,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a directory of tile containers and write split manifests.
    Ingest {
        /// Directory holding one subdirectory per tile.
        #[arg(long)]
        tiles: PathBuf,
    },
    /// Generate the procedural toy dataset.
    MakeToy,
    /// Train the mask-conditional generator on a manifest.
    TrainUpstream {
        #[arg(long)]
        manifest: PathBuf,
        /// Diversity weight; defaults to the configured value.
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Generate synthetic tiles for every mask in a manifest.
    Synthesize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        masks: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<LatentModeArg>,
        #[arg(long)]
        copies: Option<usize>,
    },
    /// Fréchet distance between two manifests' feature distributions.
    EvalFid {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        synth: PathBuf,
        #[arg(long, value_enum, default_value_t = LatentModeArg::Prior)]
        mode: LatentModeArg,
        /// Checkpoint whose hash annotates the report.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train the downstream segmentation model.
    TrainDownstream {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
    },
    /// Evaluate a segmentation checkpoint on a test manifest.
    EvalSeg {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
    /// Diversity-weight sweep: upstream training, FID in both latent modes,
    /// and downstream mIoU per weight.
    SweepLambda {
        /// Dataset directory (toy data is generated here at desk scale).
        #[arg(long, default_value = "runs/data")]
        data: PathBuf,
    },
    /// Real-synthetic mixing curve over the configured p grid.
    SweepMix {
        #[arg(long, default_value = "runs/data")]
        data: PathBuf,
    },
    /// Substitution and over-sampling table (100% real, N00% synthetic).
    Substitution {
        #[arg(long, default_value = "runs/data")]
        data: PathBuf,
    },
    /// Merge completed experiment CSVs into a markdown report.
    Report {
        /// Directory containing experiment outputs; defaults to --out.
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum LatentModeArg {
    Encoder,
    Prior,
}

impl From<LatentModeArg> for LatentMode {
    fn from(v: LatentModeArg) -> Self {
        match v {
            LatentModeArg::Encoder => LatentMode::Encoder,
            LatentModeArg::Prior => LatentMode::Prior,
        }
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut config = HarnessConfig::load(cli.scale, cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    std::fs::create_dir_all(&cli.out)?;
    match cli.command {
        Command::Ingest { tiles } => {
            let written = commands::cmd_ingest(&tiles, &cli.out)?;
            for path in written {
                println!("wrote {}", path.display());
            }
        }
        Command::MakeToy => commands::cmd_make_toy(&config, &cli.out)?,
        Command::TrainUpstream { manifest, lambda } => {
            commands::cmd_train_upstream(&config, &manifest, lambda, &cli.out)?;
        }
        Command::Synthesize {
            checkpoint,
            masks,
            mode,
            copies,
        } => {
            commands::cmd_synthesize(
                &config,
                &checkpoint,
                &masks,
                mode.map(Into::into),
                copies,
                &cli.out,
            )?;
        }
        Command::EvalFid {
            real,
            synth,
            mode,
            checkpoint,
        } => {
            commands::cmd_eval_fid(
                &config,
                &real,
                &synth,
                mode.into(),
                checkpoint.as_deref(),
                &cli.out,
            )?;
        }
        Command::TrainDownstream { train, val } => {
            commands::cmd_train_downstream(&config, &train, &val, &cli.out)?;
        }
        Command::EvalSeg { checkpoint, test } => {
            commands::cmd_eval_seg(&config, &checkpoint, &test, &cli.out)?;
        }
        Command::SweepLambda { data } => {
            commands::cmd_experiment(ExperimentKind::LambdaSweep, &config, &data, &cli.out)?;
        }
        Command::SweepMix { data } => {
            commands::cmd_experiment(ExperimentKind::MixSweep, &config, &data, &cli.out)?;
        }
        Command::Substitution { data } => {
            commands::cmd_experiment(ExperimentKind::Substitution, &config, &data, &cli.out)?;
        }
        Command::Report { dir } => {
            let dir = dir.unwrap_or_else(|| cli.out.clone());
            commands::cmd_report(&dir, &cli.out)?;
        }
    }
    Ok(())
}
