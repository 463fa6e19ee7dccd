use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use objtok::commands;
use objtok::config::DataSpec;

#[derive(Parser)]
#[command(name = "objtok", version, about = "Object-centric video tokens on synthetic scenes")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthetic scene generation.
    Synth {
        #[command(subcommand)]
        cmd: SynthCmd,
    },
    /// Detect, segment and track.
    Pipeline {
        #[command(subcommand)]
        cmd: PipelineCmd,
    },
    /// Patch features for sampled frames.
    Featurize {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        t_v: usize,
    },
    /// Object and context tokens from masks, features and a checkpoint.
    Tokenize {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        masks: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// Checkpoint stem, e.g. `run/model`.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// One training stage.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = ["1", "2", "3", "refer"])]
        stage: String,
        /// Checkpoint stem to start from.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Exact-match accuracy on the config's eval dataset.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// No-object baseline against every projector variant.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Attention over object slots.
    AttnReport {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum SynthCmd {
    Gen {
        #[arg(long)]
        scenes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "free", value_parser = ["free", "quadrants"])]
        layout: String,
        #[arg(long, default_value_t = 16)]
        frames: usize,
        #[arg(long)]
        min_objects: Option<usize>,
        #[arg(long)]
        max_objects: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum PipelineCmd {
    Run {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        tag_frames: usize,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let run = match cli.cmd {
        Cmd::Synth {
            cmd:
                SynthCmd::Gen {
                    scenes,
                    seed,
                    layout,
                    frames,
                    min_objects,
                    max_objects,
                    out,
                },
        } => {
            let spec = DataSpec {
                scenes,
                seed,
                layout,
                frames,
                min_objects,
                max_objects,
                tasks: Vec::new(),
                t_v: 8,
                max_object_tokens: 64,
            };
            commands::synth_gen(&spec, &out)
        }
        Cmd::Pipeline {
            cmd: PipelineCmd::Run {
                manifest,
                out,
                tag_frames,
            },
        } => commands::pipeline_run(&manifest, &out, tag_frames),
        Cmd::Featurize { manifest, out, t_v } => commands::featurize(&manifest, &out, t_v),
        Cmd::Tokenize {
            manifest,
            masks,
            features,
            checkpoint,
            out,
        } => commands::tokenize(&manifest, &masks, &features, &checkpoint, &out),
        Cmd::Train {
            config,
            stage,
            init,
            out,
        } => commands::train(&config, &stage, init.as_deref(), &out),
        Cmd::Eval {
            config,
            checkpoint,
            out,
        } => commands::eval(&config, &checkpoint, &out),
        Cmd::Ablate { config, out } => commands::ablate(&config, &out),
        Cmd::AttnReport {
            config,
            checkpoint,
            out,
        } => commands::attn_report(&config, &checkpoint, &out),
    }
    .context("command failed")?;
    log::info!("{}: {} outputs", run.command, run.outputs.len());
    Ok(())
}
