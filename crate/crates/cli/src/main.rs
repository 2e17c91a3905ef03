//! `diar` — ClusterGAN speaker-diarization experiments from the command line.
//!
//! Exit codes: 0 success, 2 usage/configuration error, 3 data error,
//! 4 numerical divergence.

mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use config::RunConfig;
use diar_core::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "diar", version, about = "ClusterGAN speaker diarization toolkit")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Shared flags; each overrides the same-named config-file key.
#[derive(Args)]
struct Overrides {
    /// Flat key=value config file; flags win over file values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    iterations: Option<usize>,
    #[arg(long, global = true)]
    d_n: Option<usize>,
    #[arg(long, global = true)]
    sigma: Option<f64>,
    #[arg(long, global = true)]
    lambda_gp: Option<f64>,
    /// Adversarial loss weight
    #[arg(long = "a", global = true)]
    weight_adv: Option<f64>,
    /// Cosine recovery loss weight
    #[arg(long = "b", global = true)]
    weight_cos: Option<f64>,
    /// Cluster cross-entropy loss weight
    #[arg(long = "c", global = true)]
    weight_ce: Option<f64>,
    #[arg(long, global = true)]
    num_speakers: Option<usize>,
    #[arg(long, global = true)]
    max_speakers: Option<usize>,
    /// Concatenate length-normalized base embeddings with the latents
    #[arg(long, global = true)]
    fuse: bool,
    /// No-score collar in seconds around reference turn boundaries
    #[arg(long, global = true)]
    collar: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a ClusterGAN on labelled speaker embeddings
    Train {
        /// Embedding file (`dim= count= session=` header, one row per line)
        #[arg(long)]
        embeddings: PathBuf,
        /// One speaker name per line, aligned with the embedding rows
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Diarize sessions: encode, cluster and emit hypothesis RTTM files
    Diarize {
        #[arg(long)]
        checkpoint: PathBuf,
        /// One embedding file per session
        #[arg(long, num_args = 1.., required = true)]
        embeddings: Vec<PathBuf>,
        /// Speech-activity file: `session start end` lines
        #[arg(long)]
        sad: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Score a hypothesis RTTM against a reference RTTM
    Score {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        hypothesis: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Generate a synthetic labelled corpus for end-to-end checks
    Synth {
        #[arg(long, default_value = "synth0")]
        session_id: String,
        #[arg(long, default_value_t = 4)]
        speakers: usize,
        #[arg(long, default_value_t = 200)]
        segments_per_speaker: usize,
        #[arg(long, default_value_t = 512)]
        dim: usize,
        /// Minimum pairwise centroid distance
        #[arg(long, default_value_t = 2.0)]
        separation: f64,
        /// Per-coordinate noise standard deviation
        #[arg(long, default_value_t = 0.05)]
        noise_sigma: f64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Encode embeddings with a trained model and write the latent matrix
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn resolve_config(o: &Overrides) -> diar_core::Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &o.config {
        cfg.apply_file(path)?;
    }
    macro_rules! over {
        ($($field:ident),*) => {
            $(if let Some(v) = o.$field { cfg.$field = v; })*
        };
    }
    over!(
        seed, iterations, d_n, sigma, lambda_gp, weight_adv, weight_cos, weight_ce, max_speakers,
        collar
    );
    if let Some(k) = o.num_speakers {
        cfg.num_speakers = Some(k);
    }
    if o.fuse {
        cfg.fuse = true;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> diar_core::Result<()> {
    let cfg = resolve_config(&cli.overrides)?;
    match &cli.command {
        Command::Train {
            embeddings,
            labels,
            out_dir,
        } => commands::cmd_train(&cfg, embeddings, labels, out_dir),
        Command::Diarize {
            checkpoint,
            embeddings,
            sad,
            out_dir,
        } => commands::cmd_diarize(&cfg, checkpoint, embeddings, sad, out_dir),
        Command::Score {
            reference,
            hypothesis,
            out_dir,
        } => commands::cmd_score(&cfg, reference, hypothesis, out_dir.as_deref()),
        Command::Synth {
            session_id,
            speakers,
            segments_per_speaker,
            dim,
            separation,
            noise_sigma,
            out_dir,
        } => commands::cmd_synth(
            &cfg,
            session_id,
            *speakers,
            *segments_per_speaker,
            *dim,
            *separation,
            *noise_sigma,
            out_dir,
        ),
        Command::ExportEmbeddings {
            checkpoint,
            embeddings,
            out,
        } => commands::cmd_export_embeddings(checkpoint, embeddings, out),
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Parse { .. } => 2,
        Error::Divergence { .. } => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", serde_json::json!({"event": "error", "message": err.to_string()}));
            ExitCode::from(exit_code(&err))
        }
    }
}
