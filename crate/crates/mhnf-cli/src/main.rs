//! `mhnf` — train, evaluate and inspect hybrid-metapath graph models.

mod commands;

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "mhnf",
    version,
    about = "Multi-hop heterogeneous neighborhood fusion",
    long_about = "Learns hybrid metapaths on heterogeneous graphs and evaluates the resulting\n\
                  node embeddings on classification (Macro/Micro-F1, head and KNN protocols)\n\
                  and clustering (k-means NMI/ARI)."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model and write checkpoint, reports and embeddings.
    Train(TrainArgs),
    /// Re-evaluate a checkpoint; verifies metrics reproduce bitwise.
    Eval(EvalArgs),
    /// Show learned hybrid paths and attention weights of a checkpoint.
    Inspect(InspectArgs),
    /// Grid-sweep embedding dimension and/or maximum path length.
    Sweep(SweepArgs),
    /// Generate a synthetic planted-signal dataset directory.
    Synth(SynthArgs),
}

/// Where the graph comes from: a dataset directory or the synthetic
/// generator. Exactly one source must be given.
#[derive(Args, Clone)]
struct DataArgs {
    /// Dataset directory (schema.txt, *.edges, *.features, labels.txt).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Synthetic generator name; only "planted" is available.
    #[arg(long)]
    synth: Option<String>,
    /// Planted generator: target nodes per class.
    #[arg(long, default_value_t = 150)]
    synth_n: usize,
    /// Planted generator: number of classes.
    #[arg(long, default_value_t = 3)]
    synth_classes: usize,
    /// Planted generator: feature noise scale.
    #[arg(long, default_value_t = 0.1)]
    synth_noise: f64,
}

/// Training hyper-parameter overrides. Precedence: CLI flag, then config
/// file, then built-in defaults.
#[derive(Args, Clone, Default)]
struct Overrides {
    /// Flat key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Number of hybrid paths (C).
    #[arg(long)]
    paths: Option<usize>,
    /// Maximum hybrid path length (L).
    #[arg(long)]
    max_hops: Option<usize>,
    /// Embedding dimension (d).
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    attn_dim: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Seeded repetitions per training ratio.
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    val_ratio: Option<f64>,
    #[arg(long)]
    knn_k: Option<usize>,
    /// Skip the standalone per-hop clustering analysis.
    #[arg(long)]
    no_per_hop_nmi: bool,
    /// Freeze mixing to one-hot relation picks: one semicolon-separated
    /// group per path, comma-separated relation names per hop,
    /// e.g. "PA,AP;PS,SP".
    #[arg(long)]
    frozen_mixing: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    overrides: Overrides,
    /// Output directory for all artifacts.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated training ratios, e.g. "0.2,0.4,0.6,0.8".
    #[arg(long, default_value = "0.2")]
    ratios: String,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Optional output directory for the recomputed metrics.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Accepted for interface symmetry; evaluation derives all randomness
    /// from the checkpoint, so this has no effect.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Ranked sequences to print per hybrid path.
    #[arg(long, default_value_t = 3)]
    top_k: usize,
    /// Print standalone per-hop clustering NMI next to hop attentions.
    #[arg(long)]
    per_hop_nmi: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated embedding dimensions to sweep.
    #[arg(long)]
    grid_dim: Option<String>,
    /// Comma-separated maximum path lengths to sweep.
    #[arg(long)]
    grid_hops: Option<String>,
    /// Training ratio used for every grid point.
    #[arg(long, default_value_t = 0.2)]
    ratio: f64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 150)]
    synth_n: usize,
    #[arg(long, default_value_t = 3)]
    synth_classes: usize,
    #[arg(long, default_value_t = 0.1)]
    synth_noise: f64,
}

fn configure_threads() -> Result<()> {
    if let Ok(raw) = std::env::var("MHNF_THREADS") {
        let n: usize = raw.parse()?;
        if n == 0 {
            bail!("MHNF_THREADS must be at least 1");
        }
        // Ignore the error if a pool already exists (e.g. under tests).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.cmd {
        Cmd::Train(args) => commands::train(args),
        Cmd::Eval(args) => commands::eval(args),
        Cmd::Inspect(args) => commands::inspect(args),
        Cmd::Sweep(args) => commands::sweep(args),
        Cmd::Synth(args) => commands::synth(args),
    });
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
