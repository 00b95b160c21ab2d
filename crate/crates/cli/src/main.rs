use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use deepgmm_cli::pipeline;
use deepgmm_cli::RunConfig;

/// Deep clustering: denoising autoencoder + diagonal GMM trained jointly.
#[derive(Parser)]
#[command(name = "deepgmm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Flat key = value config file (flags override it).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Dataset: IDX images or CSV.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// IDX labels file.
    #[arg(long, global = true)]
    labels: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    eta: Option<f64>,
    /// Joint-training epochs.
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Joint-training batch size.
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    /// Joint-training base learning rate.
    #[arg(long, global = true)]
    lr: Option<f64>,
    #[arg(long, global = true)]
    clusters: Option<usize>,
    /// Any other config entry, as key=value (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct CkptArg {
    /// Input checkpoint (default: the previous step's checkpoint in --out).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Layer-wise denoising pretraining and fine-tuning of the autoencoder.
    Pretrain,
    /// Fit the mixture on the encoded data (k-means then EM).
    InitGmm(CkptArg),
    /// Joint training of encoder and mixture; resumes from the checkpoint.
    Train(CkptArg),
    /// Cluster the data and report ACC, NMI and CH.
    Eval(CkptArg),
    /// Write a 2-D PCA projection of the representation.
    Embed {
        #[command(flatten)]
        ckpt: CkptArg,
        /// Output CSV (default: embedding.csv in --out).
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Generate a labelled synthetic Gaussian-mixture dataset.
    Synth,
}

fn build_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(p) = &c.config {
        cfg.apply_file(p)?;
    }
    for pair in &c.set {
        cfg.set_pair(pair)?;
    }
    let flags = [
        ("seed", c.seed.map(|v| v.to_string())),
        ("data", c.data.as_ref().map(|p| p.display().to_string())),
        ("labels", c.labels.as_ref().map(|p| p.display().to_string())),
        ("out", c.out.as_ref().map(|p| p.display().to_string())),
        ("eta", c.eta.map(|v| v.to_string())),
        ("epochs", c.epochs.map(|v| v.to_string())),
        ("batch_size", c.batch_size.map(|v| v.to_string())),
        ("lr", c.lr.map(|v| v.to_string())),
        ("clusters", c.clusters.map(|v| v.to_string())),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.set(k, &v)?;
        }
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = build_config(&cli.common)?;
    match cli.command {
        Command::Synth => {
            let p = pipeline::cmd_synth(&cfg)?;
            println!("wrote {}", p.display());
        }
        Command::Pretrain => {
            let s = pipeline::cmd_pretrain(&cfg)?;
            println!("reconstruction loss {}; wrote {}", s.final_loss, s.checkpoint.display());
        }
        Command::InitGmm(a) => {
            let s = pipeline::cmd_init_gmm(&cfg, a.checkpoint.as_deref())?;
            println!(
                "mean log-likelihood {} (k-means) -> {} (EM); wrote {}",
                s.kmeans_loglik,
                s.em_loglik,
                s.checkpoint.display()
            );
        }
        Command::Train(a) => {
            let s = pipeline::cmd_train(&cfg, a.checkpoint.as_deref())?;
            let last = s.history.last().copied().unwrap_or(s.initial);
            println!(
                "epoch {}: objective {} (from {}); wrote {}",
                last.epoch,
                last.mean_objective,
                s.initial.mean_objective,
                s.checkpoint.display()
            );
        }
        Command::Eval(a) => {
            let s = pipeline::cmd_eval(&cfg, a.checkpoint.as_deref())?;
            let show = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
            println!("acc={} nmi={} ch={}", show(s.acc), show(s.nmi), show(s.ch));
        }
        Command::Embed { ckpt, file } => {
            let (p, proj) = pipeline::cmd_embed(&cfg, ckpt.checkpoint.as_deref(), file.as_deref())?;
            println!("wrote {} points to {}", proj.rows(), p.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
