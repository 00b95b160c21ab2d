//! The subcommands as library functions. Each writes its outputs into
//! `config.out` together with the effective configuration it ran with.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use deepgmm::autoencoder::{finetune, mean_reconstruction_loss, pretrain_layerwise, EncoderStack};
use deepgmm::data::{
    emit_embedding_csv, load_checkpoint, load_csv, load_idx, save_checkpoint, synth_gmm, Checkpoint, Dataset,
};
use deepgmm::gmm::{em_fit, kmeans_init, GmmParams};
use deepgmm::joint::{assign, evaluate, train_from, EpochRecord};
use deepgmm::metrics::{ch_score, clustering_accuracy, confusion_matrix, nmi, Partition};
use deepgmm::numerics::{pca_project_2d, Matrix, SeededRng};

use crate::config::{DataFormat, RunConfig};

pub const PRETRAIN_CHECKPOINT: &str = "pretrain.ckpt";
pub const INIT_CHECKPOINT: &str = "init.ckpt";
pub const TRAIN_CHECKPOINT: &str = "train.ckpt";
pub const HISTORY_FILE: &str = "history.csv";
pub const METRICS_FILE: &str = "metrics.txt";

// RNG streams per command; joint training uses streams 0.. (one per epoch).
const SYNTH_STREAM: u64 = 1 << 62;
const PRETRAIN_STREAM: u64 = (1 << 62) + 1;
const INIT_STREAM: u64 = (1 << 62) + 2;

/// Config entries stored in checkpoints: everything except the output
/// location, so identical runs in different directories match byte for byte.
fn checkpoint_config(cfg: &RunConfig) -> std::collections::BTreeMap<String, String> {
    let mut m = cfg.to_map();
    m.remove("out");
    m
}

fn out_path(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.out.join(name)
}

fn prepare(cfg: &RunConfig, command: &str) -> Result<()> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating output directory {}", cfg.out.display()))?;
    let p = out_path(cfg, &format!("{command}.config"));
    fs::write(&p, cfg.to_file_text()).with_context(|| format!("writing {}", p.display()))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let Some(data) = &cfg.data else {
        bail!("no dataset given (use --data)");
    };
    if !data.exists() {
        bail!("dataset {} does not exist", data.display());
    }
    let ext = data.extension().and_then(|e| e.to_str()).unwrap_or("");
    let csv = match cfg.data_format {
        DataFormat::Csv => true,
        DataFormat::Idx => false,
        DataFormat::Auto => matches!(ext, "csv" | "tsv" | "txt"),
    };
    let ds = if csv {
        load_csv(data, cfg.csv_labels, cfg.csv_delimiter)?
    } else {
        load_idx(data, cfg.labels.as_deref())?
    };
    let ds = if cfg.max_samples > 0 { ds.head(cfg.max_samples) } else { ds };
    if ds.is_empty() {
        bail!("dataset {} has no samples", data.display());
    }
    log::info!("loaded {} samples of dimension {} from {}", ds.len(), ds.dim(), data.display());
    Ok(ds)
}

fn read_checkpoint(cfg: &RunConfig, given: Option<&Path>, default: &str) -> Result<(PathBuf, Checkpoint)> {
    let path = given.map_or_else(|| out_path(cfg, default), Path::to_path_buf);
    let ckpt = load_checkpoint(&path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    Ok((path, ckpt))
}

fn check_input_width(enc: &EncoderStack, ds: &Dataset) -> Result<()> {
    if enc.input_dim() != ds.dim() {
        bail!(
            "checkpoint encoder expects {} input features but the dataset has {}",
            enc.input_dim(),
            ds.dim()
        );
    }
    Ok(())
}

/// Writes a labelled synthetic mixture dataset as CSV (label in the last column).
pub fn cmd_synth(cfg: &RunConfig) -> Result<PathBuf> {
    prepare(cfg, "synth")?;
    let mut rng = SeededRng::with_stream(cfg.seed, SYNTH_STREAM);
    let (ds, truth) = synth_gmm(
        cfg.synth_clusters,
        cfg.synth_dim,
        cfg.synth_samples,
        cfg.synth_separation,
        &mut rng,
    )?;
    let labels = ds.labels().expect("synthetic data is labelled");
    let mut text = String::new();
    for (row, l) in ds.samples().row_iter().zip(labels) {
        for v in row {
            write!(text, "{v},").unwrap();
        }
        writeln!(text, "{l}").unwrap();
    }
    let path = out_path(cfg, "synth.csv");
    write_file(&path, &text)?;
    let mut means = String::from("component,mean\n");
    for k in 0..truth.num_components() {
        let m: Vec<String> = truth.means().row(k).iter().map(f64::to_string).collect();
        writeln!(means, "{k},{}", m.join(" ")).unwrap();
    }
    write_file(&out_path(cfg, "synth_means.csv"), &means)?;
    Ok(path)
}

#[derive(Debug, Clone)]
pub struct PretrainSummary {
    pub checkpoint: PathBuf,
    pub final_loss: f64,
}

/// Greedy layer-wise denoising pretraining followed by end-to-end fine-tuning.
pub fn cmd_pretrain(cfg: &RunConfig) -> Result<PretrainSummary> {
    prepare(cfg, "pretrain")?;
    let ds = load_dataset(cfg)?;
    let mut shape = vec![ds.dim()];
    shape.extend(&cfg.arch);
    let mut rng = SeededRng::with_stream(cfg.seed, PRETRAIN_STREAM);
    let pre = pretrain_layerwise(ds.samples(), &shape, cfg.corruption()?, &cfg.sgd_pretrain(), &mut rng)?;
    let ft = finetune(pre.encoder, pre.decoder, ds.samples(), &cfg.sgd_finetune(), &mut rng)?;
    let final_loss = mean_reconstruction_loss(&ft.encoder, &ft.decoder, ds.samples())?;
    log::info!("pretraining done, mean reconstruction loss {final_loss}");

    let mut losses = String::from("phase,epoch,loss\n");
    for (i, stage) in pre.stage_losses.iter().enumerate() {
        for (e, l) in stage.iter().enumerate() {
            writeln!(losses, "stage{},{},{l}", i + 1, e + 1).unwrap();
        }
    }
    for (e, l) in ft.epoch_losses.iter().enumerate() {
        writeln!(losses, "finetune,{},{l}", e + 1).unwrap();
    }
    writeln!(losses, "final,0,{final_loss}").unwrap();
    write_file(&out_path(cfg, "pretrain_loss.csv"), &losses)?;

    let mut ckpt = Checkpoint::new(ft.encoder);
    ckpt.decoder = Some(ft.decoder);
    ckpt.config = checkpoint_config(cfg);
    let path = out_path(cfg, PRETRAIN_CHECKPOINT);
    save_checkpoint(&ckpt, &path)?;
    Ok(PretrainSummary {
        checkpoint: path,
        final_loss,
    })
}

#[derive(Debug, Clone)]
pub struct InitSummary {
    pub checkpoint: PathBuf,
    /// Mean log-likelihood per sample of the k-means initialisation.
    pub kmeans_loglik: f64,
    /// Mean log-likelihood per sample after EM.
    pub em_loglik: f64,
    /// Total log-likelihood trace of EM (initial value first).
    pub trace: Vec<f64>,
    pub params: GmmParams,
}

/// Fits the mixture on the encoded data: k-means++ / Lloyd then EM.
pub fn cmd_init_gmm(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<InitSummary> {
    prepare(cfg, "init-gmm")?;
    let (_, mut ckpt) = read_checkpoint(cfg, checkpoint, PRETRAIN_CHECKPOINT)?;
    let ds = load_dataset(cfg)?;
    check_input_width(&ckpt.encoder, &ds)?;
    if ds.len() < cfg.clusters {
        bail!("cannot fit {} clusters to {} samples", cfg.clusters, ds.len());
    }
    let reps = ckpt.encoder.encode_batch(ds.samples())?;
    let mut rng = SeededRng::with_stream(cfg.seed, INIT_STREAM);
    let init = kmeans_init(&reps, cfg.clusters, &mut rng)?;
    let fit = em_fit(&reps, init, &cfg.em(), &mut rng)?;
    let n = ds.len() as f64;
    let kmeans_loglik = fit.log_likelihoods[0] / n;
    let em_loglik = fit.log_likelihoods[fit.log_likelihoods.len() - 1] / n;
    log::info!(
        "EM: {} iterations, mean log-likelihood {kmeans_loglik} -> {em_loglik}",
        fit.iterations()
    );

    let mut trace = String::from("iteration,log_likelihood\n");
    for (i, ll) in fit.log_likelihoods.iter().enumerate() {
        writeln!(trace, "{i},{ll}").unwrap();
    }
    write_file(&out_path(cfg, "em_trace.csv"), &trace)?;
    let report = format!(
        "kmeans_loglik={kmeans_loglik}\nem_loglik={em_loglik}\niterations={}\nconverged={}\nreseeds={}\n",
        fit.iterations(),
        fit.converged,
        fit.reseeds
    );
    write_file(&out_path(cfg, "init_gmm.txt"), &report)?;

    ckpt.gmm = Some(fit.params.clone());
    ckpt.joint_epochs = 0;
    ckpt.config = checkpoint_config(cfg);
    let path = out_path(cfg, INIT_CHECKPOINT);
    save_checkpoint(&ckpt, &path)?;
    Ok(InitSummary {
        checkpoint: path,
        kmeans_loglik,
        em_loglik,
        trace: fit.log_likelihoods,
        params: fit.params,
    })
}

fn history_header(cfg: &RunConfig) -> String {
    let model = if cfg.eta == 0.0 {
        "DeepGMM ablation (eta=0, no separability term)".to_string()
    } else {
        format!("joint likelihood + separability (eta={})", cfg.eta)
    };
    format!("# model: {model}\nepoch,mean_objective,mean_loglik,separability,learning_rate\n")
}

fn history_row(r: &EpochRecord) -> String {
    format!(
        "{},{},{},{},{}\n",
        r.epoch, r.mean_objective, r.mean_loglik, r.separability, r.learning_rate
    )
}

/// Rows of an existing history file up to and including `last_epoch`.
fn kept_history(path: &Path, last_epoch: usize) -> Option<String> {
    let text = fs::read_to_string(path).ok()?;
    let mut kept = String::new();
    for line in text.lines() {
        let keep = match line.split(',').next().and_then(|e| e.parse::<usize>().ok()) {
            Some(e) => e <= last_epoch,
            None => true,
        };
        if keep {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    Some(kept)
}

fn project_2d(reps: &Matrix) -> deepgmm::Result<Matrix> {
    if reps.cols() == 2 {
        Ok(reps.clone())
    } else {
        pca_project_2d(reps)
    }
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    /// Records of the epochs run by this invocation.
    pub history: Vec<EpochRecord>,
    /// State before this invocation's first epoch.
    pub initial: EpochRecord,
}

/// Joint training. Resumes from `joint_epochs` recorded in the checkpoint;
/// the training checkpoint is rewritten after every epoch.
pub fn cmd_train(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<TrainSummary> {
    prepare(cfg, "train")?;
    let (src, ckpt) = read_checkpoint(cfg, checkpoint, INIT_CHECKPOINT)?;
    let Some(params) = ckpt.gmm.clone() else {
        bail!("checkpoint {} has no mixture parameters; run init-gmm first", src.display());
    };
    let ds = load_dataset(cfg)?;
    check_input_width(&ckpt.encoder, &ds)?;
    let joint = cfg.joint();
    joint.validate()?;
    let start = ckpt.joint_epochs;
    if start > joint.epochs {
        bail!("checkpoint already has {start} joint epochs, more than the configured {}", joint.epochs);
    }

    let mut initial = evaluate(&ckpt.encoder, &params, ds.samples(), &joint)?;
    initial.epoch = start;
    initial.learning_rate = joint.learning_rate_at(start);
    let history_path = out_path(cfg, HISTORY_FILE);
    let mut history_text = match (start, kept_history(&history_path, start)) {
        (s, Some(kept)) if s > 0 => kept,
        _ => history_header(cfg) + &history_row(&initial),
    };
    write_file(&history_path, &history_text)?;

    let embed_dir = out_path(cfg, "embeddings");
    if cfg.embed_every > 0 {
        fs::create_dir_all(&embed_dir).with_context(|| format!("creating {}", embed_dir.display()))?;
        if start == 0 {
            let reps = ckpt.encoder.encode_batch(ds.samples())?;
            emit_embedding_csv(&project_2d(&reps)?, ds.labels(), &embed_dir.join("epoch_0000.csv"))?;
        }
    }

    let ckpt_path = out_path(cfg, TRAIN_CHECKPOINT);
    let decoder = ckpt.decoder.clone();
    let config_map = checkpoint_config(cfg);
    let outcome = train_from(ckpt.encoder, params, ds.samples(), &joint, start, |rec, enc, gmm| {
        history_text.push_str(&history_row(rec));
        fs::write(&history_path, &history_text).map_err(|e| deepgmm::Error::Io {
            path: history_path.clone(),
            source: e,
        })?;
        let snapshot = Checkpoint {
            encoder: enc.clone(),
            decoder: decoder.clone(),
            gmm: Some(gmm.clone()),
            config: config_map.clone(),
            joint_epochs: rec.epoch,
        };
        save_checkpoint(&snapshot, &ckpt_path)?;
        if cfg.embed_every > 0 && rec.epoch % cfg.embed_every == 0 {
            let reps = enc.encode_batch(ds.samples())?;
            match project_2d(&reps) {
                Ok(proj) => {
                    let file = embed_dir.join(format!("epoch_{:04}.csv", rec.epoch));
                    emit_embedding_csv(&proj, ds.labels(), &file)?;
                }
                Err(e) => log::warn!("skipping embedding at epoch {}: {e}", rec.epoch),
            }
        }
        Ok(())
    })?;
    if outcome.history.is_empty() {
        // nothing ran; still leave a training checkpoint behind
        let snapshot = Checkpoint {
            encoder: outcome.encoder,
            decoder,
            gmm: Some(outcome.params),
            config: config_map,
            joint_epochs: start,
        };
        save_checkpoint(&snapshot, &ckpt_path)?;
    }
    Ok(TrainSummary {
        checkpoint: ckpt_path,
        history: outcome.history,
        initial,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub acc: Option<f64>,
    pub nmi: Option<f64>,
    pub ch: Option<f64>,
    pub predictions: Vec<usize>,
}

fn metric_text(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| x.to_string())
}

/// CH score over the non-empty predicted clusters.
fn ch_of(reps: &Matrix, pred: &[usize]) -> Option<f64> {
    let mut map = std::collections::BTreeMap::new();
    for &p in pred {
        let next = map.len();
        map.entry(p).or_insert(next);
    }
    if map.len() < 2 || reps.rows() <= map.len() {
        log::warn!("CH score needs at least two non-empty clusters and more samples than clusters");
        return None;
    }
    let compact = Partition::from_labels(pred.iter().map(|p| map[p]).collect());
    match ch_score(reps, &compact) {
        Ok(v) => Some(v),
        Err(e) => {
            log::warn!("CH score unavailable: {e}");
            None
        }
    }
}

/// Clusters the dataset and reports ACC, NMI and the CH score of the
/// representation. ACC and NMI need labels.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<EvalSummary> {
    prepare(cfg, "eval")?;
    let (src, ckpt) = read_checkpoint(cfg, checkpoint, TRAIN_CHECKPOINT)?;
    let Some(params) = &ckpt.gmm else {
        bail!("checkpoint {} has no mixture parameters", src.display());
    };
    let ds = load_dataset(cfg)?;
    check_input_width(&ckpt.encoder, &ds)?;
    let pred = assign(&ckpt.encoder, params, ds.samples())?;
    let reps = ckpt.encoder.encode_batch(ds.samples())?;
    let ch = ch_of(&reps, &pred);
    let pred_part = Partition::new(pred.clone(), params.num_components())?;
    let (acc, nmi_v) = match ds.labels() {
        Some(truth) => {
            let truth = Partition::from_labels(truth.to_vec());
            let table = confusion_matrix(&pred_part, &truth)?;
            let mut csv = String::from("cluster");
            for j in 0..table.cols() {
                write!(csv, ",class_{j}").unwrap();
            }
            csv.push('\n');
            for i in 0..table.rows() {
                let row: Vec<String> = table.row(i).iter().map(u64::to_string).collect();
                writeln!(csv, "{i},{}", row.join(",")).unwrap();
            }
            write_file(&out_path(cfg, "confusion.csv"), &csv)?;
            (
                Some(clustering_accuracy(&pred_part, &truth)?),
                Some(nmi(&pred_part, &truth)?),
            )
        }
        None => {
            log::warn!("dataset has no labels: ACC and NMI skipped");
            (None, None)
        }
    };
    let (a, n, c) = (metric_text(acc), metric_text(nmi_v), metric_text(ch));
    write_file(&out_path(cfg, METRICS_FILE), &format!("acc={a}\nnmi={n}\nch={c}\n"))?;
    write_file(&out_path(cfg, "metrics.csv"), &format!("acc,nmi,ch\n{a},{n},{c}\n"))?;
    let mut assignments = String::from("sample,cluster\n");
    for (i, p) in pred.iter().enumerate() {
        writeln!(assignments, "{i},{p}").unwrap();
    }
    write_file(&out_path(cfg, "assignments.csv"), &assignments)?;
    Ok(EvalSummary {
        acc,
        nmi: nmi_v,
        ch,
        predictions: pred,
    })
}

/// Encodes the dataset, projects to two dimensions with PCA, and writes the
/// embedding CSV (to `out_file`, default `embedding.csv` in the output
/// directory). Returns the written path and the projected points.
pub fn cmd_embed(cfg: &RunConfig, checkpoint: Option<&Path>, out_file: Option<&Path>) -> Result<(PathBuf, Matrix)> {
    prepare(cfg, "embed")?;
    let (_, ckpt) = read_checkpoint(cfg, checkpoint, TRAIN_CHECKPOINT)?;
    let ds = load_dataset(cfg)?;
    check_input_width(&ckpt.encoder, &ds)?;
    let reps = ckpt.encoder.encode_batch(ds.samples())?;
    let proj = project_2d(&reps)?;
    let path = out_file.map_or_else(|| out_path(cfg, "embedding.csv"), Path::to_path_buf);
    emit_embedding_csv(&proj, ds.labels(), &path)?;
    Ok((path, proj))
}
