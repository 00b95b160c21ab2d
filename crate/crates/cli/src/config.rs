//! Run configuration: defaults, a flat `key = value` file, and overrides.
//!
//! Precedence is command-line flags over the config file over defaults.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use deepgmm::autoencoder::{CorruptionSpec, SgdConfig};
use deepgmm::gmm::EmConfig;
use deepgmm::joint::{JointConfig, SeparabilityMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    /// `.csv`, `.tsv` and `.txt` are CSV, anything else IDX.
    Auto,
    Idx,
    Csv,
}

impl DataFormat {
    fn name(self) -> &'static str {
        match self {
            DataFormat::Auto => "auto",
            DataFormat::Idx => "idx",
            DataFormat::Csv => "csv",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub data_format: DataFormat,
    pub csv_labels: bool,
    pub csv_delimiter: u8,
    /// Use only the first this-many samples; 0 keeps all.
    pub max_samples: usize,
    pub out: PathBuf,

    /// Layer widths after the input layer; the input width comes from the data.
    pub arch: Vec<usize>,
    pub mask_fraction: f64,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub finetune_epochs: usize,
    pub finetune_lr: f64,
    pub ae_batch_size: usize,

    pub clusters: usize,
    pub em_max_iters: usize,
    pub em_tol: f64,

    pub eta: f64,
    pub neighbor_fraction: f64,
    pub lr: f64,
    pub lr_step_factor: f64,
    pub lr_step_every: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub separability_mode: SeparabilityMode,
    /// Emit a PCA embedding every this-many joint epochs; 0 disables.
    pub embed_every: usize,

    pub synth_clusters: usize,
    pub synth_dim: usize,
    pub synth_samples: usize,
    pub synth_separation: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let joint = JointConfig::default();
        let sgd = SgdConfig::default();
        let em = EmConfig::default();
        RunConfig {
            seed: 0,
            data: None,
            labels: None,
            data_format: DataFormat::Auto,
            csv_labels: true,
            csv_delimiter: b',',
            max_samples: 0,
            out: PathBuf::from("runs/default"),
            arch: vec![500, 500, 2000, 10],
            mask_fraction: CorruptionSpec::default().mask_fraction(),
            pretrain_epochs: sgd.epochs,
            pretrain_lr: sgd.learning_rate,
            finetune_epochs: sgd.epochs,
            finetune_lr: sgd.learning_rate,
            ae_batch_size: sgd.batch_size,
            clusters: 10,
            em_max_iters: em.max_iters,
            em_tol: em.tol,
            eta: joint.eta,
            neighbor_fraction: joint.neighbor_fraction,
            lr: joint.learning_rate,
            lr_step_factor: joint.lr_step_factor,
            lr_step_every: joint.lr_step_every,
            batch_size: joint.batch_size,
            epochs: joint.epochs,
            separability_mode: joint.separability_mode,
            embed_every: 0,
            synth_clusters: 3,
            synth_dim: 8,
            synth_samples: 1500,
            synth_separation: 10.0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow!("invalid value {value:?} for {key}: {e}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => bail!("invalid value {value:?} for {key}: expected true or false"),
    }
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl RunConfig {
    /// Sets one entry by key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "seed" => self.seed = parse(key, value)?,
            "data" => self.data = opt_path(value),
            "labels" => self.labels = opt_path(value),
            "data_format" => {
                self.data_format = match value {
                    "auto" => DataFormat::Auto,
                    "idx" => DataFormat::Idx,
                    "csv" => DataFormat::Csv,
                    _ => bail!("invalid value {value:?} for data_format: expected auto, idx or csv"),
                }
            }
            "csv_labels" => self.csv_labels = parse_bool(key, value)?,
            "csv_delimiter" => {
                self.csv_delimiter = match value {
                    "tab" | "\\t" => b'\t',
                    v if v.len() == 1 => v.as_bytes()[0],
                    _ => bail!("csv_delimiter must be a single character or \"tab\""),
                }
            }
            "max_samples" => self.max_samples = parse(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "arch" => {
                self.arch = value
                    .split(',')
                    .map(|s| parse::<usize>(key, s.trim()))
                    .collect::<Result<_>>()?;
                if self.arch.is_empty() || self.arch.contains(&0) {
                    bail!("arch must list positive layer widths, got {value:?}");
                }
            }
            "mask_fraction" => self.mask_fraction = parse(key, value)?,
            "pretrain_epochs" => self.pretrain_epochs = parse(key, value)?,
            "pretrain_lr" => self.pretrain_lr = parse(key, value)?,
            "finetune_epochs" => self.finetune_epochs = parse(key, value)?,
            "finetune_lr" => self.finetune_lr = parse(key, value)?,
            "ae_batch_size" => self.ae_batch_size = parse(key, value)?,
            "clusters" => self.clusters = parse(key, value)?,
            "em_max_iters" => self.em_max_iters = parse(key, value)?,
            "em_tol" => self.em_tol = parse(key, value)?,
            "eta" => self.eta = parse(key, value)?,
            "neighbor_fraction" => self.neighbor_fraction = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "lr_step_factor" => self.lr_step_factor = parse(key, value)?,
            "lr_step_every" => self.lr_step_every = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "separability_mode" => {
                self.separability_mode = SeparabilityMode::from_name(value)
                    .ok_or_else(|| anyhow!("invalid separability_mode {value:?}: expected per-step or per-sample"))?
            }
            "embed_every" => self.embed_every = parse(key, value)?,
            "synth_clusters" => self.synth_clusters = parse(key, value)?,
            "synth_dim" => self.synth_dim = parse(key, value)?,
            "synth_samples" => self.synth_samples = parse(key, value)?,
            "synth_separation" => self.synth_separation = parse(key, value)?,
            _ => bail!("unknown config key {key:?}"),
        }
        Ok(())
    }

    /// Applies a `key=value` string.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| anyhow!("expected key=value, got {pair:?}"))?;
        self.set(k.trim(), v)
    }

    /// Applies a config file: one `key = value` per line, `#` starts a comment.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.set_pair(line)
                .with_context(|| format!("{}: line {}", path.display(), i + 1))?;
        }
        Ok(())
    }

    /// Every key with its current value, sorted by key.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let delim = if self.csv_delimiter == b'\t' {
            "tab".to_string()
        } else {
            (self.csv_delimiter as char).to_string()
        };
        let arch: Vec<String> = self.arch.iter().map(usize::to_string).collect();
        let entries: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("data", path(&self.data)),
            ("labels", path(&self.labels)),
            ("data_format", self.data_format.name().to_string()),
            ("csv_labels", self.csv_labels.to_string()),
            ("csv_delimiter", delim),
            ("max_samples", self.max_samples.to_string()),
            ("out", self.out.display().to_string()),
            ("arch", arch.join(",")),
            ("mask_fraction", self.mask_fraction.to_string()),
            ("pretrain_epochs", self.pretrain_epochs.to_string()),
            ("pretrain_lr", self.pretrain_lr.to_string()),
            ("finetune_epochs", self.finetune_epochs.to_string()),
            ("finetune_lr", self.finetune_lr.to_string()),
            ("ae_batch_size", self.ae_batch_size.to_string()),
            ("clusters", self.clusters.to_string()),
            ("em_max_iters", self.em_max_iters.to_string()),
            ("em_tol", self.em_tol.to_string()),
            ("eta", self.eta.to_string()),
            ("neighbor_fraction", self.neighbor_fraction.to_string()),
            ("lr", self.lr.to_string()),
            ("lr_step_factor", self.lr_step_factor.to_string()),
            ("lr_step_every", self.lr_step_every.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("separability_mode", self.separability_mode.name().to_string()),
            ("embed_every", self.embed_every.to_string()),
            ("synth_clusters", self.synth_clusters.to_string()),
            ("synth_dim", self.synth_dim.to_string()),
            ("synth_samples", self.synth_samples.to_string()),
            ("synth_separation", self.synth_separation.to_string()),
        ];
        entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// The config file text that reproduces this configuration.
    pub fn to_file_text(&self) -> String {
        self.to_map().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn sgd_pretrain(&self) -> SgdConfig {
        SgdConfig {
            epochs: self.pretrain_epochs,
            learning_rate: self.pretrain_lr,
            batch_size: self.ae_batch_size,
        }
    }

    pub fn sgd_finetune(&self) -> SgdConfig {
        SgdConfig {
            epochs: self.finetune_epochs,
            learning_rate: self.finetune_lr,
            batch_size: self.ae_batch_size,
        }
    }

    pub fn corruption(&self) -> Result<CorruptionSpec> {
        Ok(CorruptionSpec::new(self.mask_fraction)?)
    }

    pub fn em(&self) -> EmConfig {
        EmConfig {
            max_iters: self.em_max_iters,
            tol: self.em_tol,
        }
    }

    pub fn joint(&self) -> JointConfig {
        JointConfig {
            eta: self.eta,
            neighbor_fraction: self.neighbor_fraction,
            learning_rate: self.lr,
            lr_step_factor: self.lr_step_factor,
            lr_step_every: self.lr_step_every,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            separability_mode: self.separability_mode,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_round_trips_through_set() {
        let mut c = RunConfig::default();
        c.set("eta", "0.001").unwrap();
        c.set("arch", "64, 64,3").unwrap();
        c.set("csv_delimiter", "tab").unwrap();
        c.set("data", "/x/y.csv").unwrap();
        let mut back = RunConfig::default();
        for (k, v) in c.to_map() {
            back.set(&k, &v).unwrap();
        }
        assert_eq!(back, c);
        assert_eq!(c.arch, vec![64, 64, 3]);
    }

    #[test]
    fn file_then_overrides() {
        let dir = tempfile::TempDir::new().unwrap();
        let p = dir.path().join("run.conf");
        fs::write(&p, "# comment\neta = 0.1\nepochs=7 # trailing\n\nclusters = 4\n").unwrap();
        let mut c = RunConfig::default();
        c.apply_file(&p).unwrap();
        c.set_pair("eta=0.5").unwrap();
        assert_eq!((c.eta, c.epochs, c.clusters), (0.5, 7, 4));
    }

    #[test]
    fn bad_entries_are_rejected_with_line() {
        let dir = tempfile::TempDir::new().unwrap();
        let p = dir.path().join("bad.conf");
        fs::write(&p, "eta = 0.1\nbogus = 3\n").unwrap();
        let err = format!("{:#}", RunConfig::default().apply_file(&p).unwrap_err());
        assert!(err.contains("line 2") && err.contains("bogus"), "{err}");
        assert!(RunConfig::default().set("epochs", "-1").is_err());
        assert!(RunConfig::default().set("arch", "3,0").is_err());
        assert!(RunConfig::default().set_pair("novalue").is_err());
    }
}
