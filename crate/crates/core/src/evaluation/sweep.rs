use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{generate_dataset, Dataset, Split};
use crate::error::{Error, Result};
use crate::laser::LaserConfig;
use crate::stimulus::{Scale, StimulusSpec};
use crate::surrogates::{
    init_model, load_checkpoint, save_checkpoint, CheckpointMeta, ModelHyper, ModelKind,
    SurrogateModel,
};
use crate::training::{csv_err, evaluate, nrmse, train_surrogate, TrainConfig, TrainHistory};

pub const DEFAULT_RATES: [f64; 6] = [0.10, 0.32, 0.54, 0.76, 0.98, 1.20];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Symbol rates as fractions of f_R.
    pub rates: Vec<f64>,
    pub models: Vec<ModelKind>,
    pub scale: Scale,
    pub seeds: Vec<u64>,
    /// Overrides the scale's default epoch count.
    pub epochs: Option<usize>,
    /// Directory for per-cell checkpoints.
    pub checkpoints: Option<PathBuf>,
    /// Evaluate stored checkpoints instead of training.
    pub load_only: bool,
}

impl SweepSpec {
    pub fn new(scale: Scale) -> Self {
        SweepSpec {
            rates: DEFAULT_RATES.to_vec(),
            models: ModelKind::ALL.to_vec(),
            scale,
            seeds: vec![1],
            epochs: None,
            checkpoints: None,
            load_only: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rates.is_empty() || self.models.is_empty() || self.seeds.is_empty() {
            return Err(Error::param("sweep needs at least one rate, model and seed"));
        }
        if let Some(r) = self.rates.iter().find(|r| !(**r > 0.0 && **r <= 2.0)) {
            return Err(Error::param(format!("rate fraction {r} outside (0, 2]")));
        }
        if self.load_only && self.checkpoints.is_none() {
            return Err(Error::param("load-only sweep needs a checkpoint directory"));
        }
        Ok(())
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let mut cfg = TrainConfig::for_scale(self.scale, seed);
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        cfg
    }

    pub fn cells(&self) -> Vec<SweepCell> {
        let mut out = Vec::new();
        for &rate_fraction in &self.rates {
            for &seed in &self.seeds {
                for &model in &self.models {
                    out.push(SweepCell {
                        rate_fraction,
                        model,
                        seed,
                    });
                }
            }
        }
        out
    }

    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("spec serializes"));
        format!("{:x}", h.finalize())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepCell {
    pub rate_fraction: f64,
    pub model: ModelKind,
    pub seed: u64,
}

impl SweepCell {
    pub fn label(&self) -> String {
        format!("{}_r{:.2}_s{}", self.model, self.rate_fraction, self.seed)
    }

    pub fn checkpoint_path(&self, dir: &Path) -> PathBuf {
        dir.join(format!("{}.ckpt", self.label()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub cell: SweepCell,
    pub val_nrmse: f64,
    /// `None` for cells evaluated from a stored checkpoint.
    pub train_s_per_epoch: Option<f64>,
    pub eval_s_per_epoch: f64,
    pub train_config_hash: String,
    pub dataset_hash: String,
}

/// Mean train and validation seconds per epoch, skipping the first epoch as
/// warm-up when more than one ran.
pub fn epoch_means(h: &TrainHistory) -> Option<(f64, f64)> {
    let skip = usize::from(h.epochs.len() > 1);
    let used = &h.epochs[skip.min(h.epochs.len())..];
    if used.is_empty() {
        return None;
    }
    let n = used.len() as f64;
    Some((
        used.iter().map(|r| r.train_seconds).sum::<f64>() / n,
        used.iter().map(|r| r.val_seconds).sum::<f64>() / n,
    ))
}

pub fn sweep_dataset(
    scale: Scale,
    rate_fraction: f64,
    seed: u64,
    laser: &LaserConfig,
) -> Result<Dataset> {
    generate_dataset(&StimulusSpec::for_scale(scale, rate_fraction, seed), laser)
}

/// Trains (or loads) one cell's surrogate and scores it on the validation split.
pub fn run_cell(
    spec: &SweepSpec,
    cell: &SweepCell,
    data: &Dataset,
) -> Result<(SweepRow, SurrogateModel, Option<TrainHistory>)> {
    let cfg = spec.train_config(cell.seed);
    if spec.load_only {
        let dir = spec.checkpoints.as_deref().expect("validated");
        let path = cell.checkpoint_path(dir);
        if !path.exists() {
            return Err(Error::MissingCheckpoint {
                cell: cell.label(),
                path,
            });
        }
        let (model, _) = load_checkpoint(&path)?;
        let start = Instant::now();
        let val_nrmse = evaluate(&model, data, Split::Validation)?;
        let row = SweepRow {
            cell: *cell,
            val_nrmse,
            train_s_per_epoch: None,
            eval_s_per_epoch: start.elapsed().as_secs_f64(),
            train_config_hash: cfg.hash(),
            dataset_hash: data.content_hash(),
        };
        return Ok((row, model, None));
    }

    let init = init_model(&ModelHyper::for_scale(cell.model, spec.scale), cell.seed)?;
    let trained = train_surrogate(&init, data, &cfg)?;
    let h = &trained.history;
    let val_nrmse = match h.best() {
        Some(b) => b.val_nrmse,
        None => evaluate(&trained.model, data, Split::Validation)?,
    };
    let (train_s, eval_s) = epoch_means(h).unwrap_or((0.0, 0.0));
    if let Some(dir) = &spec.checkpoints {
        std::fs::create_dir_all(dir)?;
        let meta = CheckpointMeta {
            train_config_hash: h.config_hash.clone(),
            dataset_hash: h.dataset_hash.clone(),
            epoch: h.best_epoch.unwrap_or(0),
            val_nrmse,
        };
        save_checkpoint(&cell.checkpoint_path(dir), &trained.model, &meta)?;
    }
    let row = SweepRow {
        cell: *cell,
        val_nrmse,
        train_s_per_epoch: Some(train_s),
        eval_s_per_epoch: eval_s,
        train_config_hash: h.config_hash.clone(),
        dataset_hash: h.dataset_hash.clone(),
    };
    Ok((row, trained.model, Some(trained.history)))
}

/// Every cell of the sweep, one data set per (rate, seed).
pub fn run_rate_sweep(spec: &SweepSpec, laser: &LaserConfig) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let mut data: BTreeMap<(u64, u64), Dataset> = BTreeMap::new();
    let mut rows = Vec::new();
    for cell in spec.cells() {
        let key = (cell.rate_fraction.to_bits(), cell.seed);
        if !data.contains_key(&key) {
            data.insert(key, sweep_dataset(spec.scale, cell.rate_fraction, cell.seed, laser)?);
        }
        rows.push(run_cell(spec, &cell, &data[&key])?.0);
    }
    Ok(rows)
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record([
        "rate_fraction",
        "model",
        "val_nrmse",
        "train_s_per_epoch",
        "eval_s_per_epoch",
        "seed",
        "train_config_hash",
        "dataset_hash",
    ])
    .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            format!("{:.2}", r.cell.rate_fraction),
            r.cell.model.to_string(),
            r.val_nrmse.to_string(),
            r.train_s_per_epoch.map(|v| v.to_string()).unwrap_or_default(),
            r.eval_s_per_epoch.to_string(),
            r.cell.seed.to_string(),
            r.train_config_hash.clone(),
            r.dataset_hash.clone(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Un-equalized distortion of the channel: NRMSE between the filtered drive
/// and the detected power over the validation split.
pub fn distortion_nrmse(data: &Dataset) -> Result<f64> {
    let drive: Vec<f64> = data.val.iter().flat_map(|s| s.drive.iter().copied()).collect();
    let power: Vec<f64> = data.val.iter().flat_map(|s| s.target.iter().copied()).collect();
    nrmse(&power, &drive, 1.0)
}
