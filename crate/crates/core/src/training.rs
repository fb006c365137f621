//! Adam training of the surrogates on the min-max normalized MSE, with
//! per-epoch timing, best-checkpoint selection and a small grid search.

use std::path::Path;
use std::time::Instant;

use dml_autodiff::Tape;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Dataset, SequencePair, Split};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::stimulus::Scale;
use crate::surrogates::{init_model, ModelHyper, ModelKind, SurrogateModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    /// Sequences per optimizer step.
    pub batch_size: usize,
    pub epochs: usize,
    /// Seeds the per-epoch shuffle (and the initialization in [`grid_search`]).
    pub seed: u64,
    pub profile: Scale,
}

impl TrainConfig {
    pub fn for_scale(scale: Scale, seed: u64) -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            batch_size: 32,
            epochs: match scale {
                Scale::Paper => 400,
                Scale::Desk => 60,
            },
            seed,
            profile: scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::param(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        if !(self.eps_adam > 0.0) {
            return Err(Error::param("eps_adam must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch size must be at least 1"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        format!("{:x}", Sha256::digest(json))
    }
}

/// `mean((pred − target)²) / range²`.
pub fn nmse(pred: &[f64], target: &[f64], range: f64) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::param(format!(
            "prediction and target lengths differ or are empty ({} vs {})",
            pred.len(),
            target.len()
        )));
    }
    if !(range > 0.0) {
        return Err(Error::DegenerateRange(format!("normalization range {range}")));
    }
    let sse: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sse / pred.len() as f64 / (range * range))
}

pub fn nrmse(pred: &[f64], target: &[f64], range: f64) -> Result<f64> {
    Ok(nmse(pred, target, range)?.sqrt())
}

/// Adam moments for a list of parameter arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl Adam {
    pub fn new(sizes: &[usize], lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn from_config(sizes: &[usize], cfg: &TrainConfig) -> Self {
        Self::new(sizes, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps_adam)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update. Nothing is modified if any gradient entry
    /// is non-finite.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} arrays, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(Error::Contract(format!("array {i} changed size")));
            }
            if let Some(j) = g.iter().position(|x| !x.is_finite()) {
                return Err(Error::Numerical(format!("gradient of array {i} is {} at element {j}", g[j])));
            }
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(&mut self.v)) {
            for k in 0..p.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_nmse: f64,
    pub val_nmse: f64,
    pub val_nrmse: f64,
    /// Wall clock around the batch loop.
    pub train_seconds: f64,
    /// Wall clock of the validation pass.
    pub val_seconds: f64,
    pub batch_seconds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub kind: ModelKind,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were kept; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
    pub config_hash: String,
    pub dataset_hash: String,
    /// Training samples per epoch.
    pub train_samples: usize,
    pub val_samples: usize,
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.best_epoch.map(|e| &self.epochs[e - 1])
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["epoch", "train_nmse", "val_nrmse", "epoch_seconds", "val_seconds"])
            .map_err(csv_err)?;
        for r in &self.epochs {
            w.write_record([
                r.epoch.to_string(),
                r.train_nmse.to_string(),
                r.val_nrmse.to_string(),
                r.train_seconds.to_string(),
                r.val_seconds.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Result of a training run: the lowest-validation-loss weights and the log.
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: SurrogateModel,
    pub history: TrainHistory,
}

fn check_grid(model: &SurrogateModel, seqs: &[SequencePair]) -> Result<()> {
    let len = seqs.first().map_or(0, |s| s.drive.len());
    if seqs.iter().any(|s| s.drive.len() != len || s.target.len() != len) {
        return Err(Error::Contract("sequences of unequal length".into()));
    }
    if model.hyper.kind == ModelKind::Cat && len > model.hyper.max_len {
        return Err(Error::Contract(format!(
            "sequences of {len} samples exceed the model's positional table ({})",
            model.hyper.max_len
        )));
    }
    Ok(())
}

/// Mean batch loss and its gradient with respect to every parameter array.
fn batch_gradient(model: &SurrogateModel, batch: &[&SequencePair]) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut grads: Vec<Vec<f64>> = model.params.iter().map(|p| vec![0.0; p.tensor.numel()]).collect();
    let mut loss = 0.0;
    let w = 1.0 / batch.len() as f64;
    for seq in batch {
        let t = seq.drive.len();
        let mut tape = Tape::new();
        let p = model.bind(&mut tape, true)?;
        let x = tape.constant(&[t, 1], seq.drive.clone())?;
        let y = model.forward(&mut tape, &p, x)?;
        let target = tape.constant(&[t, 1], seq.target.clone())?;
        let d = tape.sub(y, target)?;
        let sq = tape.square(d);
        let l = tape.mean(sq)?;
        loss += w * tape.scalar(l)?;
        let g = tape.backward(l)?;
        for (acc, var) in grads.iter_mut().zip(&p) {
            if let Some(gv) = g.get(*var) {
                acc.iter_mut().zip(gv).for_each(|(a, b)| *a += w * b);
            }
        }
    }
    Ok((loss, grads))
}

/// Prediction error over whole sequences in normalized units.
fn split_nmse(model: &SurrogateModel, seqs: &[SequencePair]) -> Result<f64> {
    if seqs.is_empty() {
        return Err(Error::param("cannot evaluate on an empty split"));
    }
    let mut sse = 0.0;
    let mut n = 0usize;
    for s in seqs {
        let y = model.predict(&s.drive)?;
        sse += nmse(&y, &s.target, 1.0)? * y.len() as f64;
        n += y.len();
    }
    Ok(sse / n as f64)
}

/// NRMSE of a frozen model over a split. Targets are normalized with the
/// training map, so the range is 1.
pub fn evaluate(model: &SurrogateModel, data: &Dataset, split: Split) -> Result<f64> {
    Ok(split_nmse(model, data.split(split))?.sqrt())
}

/// Trains a copy of `model` with Adam on shuffled mini-batches and returns
/// the weights of the epoch with the lowest validation loss.
///
/// A non-finite loss or gradient aborts with [`Error::TrainingAborted`],
/// which carries the best weights seen so far.
pub fn train_surrogate(model: &SurrogateModel, data: &Dataset, cfg: &TrainConfig) -> Result<Trained> {
    fit(model, &data.train, &data.val, cfg, data.content_hash())
}

pub(crate) fn fit(
    model: &SurrogateModel,
    train: &[SequencePair],
    val: &[SequencePair],
    cfg: &TrainConfig,
    dataset_hash: String,
) -> Result<Trained> {
    cfg.validate()?;
    check_grid(model, train)?;
    check_grid(model, val)?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::param("training and validation splits must be non-empty"));
    }
    let mut current = model.clone();
    let sizes: Vec<usize> = current.params.iter().map(|p| p.tensor.numel()).collect();
    let mut adam = Adam::from_config(&sizes, cfg);
    let mut history = TrainHistory {
        kind: model.hyper.kind,
        epochs: Vec::with_capacity(cfg.epochs),
        best_epoch: None,
        config_hash: cfg.hash(),
        dataset_hash,
        train_samples: train.iter().map(|s| s.drive.len()).sum(),
        val_samples: val.iter().map(|s| s.drive.len()).sum(),
    };
    let mut best = model.clone();
    let mut best_loss = f64::INFINITY;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.epochs {
        let abort = |reason: String, best: &SurrogateModel| Error::TrainingAborted {
            epoch,
            reason,
            last_good: Box::new(best.clone()),
        };
        order.sort_unstable();
        order.shuffle(&mut stream_rng(cfg.seed, Stream::Shuffle, epoch as u64));
        let mut batch_seconds = Vec::with_capacity(order.len().div_ceil(cfg.batch_size));
        let mut loss_sum = 0.0;
        let start = Instant::now();
        for idx in order.chunks(cfg.batch_size) {
            let t0 = Instant::now();
            let batch: Vec<&SequencePair> = idx.iter().map(|&i| &train[i]).collect();
            let (loss, grads) = batch_gradient(&current, &batch)?;
            if !loss.is_finite() {
                return Err(abort(format!("batch loss is {loss}"), &best));
            }
            loss_sum += loss * batch.len() as f64;
            let mut views: Vec<&mut [f64]> = current.params.iter_mut().map(|p| p.tensor.data_mut()).collect();
            let gviews: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
            if let Err(e) = adam.step(&mut views, &gviews) {
                return Err(abort(e.to_string(), &best));
            }
            batch_seconds.push(t0.elapsed().as_secs_f64());
        }
        let train_seconds = start.elapsed().as_secs_f64();

        let t0 = Instant::now();
        let val_nmse = split_nmse(&current, val)?;
        let val_seconds = t0.elapsed().as_secs_f64();
        if !val_nmse.is_finite() {
            return Err(abort(format!("validation loss is {val_nmse}"), &best));
        }
        if val_nmse < best_loss {
            best_loss = val_nmse;
            best = current.clone();
            history.best_epoch = Some(epoch);
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_nmse: loss_sum / train.len() as f64,
            val_nmse,
            val_nrmse: val_nmse.sqrt(),
            train_seconds,
            val_seconds,
            batch_seconds,
        });
    }
    Ok(Trained { model: best, history })
}

#[derive(Debug, Clone)]
pub struct GridEntry {
    pub hyper: ModelHyper,
    pub val_nrmse: f64,
    /// Position in the submitted grid.
    pub index: usize,
}

#[derive(Debug, Clone)]
pub struct GridSearch {
    pub best: ModelHyper,
    /// Ascending validation NRMSE; ties keep grid order.
    pub leaderboard: Vec<GridEntry>,
}

/// Trains every candidate from `cfg.seed` and ranks them by validation NRMSE.
pub fn grid_search(kind: ModelKind, grid: &[ModelHyper], data: &Dataset, cfg: &TrainConfig) -> Result<GridSearch> {
    if grid.is_empty() {
        return Err(Error::param("hyperparameter grid is empty"));
    }
    if let Some(h) = grid.iter().find(|h| h.kind != kind) {
        return Err(Error::param(format!("grid entry of kind {} in a {kind} search", h.kind)));
    }
    let hash = data.content_hash();
    let mut leaderboard = Vec::with_capacity(grid.len());
    for (index, hyper) in grid.iter().enumerate() {
        let model = init_model(hyper, cfg.seed)?;
        let trained = fit(&model, &data.train, &data.val, cfg, hash.clone())?;
        let val_nrmse = trained.history.best().map_or_else(|| evaluate(&model, data, Split::Validation), |r| Ok(r.val_nrmse))?;
        leaderboard.push(GridEntry {
            hyper: *hyper,
            val_nrmse,
            index,
        });
    }
    leaderboard.sort_by(|a, b| a.val_nrmse.total_cmp(&b.val_nrmse).then(a.index.cmp(&b.index)));
    Ok(GridSearch {
        best: leaderboard[0].hyper,
        leaderboard,
    })
}

/// Writes a leaderboard as CSV (`rank, index, val_nrmse, hyper` as JSON).
pub fn write_leaderboard(path: &Path, search: &GridSearch) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["rank", "index", "val_nrmse", "hyper"]).map_err(csv_err)?;
    for (rank, e) in search.leaderboard.iter().enumerate() {
        w.write_record([
            (rank + 1).to_string(),
            e.index.to_string(),
            e.val_nrmse.to_string(),
            serde_json::to_string(&e.hyper)?,
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
