use std::path::Path;
use std::time::Instant;

use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::training::{csv_err, TrainHistory};

use super::sweep::epoch_means;

#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    /// Model kind or `ode`.
    pub name: String,
    /// Samples covered by one inference pass.
    pub samples: usize,
    pub train_s_per_epoch: Option<f64>,
    /// Inference seconds per pass, rescaled to `samples`.
    pub infer_s_per_epoch: f64,
}

/// Wall time to regenerate the split's targets with the rate equations.
pub fn ode_generation_seconds(data: &Dataset, split: Split) -> Result<(f64, usize)> {
    let seqs = data.split(split);
    let start = Instant::now();
    let mut samples = 0;
    for s in seqs {
        samples += data.laser.simulate(&s.drive, data.grid.sample_rate)?.len();
    }
    Ok((start.elapsed().as_secs_f64(), samples))
}

/// One row per history plus the ODE row, all scaled to the ODE sample count.
pub fn timing_report(histories: &[TrainHistory], ode: (f64, usize)) -> Result<Vec<TimingRow>> {
    if histories.is_empty() {
        return Err(Error::param("timing report needs at least one history"));
    }
    let (ode_s, samples) = ode;
    let mut rows = vec![TimingRow {
        name: "ode".into(),
        samples,
        train_s_per_epoch: None,
        infer_s_per_epoch: ode_s,
    }];
    for h in histories {
        let (train, val) = epoch_means(h).ok_or_else(|| {
            Error::param(format!("{} history has no epochs", h.kind))
        })?;
        if h.val_samples == 0 {
            return Err(Error::param("history records no validation samples"));
        }
        rows.push(TimingRow {
            name: h.kind.to_string(),
            samples,
            train_s_per_epoch: Some(train),
            infer_s_per_epoch: val * samples as f64 / h.val_samples as f64,
        });
    }
    Ok(rows)
}

pub fn write_timing_csv(path: &Path, rows: &[TimingRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["name", "samples", "train_s_per_epoch", "infer_s_per_epoch", "infer_vs_ode"])
        .map_err(csv_err)?;
    let ode = rows
        .iter()
        .find(|r| r.name == "ode")
        .map_or(f64::NAN, |r| r.infer_s_per_epoch);
    for r in rows {
        w.write_record([
            r.name.clone(),
            r.samples.to_string(),
            r.train_s_per_epoch.map(|v| v.to_string()).unwrap_or_default(),
            r.infer_s_per_epoch.to_string(),
            (r.infer_s_per_epoch / ode).to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
