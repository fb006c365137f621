//! Experiment drivers: symbol-rate sweeps, timing tables, eye diagrams and
//! the equalization cross-test grid.

mod eye;
mod sweep;
mod timing;

use std::path::Path;

pub use eye::{eye_diagram, gaussian_pulse_stream, EyeDiagram, EyeSpec, RailStats};
pub use sweep::{
    distortion_nrmse, epoch_means, run_cell, run_rate_sweep, sweep_dataset, write_sweep_csv,
    SweepCell, SweepRow, SweepSpec, DEFAULT_RATES,
};
pub use timing::{ode_generation_seconds, timing_report, write_timing_csv, TimingRow};

use crate::equalizer::{cross_evaluate, train_equalizer, Channel, EqRunConfig, EvalStream, Link};
use crate::error::Result;
use crate::training::csv_err;

#[derive(Debug, Clone, PartialEq)]
pub struct EqRow {
    pub channel: String,
    pub rate_fraction: f64,
    /// Held-out stream through the training channel.
    pub self_nrmse: f64,
    /// Held-out stream through the rate equations.
    pub ode_nrmse: f64,
    /// Final training loss.
    pub train_nrmse: f64,
    pub seed: u64,
}

/// Trains taps on `channel` and tests them on it and on the ODE channel.
pub fn equalization_cell(channel: &Channel, link: &Link, cfg: &EqRunConfig) -> Result<EqRow> {
    let (eq, h) = train_equalizer(channel, link, cfg)?;
    let self_nrmse = cross_evaluate(&eq, channel, link, cfg, EvalStream::HeldOut)?;
    let ode_nrmse = match channel {
        Channel::Ode => self_nrmse,
        _ => cross_evaluate(&eq, &Channel::Ode, link, cfg, EvalStream::HeldOut)?,
    };
    Ok(EqRow {
        channel: channel.id(),
        rate_fraction: cfg.rate_fraction,
        self_nrmse,
        ode_nrmse,
        train_nrmse: h.final_loss,
        seed: cfg.seed,
    })
}

pub fn write_equalization_csv(path: &Path, rows: &[EqRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["channel", "rate_fraction", "self_nrmse", "ode_nrmse", "train_nrmse", "seed"])
        .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.channel.clone(),
            format!("{:.2}", r.rate_fraction),
            r.self_nrmse.to_string(),
            r.ode_nrmse.to_string(),
            r.train_nrmse.to_string(),
            r.seed.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
