//! 31-tap FIR equalizer trained through a frozen channel against the
//! low-pass filtered transmit waveform, and cross-testing of learned taps on
//! other channels.

use std::path::Path;

use dml_autodiff::{Tape, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Grid};
use crate::error::{Error, Result};
use crate::laser::{LaserConfig, MinMax};
use crate::rng::{stream_rng, Stream};
use crate::stimulus::{lowpass_filter, StimulusSpec, PAM4_LEVELS};
use crate::surrogates::SurrogateModel;
use crate::training::{nrmse, Adam};

pub const N_TAPS: usize = 31;
pub const MAX_DELAY: usize = 15;

/// Loss must stay above this multiple of the initial loss for
/// [`DIVERGENCE_PATIENCE`] iterations before training gives up.
pub const DIVERGENCE_FACTOR: f64 = 10.0;
pub const DIVERGENCE_PATIENCE: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FirEqualizer {
    pub taps: Vec<f64>,
    /// Samples by which the equalizer output lags the reference.
    pub delay: usize,
    /// Channel the taps were trained on.
    pub channel: String,
}

impl FirEqualizer {
    /// Pass-through taps `δ[0]`.
    pub fn identity(delay: usize, channel: &str) -> Self {
        let mut taps = vec![0.0; N_TAPS];
        taps[0] = 1.0;
        FirEqualizer {
            taps,
            delay,
            channel: channel.to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.taps.len() != N_TAPS {
            return Err(Error::param(format!(
                "equalizer needs {N_TAPS} taps, got {}",
                self.taps.len()
            )));
        }
        if self.delay > MAX_DELAY {
            return Err(Error::param(format!(
                "delay {} exceeds {MAX_DELAY}",
                self.delay
            )));
        }
        if self.taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::Numerical("non-finite equalizer tap".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let eq: FirEqualizer = serde_json::from_slice(&std::fs::read(path)?)?;
        eq.validate()?;
        Ok(eq)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EqRunConfig {
    /// Symbol rate as a fraction of f_R.
    pub rate_fraction: f64,
    pub n_symbols: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub iterations: usize,
}

impl EqRunConfig {
    pub fn new(rate_fraction: f64, seed: u64) -> Self {
        EqRunConfig {
            rate_fraction,
            n_symbols: 512,
            seed,
            learning_rate: 3e-3,
            iterations: 1500,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate_fraction > 0.0 && self.rate_fraction <= 2.0) {
            return Err(Error::param(format!(
                "rate fraction must lie in (0, 2], got {}",
                self.rate_fraction
            )));
        }
        if self.n_symbols < 256 {
            return Err(Error::param(format!(
                "need at least 256 symbols, got {}",
                self.n_symbols
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param("learning rate must be positive"));
        }
        Ok(())
    }
}

/// Transmitter framing shared with the training data: pulse grid, low-pass
/// filter and the stored normalization maps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub spec: StimulusSpec,
    pub grid: Grid,
    pub laser: LaserConfig,
}

impl Link {
    pub fn from_dataset(data: &Dataset) -> Self {
        Link {
            spec: data.spec,
            grid: data.grid,
            laser: data.laser,
        }
    }

    fn check(&self, cfg: &EqRunConfig) -> Result<()> {
        cfg.validate()?;
        let r = self.spec.rate_fraction;
        if (cfg.rate_fraction - r).abs() > 1e-12 * r {
            return Err(Error::param(format!(
                "run is at {} f_R but the link was built for {r} f_R",
                cfg.rate_fraction
            )));
        }
        Ok(())
    }
}

/// A frozen channel between the drive and the equalizer.
#[derive(Debug, Clone)]
pub enum Channel {
    Identity,
    /// Pure integer-sample delay.
    Delay(usize),
    /// Rate equations followed by the link's stored power normalization.
    Ode,
    Surrogate(Box<SurrogateModel>),
}

impl Channel {
    pub fn id(&self) -> String {
        match self {
            Channel::Identity => "identity".into(),
            Channel::Delay(d) => format!("delay{d}"),
            Channel::Ode => "ode".into(),
            Channel::Surrogate(m) => m.hyper.kind.name().into(),
        }
    }

    /// Channel output for a normalized drive. Stateful channels process
    /// consecutive `seq_len` chunks, each starting from rest as in the
    /// training data.
    pub fn respond(&self, link: &Link, drive: &[f64]) -> Result<Vec<f64>> {
        match self {
            Channel::Identity => Ok(drive.to_vec()),
            Channel::Delay(d) => Ok((0..drive.len())
                .map(|t| if t >= *d { drive[t - d] } else { 0.0 })
                .collect()),
            Channel::Ode => chunked(drive, link.spec.seq_len, |c| {
                let p = link.laser.simulate(c, link.grid.sample_rate)?;
                Ok(link.grid.target_map.apply(&p))
            }),
            Channel::Surrogate(m) => chunked(drive, link.spec.seq_len, |c| m.predict(c)),
        }
    }
}

fn chunked(
    x: &[f64],
    len: usize,
    mut f: impl FnMut(&[f64]) -> Result<Vec<f64>>,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(x.len());
    for (i, c) in x.chunks(len).enumerate() {
        out.extend(f(c).map_err(|e| Error::Sequence {
            index: i,
            source: Box::new(e),
        })?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SquareStream {
    pub symbols: Vec<u8>,
    /// Rectangular pulses before filtering.
    pub square: Vec<f64>,
    /// Filtered and normalized drive; also the equalizer reference.
    pub drive: Vec<f64>,
}

pub fn square_wave(symbols: &[u8], sps: usize) -> Vec<f64> {
    symbols
        .iter()
        .flat_map(|&s| std::iter::repeat_n(PAM4_LEVELS[s as usize], sps))
        .collect()
}

/// Square-pulse 4PAM through the link's low-pass filter and drive map.
pub fn gen_square_4pam<R: Rng + ?Sized>(
    cfg: &EqRunConfig,
    link: &Link,
    rng: &mut R,
) -> Result<SquareStream> {
    link.check(cfg)?;
    let symbols: Vec<u8> = (0..cfg.n_symbols).map(|_| rng.random_range(0..4)).collect();
    let square = square_wave(&symbols, link.spec.sps);
    let filtered = lowpass_filter(
        &square,
        link.spec.lpf_cutoff * link.grid.symbol_rate,
        link.grid.sample_rate,
    )?;
    Ok(SquareStream {
        symbols,
        square,
        drive: link.grid.drive_map.apply(&filtered),
    })
}

/// Which symbol stream a run uses. Training and held-out streams come from
/// distinct random streams of the same seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalStream {
    Training,
    HeldOut,
}

pub fn symbol_stream(cfg: &EqRunConfig, link: &Link, which: EvalStream) -> Result<SquareStream> {
    let index = match which {
        EvalStream::Training => 0,
        EvalStream::HeldOut => 1,
    };
    gen_square_4pam(cfg, link, &mut stream_rng(cfg.seed, Stream::Equalizer, index))
}

/// Causal convolution `y[t] = Σ_k taps[k]·x[t−k]`, zero before the start.
pub fn fir_apply(eq: &FirEqualizer, x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|t| {
            eq.taps
                .iter()
                .take(t + 1)
                .enumerate()
                .map(|(k, w)| w * x[t - k])
                .sum()
        })
        .collect()
}

fn check_pair(received: &[f64], reference: &[f64], delay: usize) -> Result<MinMax> {
    if received.len() != reference.len() {
        return Err(Error::Contract(format!(
            "received {} samples against a {}-sample reference",
            received.len(),
            reference.len()
        )));
    }
    if delay >= received.len() {
        return Err(Error::param("delay leaves no samples to compare"));
    }
    MinMax::fit(&reference[..reference.len() - delay])
}

/// NRMSE between the equalizer output and the reference shifted by
/// `eq.delay`, normalized by the reference range.
pub fn aligned_nrmse(eq: &FirEqualizer, received: &[f64], reference: &[f64]) -> Result<f64> {
    eq.validate()?;
    let map = check_pair(received, reference, eq.delay)?;
    let y = fir_apply(eq, received);
    let n = y.len() - eq.delay;
    nrmse(&y[eq.delay..], &reference[..n], map.range())
}

/// The same loss recorded on `tape` as a function of the taps `[31]`.
pub fn equalizer_loss(
    tape: &mut Tape,
    taps: Var,
    received: &[f64],
    reference: &[f64],
    delay: usize,
) -> Result<Var> {
    let map = check_pair(received, reference, delay)?;
    let n = received.len() - delay;
    let x = tape.constant(&[received.len(), 1], received.to_vec())?;
    let lags = tape.lag_matrix(x, N_TAPS)?;
    let w = tape.reshape(taps, &[N_TAPS, 1])?;
    let y = tape.matmul(lags, w)?;
    let y = tape.slice_rows(y, delay, n)?;
    let r = tape.constant(&[n, 1], reference[..n].to_vec())?;
    let e = tape.sub(y, r)?;
    let e = tape.square(e);
    let mse = tape.mean(e)?;
    let rmse = tape.sqrt(mse)?;
    Ok(tape.scale(rmse, 1.0 / map.range()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EqHistory {
    /// Loss of `δ[0]` at each candidate delay.
    pub delay_scan: Vec<f64>,
    /// Loss before every update.
    pub losses: Vec<f64>,
    /// Un-equalized loss at the chosen delay.
    pub baseline: f64,
    /// Loss of the returned taps on the training stream.
    pub final_loss: f64,
}

pub fn train_equalizer(
    channel: &Channel,
    link: &Link,
    cfg: &EqRunConfig,
) -> Result<(FirEqualizer, EqHistory)> {
    let stream = symbol_stream(cfg, link, EvalStream::Training)?;
    let received = channel.respond(link, &stream.drive)?;
    let reference = &stream.drive;

    let delay_scan = (0..=MAX_DELAY)
        .map(|d| aligned_nrmse(&FirEqualizer::identity(d, ""), &received, reference))
        .collect::<Result<Vec<_>>>()?;
    let mut delay = 0;
    for (d, l) in delay_scan.iter().enumerate() {
        if *l < delay_scan[delay] {
            delay = d;
        }
    }
    let baseline = delay_scan[delay];
    if !baseline.is_finite() {
        return Err(Error::Numerical(format!(
            "channel '{}' produced a non-finite output",
            channel.id()
        )));
    }

    let mut eq = FirEqualizer::identity(delay, &channel.id());
    let mut best = (baseline, eq.taps.clone());
    let mut adam = Adam::new(&[N_TAPS], cfg.learning_rate, 0.9, 0.999, 1e-8);
    let mut losses = Vec::with_capacity(cfg.iterations);
    let mut above = 0;
    for it in 0..cfg.iterations {
        let mut tape = Tape::new();
        let w = tape.leaf(&Tensor::param(&[N_TAPS], eq.taps.clone())?);
        let loss = equalizer_loss(&mut tape, w, &received, reference, delay)?;
        let l = tape.scalar(loss)?;
        losses.push(l);
        if l < best.0 {
            best = (l, eq.taps.clone());
        }
        if l == 0.0 {
            break;
        }
        above = if l > DIVERGENCE_FACTOR * baseline { above + 1 } else { 0 };
        if above >= DIVERGENCE_PATIENCE {
            return Err(Error::Divergence(format!(
                "channel '{}' at {} f_R: loss {l:.3e} above {DIVERGENCE_FACTOR}× the initial {baseline:.3e} for {above} iterations (iteration {it})",
                channel.id(),
                cfg.rate_fraction
            )));
        }
        let grads = tape.backward(loss)?;
        let g = grads.get(w).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; N_TAPS]);
        adam.step(&mut [&mut eq.taps[..]], &[&g])?;
    }
    if let Ok(l) = aligned_nrmse(&eq, &received, reference) {
        if l < best.0 {
            best = (l, eq.taps.clone());
        }
    }
    eq.taps = best.1;
    let final_loss = aligned_nrmse(&eq, &received, reference)?;
    Ok((
        eq,
        EqHistory {
            delay_scan,
            losses,
            baseline,
            final_loss,
        },
    ))
}

/// Loss of frozen taps on `channel` for the chosen symbol stream.
pub fn cross_evaluate(
    eq: &FirEqualizer,
    channel: &Channel,
    link: &Link,
    cfg: &EqRunConfig,
    which: EvalStream,
) -> Result<f64> {
    let stream = symbol_stream(cfg, link, which)?;
    let received = channel.respond(link, &stream.drive)?;
    aligned_nrmse(eq, &received, &stream.drive)
}
