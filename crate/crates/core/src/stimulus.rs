//! Randomized drive waveforms: 4PAM-modulated pulses whose shape alternates
//! every block between a super-Gaussian and a random vector, then Gaussian
//! low-pass filtering.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAM4_LEVELS: [f64; 4] = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];

/// Stimulus geometry and data-set size. The symbol rate is given relative to
/// the laser's relaxation frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StimulusSpec {
    /// Symbol rate as a fraction of f_R.
    pub rate_fraction: f64,
    pub sps: usize,
    pub seq_len: usize,
    /// Symbols sharing one pulse-shape draw.
    pub block_len: usize,
    pub n_train_seq: usize,
    pub n_val_samples: usize,
    /// Low-pass 3 dB cutoff as a multiple of the symbol rate.
    pub lpf_cutoff: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Paper,
    Desk,
}

impl StimulusSpec {
    pub fn for_scale(scale: Scale, rate_fraction: f64, seed: u64) -> Self {
        let (n_train_seq, n_val_samples) = match scale {
            Scale::Paper => (1 << 13, 1 << 17),
            Scale::Desk => (1 << 9, 1 << 15),
        };
        StimulusSpec {
            rate_fraction,
            sps: 32,
            seq_len: 1024,
            block_len: 8,
            n_train_seq,
            n_val_samples,
            lpf_cutoff: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate_fraction > 0.0 && self.rate_fraction <= 2.0) {
            return Err(Error::param(format!(
                "rate fraction must lie in (0, 2], got {}",
                self.rate_fraction
            )));
        }
        if self.sps < 2 || self.seq_len == 0 || self.block_len == 0 {
            return Err(Error::param(
                "sps ≥ 2, seq_len ≥ 1 and block_len ≥ 1 required",
            ));
        }
        if self.seq_len % self.sps != 0 {
            return Err(Error::param(format!(
                "seq_len {} is not a multiple of sps {}",
                self.seq_len, self.sps
            )));
        }
        if self.symbols_per_seq() % self.block_len != 0 {
            return Err(Error::param(format!(
                "block_len {} does not divide {} symbols per sequence",
                self.block_len,
                self.symbols_per_seq()
            )));
        }
        if self.n_train_seq == 0
            || self.n_val_samples < self.seq_len
            || self.n_val_samples % self.seq_len != 0
        {
            return Err(Error::param(
                "need ≥1 training sequence and a whole number of validation sequences",
            ));
        }
        if !(self.lpf_cutoff > 0.0 && self.lpf_cutoff < self.sps as f64 / 2.0) {
            return Err(Error::param(
                "low-pass cutoff must lie between 0 and the Nyquist rate",
            ));
        }
        Ok(())
    }

    pub fn symbols_per_seq(&self) -> usize {
        self.seq_len / self.sps
    }

    pub fn n_val_seq(&self) -> usize {
        self.n_val_samples / self.seq_len
    }
}

/// `exp(−½·(2(t − T_sym/2)/T0)^{2n})`: full width `T0` at level `e^{−1/2}`.
pub fn supergaussian(t: f64, t0: f64, order: f64, t_sym: f64) -> f64 {
    let u = 2.0 * (t - 0.5 * t_sym) / t0;
    (-0.5 * (u * u).powf(order)).exp()
}

/// Super-Gaussian sampled at the sample centers `(k + ½)·T_sym/sps`.
pub fn supergaussian_pulse(t0: f64, order: f64, t_sym: f64, sps: usize) -> Vec<f64> {
    let dt = t_sym / sps as f64;
    (0..sps)
        .map(|k| supergaussian((k as f64 + 0.5) * dt, t0, order, t_sym))
        .collect()
}

/// `sps` samples of `|x|` with `x ~ N(0.5, 1)`.
pub fn random_pulse<R: Rng + ?Sized>(sps: usize, rng: &mut R) -> Vec<f64> {
    let normal: Normal<f64> = Normal::new(0.5, 1.0).expect("valid normal");
    (0..sps).map(|_| normal.sample(rng).abs()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PulseShape {
    SuperGaussian { t0: f64, order: f64 },
    Random { samples: Vec<f64> },
}

/// Draws the shape of block `block`: even blocks super-Gaussian with
/// `T0 = |N(T_sym/4, T_sym)|` (re-drawn below one sample period) and order
/// `U(1, 6)`, odd blocks a random pulse vector.
pub fn draw_shape_params<R: Rng + ?Sized>(
    block: usize,
    t_sym: f64,
    sps: usize,
    rng: &mut R,
) -> PulseShape {
    if block % 2 == 0 {
        let normal: Normal<f64> = Normal::new(0.25 * t_sym, t_sym).expect("valid normal");
        let min = t_sym / sps as f64;
        let t0 = loop {
            let t0 = normal.sample(rng).abs();
            if t0 >= min {
                break t0;
            }
        };
        let order = Uniform::new_inclusive(1.0, 6.0)
            .expect("valid range")
            .sample(rng);
        PulseShape::SuperGaussian { t0, order }
    } else {
        PulseShape::Random {
            samples: random_pulse(sps, rng),
        }
    }
}

/// Zero-phase Gaussian FIR with its 3 dB point at `f_cut`, truncated at ±4σ
/// and scaled to unit DC gain.
pub fn gaussian_kernel(f_cut: f64, f_s: f64) -> Result<Vec<f64>> {
    if !(f_cut > 0.0 && f_cut < 0.5 * f_s) {
        return Err(Error::param(format!(
            "cutoff {f_cut:e} Hz must lie in (0, f_s/2) with f_s = {f_s:e}"
        )));
    }
    let sigma_f = f_cut / std::f64::consts::LN_2.sqrt();
    let sigma_n = f_s / (2.0 * std::f64::consts::PI * sigma_f);
    let half = (4.0 * sigma_n).ceil() as isize;
    let mut h: Vec<f64> = (-half..=half)
        .map(|k| (-0.5 * (k as f64 / sigma_n).powi(2)).exp())
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= sum);
    Ok(h)
}

/// Centered convolution with edge-replicated padding.
pub fn lowpass_filter(x: &[f64], f_cut: f64, f_s: f64) -> Result<Vec<f64>> {
    let h = gaussian_kernel(f_cut, f_s)?;
    Ok(filter_centered(x, &h))
}

pub(crate) fn filter_centered(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() {
        return vec![];
    }
    let half = (h.len() / 2) as isize;
    let last = x.len() as isize - 1;
    (0..x.len() as isize)
        .map(|t| {
            h.iter()
                .enumerate()
                .map(|(j, w)| w * x[(t + j as isize - half).clamp(0, last) as usize])
                .sum()
        })
        .collect()
}

/// One drive sequence before normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSequence {
    /// Low-pass filtered waveform.
    pub waveform: Vec<f64>,
    pub symbols: Vec<u8>,
    pub shapes: Vec<PulseShape>,
}

/// Pulse train of `spec.symbols_per_seq()` 4PAM symbols, shape re-drawn every
/// block, then low-pass filtered.
pub fn build_drive_sequence<R: Rng + ?Sized>(
    spec: &StimulusSpec,
    symbol_rate: f64,
    rng: &mut R,
) -> Result<RawSequence> {
    let t_sym = 1.0 / symbol_rate;
    let n_sym = spec.symbols_per_seq();
    let mut waveform = Vec::with_capacity(spec.seq_len);
    let mut symbols = Vec::with_capacity(n_sym);
    let mut shapes = Vec::with_capacity(n_sym / spec.block_len);
    let mut pulse = Vec::new();
    for k in 0..n_sym {
        if k % spec.block_len == 0 {
            let shape = draw_shape_params(k / spec.block_len, t_sym, spec.sps, rng);
            pulse = match &shape {
                PulseShape::SuperGaussian { t0, order } => {
                    supergaussian_pulse(*t0, *order, t_sym, spec.sps)
                }
                PulseShape::Random { samples } => samples.clone(),
            };
            shapes.push(shape);
        }
        let s: u8 = rng.random_range(0..4);
        symbols.push(s);
        waveform.extend(pulse.iter().map(|p| p * PAM4_LEVELS[s as usize]));
    }
    let f_s = symbol_rate * spec.sps as f64;
    let waveform = lowpass_filter(&waveform, spec.lpf_cutoff * symbol_rate, f_s)?;
    Ok(RawSequence {
        waveform,
        symbols,
        shapes,
    })
}
