use std::path::Path;

use image::{GrayImage, Luma};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::equalizer::Link;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::stimulus::{lowpass_filter, supergaussian_pulse, PAM4_LEVELS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EyeSpec {
    /// Symbol periods per trace.
    pub window_symbols: usize,
    pub time_bins: usize,
    pub amp_bins: usize,
}

impl Default for EyeSpec {
    fn default() -> Self {
        EyeSpec {
            window_symbols: 2,
            time_bins: 64,
            amp_bins: 256,
        }
    }
}

/// Count histogram of a folded waveform. `counts[a * time_bins + t]`, with
/// amplitude bin 0 at `lo`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EyeDiagram {
    pub spec: EyeSpec,
    pub sps: usize,
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

pub fn eye_diagram(x: &[f64], sps: usize, spec: &EyeSpec) -> Result<EyeDiagram> {
    if sps == 0 || spec.window_symbols == 0 || spec.time_bins == 0 || spec.amp_bins == 0 {
        return Err(Error::param("eye geometry must be non-zero"));
    }
    if x.len() < 4 * sps {
        return Err(Error::param(format!(
            "eye needs at least 4 symbol periods ({} samples), got {}",
            4 * sps,
            x.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite sample in eye input".into()));
    }
    let mut lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let period = spec.window_symbols * sps;
    let mut counts = vec![0u64; spec.amp_bins * spec.time_bins];
    for (i, &v) in x.iter().enumerate() {
        let t = (i % period) * spec.time_bins / period;
        let a = (((v - lo) / (hi - lo)) * spec.amp_bins as f64) as usize;
        counts[a.min(spec.amp_bins - 1) * spec.time_bins + t] += 1;
    }
    Ok(EyeDiagram {
        spec: *spec,
        sps,
        lo,
        hi,
        counts,
    })
}

impl EyeDiagram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn column(&self, t: usize) -> Vec<u64> {
        (0..self.spec.amp_bins)
            .map(|a| self.counts[a * self.spec.time_bins + t])
            .collect()
    }

    fn amp_center(&self, a: usize) -> f64 {
        self.lo + (a as f64 + 0.5) * (self.hi - self.lo) / self.spec.amp_bins as f64
    }

    /// Grayscale rendering, high amplitudes at the top, log-scaled counts.
    pub fn write_png(&self, path: &Path) -> Result<()> {
        let (w, h) = (self.spec.time_bins as u32, self.spec.amp_bins as u32);
        let peak = self.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
        let img = GrayImage::from_fn(w, h, |x, y| {
            let a = (h - 1 - y) as usize;
            let c = self.counts[a * self.spec.time_bins + x as usize] as f64;
            Luma([(255.0 * (1.0 + c).ln() / (1.0 + peak).ln()).round() as u8])
        });
        img.save(path)
            .map_err(|e| Error::Io(std::io::Error::other(e)))
    }

    /// JSON header followed by the row-major count matrix.
    pub fn write_json(&self, path: &Path, meta: serde_json::Value) -> Result<()> {
        let doc = json!({
            "header": {
                "time_bins": self.spec.time_bins,
                "amp_bins": self.spec.amp_bins,
                "window_symbols": self.spec.window_symbols,
                "sps": self.sps,
                "lo": self.lo,
                "hi": self.hi,
                "total": self.total(),
                "run": meta,
            },
            "counts": self.counts,
        });
        std::fs::write(path, serde_json::to_vec(&doc)?)?;
        Ok(())
    }

    /// Four-rail statistics at the time bin where the rails are best
    /// separated.
    pub fn rails(&self) -> Option<RailStats> {
        (0..self.spec.time_bins)
            .filter_map(|t| self.rails_at(t))
            .max_by(|a, b| a.fisher.total_cmp(&b.fisher))
    }

    pub fn rails_at(&self, t: usize) -> Option<RailStats> {
        let col = self.column(t);
        let bins: Vec<(usize, f64, f64)> = col
            .iter()
            .enumerate()
            .filter(|(_, c)| **c > 0)
            .map(|(a, c)| (a, self.amp_center(a), *c as f64))
            .collect();
        let groups = four_way_split(&bins)?;
        let total: f64 = bins.iter().map(|b| b.2).sum();
        let grand = bins.iter().map(|b| b.1 * b.2).sum::<f64>() / total;
        let mut means = [0.0; 4];
        let mut stds = [0.0; 4];
        let mut between = 0.0;
        // uniform spread inside a bin keeps quantized rails at finite width
        let q = ((self.hi - self.lo) / self.spec.amp_bins as f64).powi(2) / 12.0;
        let mut within = 0.0;
        for (k, g) in groups.iter().enumerate() {
            let part = &bins[g.0..g.1];
            let w: f64 = part.iter().map(|b| b.2).sum();
            let m = part.iter().map(|b| b.1 * b.2).sum::<f64>() / w;
            let ss: f64 = part.iter().map(|b| b.2 * ((b.1 - m).powi(2) + q)).sum();
            means[k] = m;
            stds[k] = (ss / w).sqrt();
            between += w * (m - grand).powi(2);
            within += ss;
        }
        let open_eyes = groups
            .windows(2)
            .filter(|p| bins[p[1].0].0 > bins[p[0].1 - 1].0 + 1)
            .count();
        Some(RailStats {
            time_bin: t,
            means,
            stds,
            fisher: between / within,
            open_eyes,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RailStats {
    pub time_bin: usize,
    pub means: [f64; 4],
    pub stds: [f64; 4],
    /// Between-rail over within-rail sum of squares.
    pub fisher: f64,
    /// Adjacent rails separated by at least one empty amplitude bin.
    pub open_eyes: usize,
}

/// Optimal partition of sorted weighted points into four contiguous groups
/// by least within-group squared error. Returns half-open index ranges.
fn four_way_split(bins: &[(usize, f64, f64)]) -> Option<[(usize, usize); 4]> {
    const K: usize = 4;
    let n = bins.len();
    if n < K {
        return None;
    }
    let mut w = vec![0.0; n + 1];
    let mut s1 = vec![0.0; n + 1];
    let mut s2 = vec![0.0; n + 1];
    for (i, b) in bins.iter().enumerate() {
        w[i + 1] = w[i] + b.2;
        s1[i + 1] = s1[i] + b.2 * b.1;
        s2[i + 1] = s2[i] + b.2 * b.1 * b.1;
    }
    let cost = |a: usize, b: usize| {
        let ww = w[b] - w[a];
        let m = s1[b] - s1[a];
        (s2[b] - s2[a] - m * m / ww).max(0.0)
    };
    // best[k][j]: first j points in k+1 groups
    let mut best = vec![vec![f64::INFINITY; n + 1]; K];
    let mut cut = vec![vec![0usize; n + 1]; K];
    for j in 1..=n {
        best[0][j] = cost(0, j);
    }
    for k in 1..K {
        for j in k + 1..=n {
            for i in k..j {
                let c = best[k - 1][i] + cost(i, j);
                if c < best[k][j] {
                    best[k][j] = c;
                    cut[k][j] = i;
                }
            }
        }
    }
    let mut out = [(0, 0); K];
    let mut end = n;
    for k in (0..K).rev() {
        let start = if k == 0 { 0 } else { cut[k][end] };
        out[k] = (start, end);
        end = start;
    }
    Some(out)
}

/// 4PAM train of Gaussian pulses (full width `T_sym/2` at `e^{−1/2}`)
/// through the link's low-pass filter and drive map.
pub fn gaussian_pulse_stream(link: &Link, n_symbols: usize, seed: u64) -> Result<Vec<f64>> {
    let sps = link.spec.sps;
    let t_sym = 1.0 / link.grid.symbol_rate;
    let pulse = supergaussian_pulse(0.5 * t_sym, 1.0, t_sym, sps);
    let mut rng = stream_rng(seed, Stream::Misc, 0);
    let mut x = Vec::with_capacity(n_symbols * sps);
    for _ in 0..n_symbols {
        let level = PAM4_LEVELS[rng.random_range(0..4)];
        x.extend(pulse.iter().map(|p| p * level));
    }
    let x = lowpass_filter(
        &x,
        link.spec.lpf_cutoff * link.grid.symbol_rate,
        link.grid.sample_rate,
    )?;
    Ok(link.grid.drive_map.apply(&x))
}
