use dml_twin::dataset::{generate_dataset, Dataset};
use dml_twin::laser::LaserConfig;
use dml_twin::rng::{stream_rng, Stream};
use dml_twin::stimulus::{
    build_drive_sequence, draw_shape_params, gaussian_kernel, random_pulse, PulseShape, Scale,
    StimulusSpec,
};
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// Kolmogorov–Smirnov statistic of `xs` against `cdf`.
fn ks(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic 1% critical value of the one-sample KS statistic.
fn ks_critical(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

fn folded_cdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let n = Normal::new(0.0, 1.0).unwrap();
    n.cdf((x - mu) / sigma) - n.cdf((-x - mu) / sigma)
}

const DRAWS: usize = 100_000;

#[test]
fn t0_follows_truncated_folded_normal() {
    let t_sym = 1.0;
    let sps = 32;
    let mut rng = stream_rng(42, Stream::Misc, 0);
    let (mut t0s, mut orders) = (Vec::new(), Vec::new());
    while t0s.len() < DRAWS {
        if let PulseShape::SuperGaussian { t0, order } = draw_shape_params(0, t_sym, sps, &mut rng)
        {
            t0s.push(t0);
            orders.push(order);
        }
    }
    let a = t_sym / sps as f64;
    let fa = folded_cdf(a, 0.25 * t_sym, t_sym);
    let d = ks(t0s.clone(), |x| {
        (folded_cdf(x, 0.25 * t_sym, t_sym) - fa) / (1.0 - fa)
    });
    assert!(d < ks_critical(DRAWS), "T0 KS = {d}");
    assert!(d < 0.01);
    assert!(t0s.iter().all(|&t| t >= a));

    assert!(orders.iter().all(|n| (1.0..=6.0).contains(n)));
    let d = ks(orders, |x| ((x - 1.0) / 5.0).clamp(0.0, 1.0));
    assert!(d < ks_critical(DRAWS), "order KS = {d}");
}

#[test]
fn random_pulse_samples_are_folded_normal() {
    let mut rng = stream_rng(7, Stream::Misc, 1);
    let mut xs = Vec::with_capacity(1_000_000);
    while xs.len() < 1_000_000 {
        xs.extend(random_pulse(32, &mut rng));
    }
    assert!(xs.iter().all(|x| *x >= 0.0));
    let (mu, sigma) = (0.5f64, 1.0f64);
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let expected =
        sigma * (2.0 / std::f64::consts::PI).sqrt() * (-mu * mu / (2.0 * sigma * sigma)).exp()
            + mu * (1.0 - 2.0 * std_normal.cdf(-mu / sigma));
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    assert!((mean / expected - 1.0).abs() < 0.01, "{mean} vs {expected}");
    let sample: Vec<f64> = xs[..DRAWS].to_vec();
    let d = ks(sample, |x| folded_cdf(x, mu, sigma));
    assert!(d < ks_critical(DRAWS), "KS = {d}");
}

#[test]
fn pam4_symbols_are_equiprobable() {
    let spec = StimulusSpec::for_scale(Scale::Desk, 0.5, 9);
    let mut counts = [0usize; 4];
    let mut i = 0;
    while counts.iter().sum::<usize>() < DRAWS {
        let seq = build_drive_sequence(&spec, 1e9, &mut stream_rng(9, Stream::Train, i)).unwrap();
        for s in seq.symbols {
            counts[s as usize] += 1;
        }
        i += 1;
    }
    let n = counts.iter().sum::<usize>() as f64;
    let chi2: f64 = counts
        .iter()
        .map(|&c| (c as f64 - n / 4.0).powi(2) / (n / 4.0))
        .sum();
    let crit = ChiSquared::new(3.0).unwrap().inverse_cdf(0.99);
    assert!(chi2 < crit, "chi² = {chi2} (critical {crit})");
    for c in counts {
        assert!((c as f64 / n - 0.25).abs() < 0.01 * 0.25 * 4.0);
    }
}

#[test]
fn shapes_are_shared_within_blocks_but_amplitudes_are_not() {
    let spec = StimulusSpec {
        lpf_cutoff: 15.9,
        ..StimulusSpec::for_scale(Scale::Desk, 0.5, 1)
    };
    let seq = build_drive_sequence(&spec, 1e9, &mut stream_rng(1, Stream::Train, 0)).unwrap();
    assert_eq!(seq.symbols.len(), 32);
    assert_eq!(seq.shapes.len(), 4);
    for (k, shape) in seq.shapes.iter().enumerate() {
        assert_eq!(matches!(shape, PulseShape::SuperGaussian { .. }), k % 2 == 0);
    }
    let distinct: std::collections::HashSet<u8> = seq.symbols[..8].iter().copied().collect();
    assert!(distinct.len() > 1);
}

#[test]
fn lowpass_attenuates_three_times_symbol_rate() {
    let (rs, fs) = (1.0, 32.0);
    let h = gaussian_kernel(rs, fs).unwrap();
    let half = (h.len() / 2) as f64;
    let resp = |f: f64| {
        let (mut re, mut im) = (0.0, 0.0);
        for (k, w) in h.iter().enumerate() {
            let ph = -2.0 * std::f64::consts::PI * f * (k as f64 - half) / fs;
            re += w * ph.cos();
            im += w * ph.sin();
        }
        (re, im)
    };
    let (re3, im3) = resp(3.0 * rs);
    assert!(im3.abs() < 1e-12, "kernel must be zero-phase");
    assert!(20.0 * re3.abs().log10() < -10.0);
    let (re1, _) = resp(rs);
    assert!(
        (20.0 * re1.log10() + 3.0103).abs() < 0.05,
        "3 dB point: {} dB",
        20.0 * re1.log10()
    );
}

fn tiny_spec(seed: u64, rate: f64) -> StimulusSpec {
    StimulusSpec {
        n_train_seq: 4,
        n_val_samples: 2048,
        ..StimulusSpec::for_scale(Scale::Desk, rate, seed)
    }
}

#[test]
fn dataset_is_normalized_reproducible_and_persistent() {
    let laser = LaserConfig::default();
    let ds = generate_dataset(&tiny_spec(5, 0.54), &laser).unwrap();
    assert_eq!(ds.train.len(), 4);
    assert_eq!(ds.val.len(), 2);
    for p in &ds.train {
        assert_eq!(p.drive.len(), 1024);
        assert!(p
            .drive
            .iter()
            .chain(&p.target)
            .all(|v| (0.0..=1.0).contains(v)));
    }
    let again = generate_dataset(&tiny_spec(5, 0.54), &laser).unwrap();
    assert_eq!(ds.content_hash(), again.content_hash());
    let other = generate_dataset(&tiny_spec(6, 0.54), &laser).unwrap();
    assert_ne!(ds.content_hash(), other.content_hash());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.dmlds");
    ds.save(&path).unwrap();
    let back = Dataset::load(&path).unwrap();
    assert_eq!(back, ds);
    assert_eq!(back.content_hash(), ds.content_hash());
}

#[test]
fn paper_scale_sizes() {
    let s = StimulusSpec::for_scale(Scale::Paper, 0.98, 0);
    assert_eq!(s.n_train_seq, 8192);
    assert_eq!(s.n_train_seq * s.seq_len, 1 << 23);
    assert_eq!(s.n_val_seq(), 128);
    assert_eq!(s.symbols_per_seq() / s.block_len, 4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn sequences_are_reproducible_and_bounded(seed in any::<u64>(), index in 0u64..1000, rate in 0.05f64..1.5) {
        let spec = StimulusSpec::for_scale(Scale::Desk, rate, seed);
        let a = build_drive_sequence(&spec, 1e9, &mut stream_rng(seed, Stream::Train, index)).unwrap();
        let b = build_drive_sequence(&spec, 1e9, &mut stream_rng(seed, Stream::Train, index)).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.waveform.len(), 1024);
        prop_assert!(a.waveform.iter().all(|v| v.is_finite() && *v >= 0.0));
    }
}
