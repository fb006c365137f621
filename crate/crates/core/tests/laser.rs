use std::f64::consts::PI;

use dml_twin::laser::{
    derivatives, detect_and_normalize, relaxation_frequency, simulate_large_signal,
    simulate_trajectory, small_signal_response, steady_state, BiasMap, LaserParams, RateState,
    SolverConfig,
};
use nalgebra::Matrix2;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn reference() -> (LaserParams, BiasMap) {
    let p = LaserParams::reference();
    (p, BiasMap::default_for(&p))
}

fn hand_rate(n: f64, s: f64, i: f64) -> (f64, f64) {
    let (g0, n0, eps, tn, tp, gc, bsp, v, q) = (
        8.1e-13,
        1.1e24,
        1.0e-23,
        2.0e-9,
        1.0e-12,
        0.3,
        1e-4,
        1.0e-16,
        1.602176634e-19,
    );
    let g = g0 * (n - n0) / (1.0 + eps * s);
    (
        i / (q * v) - n / tn - g * s,
        gc * g * s - s / tp + gc * bsp * n / tn,
    )
}

#[test]
fn derivatives_match_hand_coded_equations() {
    let p = LaserParams::reference();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let n = rng.random_range(0.0..4e24);
        let s = rng.random_range(0.0..1e22);
        let i = rng.random_range(0.0..0.05);
        let (a, b) = derivatives(RateState { n, s }, i, &p);
        let (c, d) = hand_rate(n, s, i);
        assert!((a - c).abs() <= 1e-12 * c.abs().max(n / p.tau_n));
        assert!((b - d).abs() <= 1e-12 * d.abs().max(s / p.tau_p));
    }
}

#[test]
fn steady_state_is_a_fixed_point() {
    let p = LaserParams::reference();
    let ith = p.threshold_current();
    for k in [0.05, 0.1, 0.5, 0.9, 1.0, 1.1, 2.0, 3.0, 5.0, 10.0] {
        let i = k * ith;
        let st = steady_state(i, &p).unwrap();
        let (dn, ds) = derivatives(st, i, &p);
        let g = p.g0 * (st.n - p.n0) / (1.0 + p.eps * st.s);
        let n_terms = [i / (p.q_e * p.v_act), st.n / p.tau_n, g * st.s];
        let s_terms = [
            p.gamma_c * g * st.s,
            st.s / p.tau_p,
            p.gamma_c * p.beta_sp * st.n / p.tau_n,
        ];
        let nmax = n_terms.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let smax = s_terms.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(dn.abs() < 1e-6 * nmax, "I = {k} I_th: dN/dt = {dn:e}");
        assert!(ds.abs() < 1e-6 * smax, "I = {k} I_th: dS/dt = {ds:e}");
        assert!(st.n > 0.0 && st.s > 0.0);
    }
}

#[test]
fn below_threshold_matches_spontaneous_floor() {
    let p = LaserParams::reference();
    let i = 0.1 * p.threshold_current();
    let st = steady_state(i, &p).unwrap();
    let n_ref = i * p.tau_n / (p.q_e * p.v_act);
    // spontaneous seeding balanced against cavity loss plus modal absorption
    let absorption = p.gamma_c * p.g0 * (n_ref - p.n0);
    let s_ref = p.gamma_c * p.beta_sp * n_ref / p.tau_n / (1.0 / p.tau_p - absorption);
    assert!((st.n / n_ref - 1.0).abs() < 0.05);
    assert!((st.s / s_ref - 1.0).abs() < 0.05, "{} vs {}", st.s, s_ref);
}

#[test]
fn above_threshold_gain_clamps() {
    let p = LaserParams::reference();
    let st = steady_state(2.0 * p.threshold_current(), &p).unwrap();
    let lhs = p.gamma_c * p.g0 * (st.n - p.n0) / (1.0 + p.eps * st.s);
    let rhs = 1.0 / p.tau_p - p.gamma_c * p.beta_sp * st.n / (p.tau_n * st.s);
    assert!(((lhs - rhs) / rhs).abs() < 1e-9);
    assert!((st.n / p.threshold_density() - 1.0).abs() < 0.01);
}

#[test]
fn relaxation_frequency_matches_numerical_eigenvalues() {
    let (p, bias) = reference();
    let f_r = relaxation_frequency(&p, bias.i_bias).unwrap();
    let st = steady_state(bias.i_bias, &p).unwrap();
    // independent Jacobian by central differences
    let i = bias.i_bias;
    let (hn, hs) = (1e-7 * st.n, 1e-7 * st.s);
    let (a1, b1) = derivatives(RateState { n: st.n + hn, ..st }, i, &p);
    let (a0, b0) = derivatives(RateState { n: st.n - hn, ..st }, i, &p);
    let (c1, d1) = derivatives(RateState { s: st.s + hs, ..st }, i, &p);
    let (c0, d0) = derivatives(RateState { s: st.s - hs, ..st }, i, &p);
    let j = Matrix2::new(
        (a1 - a0) / (2.0 * hn),
        (c1 - c0) / (2.0 * hs),
        (b1 - b0) / (2.0 * hn),
        (d1 - d0) / (2.0 * hs),
    );
    let eig = j.complex_eigenvalues();
    let im = eig[0].im.abs();
    let f_num = im / (2.0 * PI);
    assert!(((f_r - f_num) / f_num).abs() < 1e-6, "{f_r} vs {f_num}");
    assert!((5e9..30e9).contains(&f_r), "f_R = {f_r:e} outside 5-30 GHz");
}

#[test]
fn relaxation_frequency_matches_analytic_eigenvalues_exactly() {
    let (p, bias) = reference();
    let st = steady_state(bias.i_bias, &p).unwrap();
    let jm = dml_twin::laser::jacobian(st, &p);
    let eig = Matrix2::new(jm[0][0], jm[0][1], jm[1][0], jm[1][1]).complex_eigenvalues();
    let f_eig = eig[0].im.abs() / (2.0 * PI);
    let f_r = relaxation_frequency(&p, bias.i_bias).unwrap();
    assert!(((f_r - f_eig) / f_eig).abs() < 1e-9);
}

#[test]
fn relaxation_frequency_grows_with_bias() {
    let p = LaserParams::reference();
    let ith = p.threshold_current();
    let mut prev = 0.0;
    for k in 0..=25 {
        let i = (1.5 + 0.1 * k as f64) * ith;
        let f = relaxation_frequency(&p, i).unwrap();
        assert!(f > prev);
        prev = f;
    }
}

#[test]
fn small_signal_response_shape() {
    let (p, bias) = reference();
    let f_r = relaxation_frequency(&p, bias.i_bias).unwrap();
    let h0 = small_signal_response(&p, bias.i_bias, 0.0).unwrap();
    assert!((h0 - Complex64::new(1.0, 0.0)).norm() < 1e-15);
    let lo = small_signal_response(&p, bias.i_bias, 0.1 * f_r)
        .unwrap()
        .norm();
    let hi = small_signal_response(&p, bias.i_bias, 2.0 * f_r)
        .unwrap()
        .norm();
    assert!(hi < lo);
    let mut prev = f64::INFINITY;
    for k in 0..20 {
        let m = small_signal_response(&p, bias.i_bias, (1.1 + 0.1 * k as f64) * f_r)
            .unwrap()
            .norm();
        assert!(m < prev);
        prev = m;
    }
    // locate the resonance peak
    let mut best = (0.0, 0.0);
    for k in 1..4000 {
        let f = k as f64 * 1e7;
        let m = small_signal_response(&p, bias.i_bias, f).unwrap().norm();
        if m > best.1 {
            best = (f, m);
        }
    }
    assert!(
        ((best.0 - f_r) / f_r).abs() < 0.10,
        "peak {:e} vs f_R {:e}",
        best.0,
        f_r
    );
}

/// For a two-pole response a resonance peak within 10% of Im(λ)/2π and
/// |H(1.2 f_R)| < |H(0.1 f_R)| cannot hold together: the second needs
/// ζ² > 7/32, which pushes the peak below 0.85 f_R.
#[test]
fn peak_location_and_early_rolloff_are_exclusive() {
    for k in 1..1000 {
        let zeta: f64 = k as f64 / 1000.0 * std::f64::consts::FRAC_1_SQRT_2;
        let w0 = 1.0;
        let wr = w0 * (1.0 - zeta * zeta).sqrt();
        let mag = |w: f64| w0 * w0 / Complex64::new(w0 * w0 - w * w, 2.0 * zeta * w0 * w).norm();
        let peak = w0 * (1.0 - 2.0 * zeta * zeta).max(0.0).sqrt();
        let near = ((peak - wr) / wr).abs() < 0.10;
        let rolled = mag(1.2 * wr) < mag(0.1 * wr);
        assert!(!(near && rolled), "zeta = {zeta}");
    }
}

/// Fundamental phasor of `x` at `f`, sampled at `f_s`, over an integer number of periods.
fn phasor(x: &[f64], f: f64, f_s: f64) -> Complex64 {
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(k, v)| {
            let w = -2.0 * PI * f * k as f64 / f_s;
            Complex64::new(w.cos(), w.sin()) * *v
        })
        .sum::<Complex64>()
        * (2.0 / n)
}

/// Simulated current-to-photon transfer at 1% modulation, DC-normalized by
/// a finite-difference slope of the equilibrium curve.
pub fn measured_response(p: &LaserParams, bias: &BiasMap, f: f64) -> Complex64 {
    let spp = 64usize;
    let f_s = f * spp as f64;
    let settle = (4e-9 * f).ceil() as usize;
    let periods = (2e-9 * f).ceil().max(2.0) as usize;
    let amp = 0.01 * bias.i_bias / bias.i_pp;
    let total = (settle + periods) * spp;
    let drive: Vec<f64> = (0..total)
        .map(|k| 0.5 + amp * (2.0 * PI * k as f64 / spp as f64).sin())
        .collect();
    let s = simulate_large_signal(&drive, f_s, bias, p, &SolverConfig::default()).unwrap();
    let tail = settle * spp;
    let cur: Vec<f64> = drive[tail..].iter().map(|d| bias.current(*d)).collect();
    let h = phasor(&s[tail..], f, f_s) / phasor(&cur, f, f_s);
    let di = 1e-4 * bias.i_bias;
    let dc = (steady_state(bias.i_bias + di, p).unwrap().s
        - steady_state(bias.i_bias - di, p).unwrap().s)
        / (2.0 * di);
    h / dc
}

#[test]
fn large_signal_matches_linearized_response() {
    let (p, bias) = reference();
    let f_r = relaxation_frequency(&p, bias.i_bias).unwrap();
    for k in 0..8 {
        let f = (0.1 + 1.1 * k as f64 / 7.0) * f_r;
        let h_sim = measured_response(&p, &bias, f);
        let h_lin = small_signal_response(&p, bias.i_bias, f).unwrap();
        let mag = (h_sim.norm() / h_lin.norm() - 1.0).abs();
        let phase = (h_sim / h_lin).arg().to_degrees().abs();
        assert!(
            mag < 0.02 && phase < 3.0,
            "f = {:.2} f_R: |Δ| = {mag:e}, Δφ = {phase:e}°",
            f / f_r
        );
    }
}

fn random_pam(seed: u64, len: usize, sps: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(len);
    while out.len() < len {
        let level = rng.random_range(0..4) as f64 / 3.0;
        out.extend(std::iter::repeat_n(level, sps));
    }
    out.truncate(len);
    out
}

#[test]
fn halving_tolerances_changes_output_below_1e7() {
    let (p, bias) = reference();
    let f_r = relaxation_frequency(&p, bias.i_bias).unwrap();
    for rate in [0.1, 1.2] {
        let f_s = 32.0 * rate * f_r;
        let drive = random_pam(5, 1024, 32);
        let cfg = SolverConfig::default();
        let a = simulate_large_signal(&drive, f_s, &bias, &p, &cfg).unwrap();
        let b = simulate_large_signal(
            &drive,
            f_s,
            &bias,
            &p,
            &cfg.with_tolerances(cfg.rel_tol / 2.0, cfg.abs_tol / 2.0),
        )
        .unwrap();
        let (na, mm) = detect_and_normalize(&a).unwrap();
        let nb = mm.apply(&b);
        let rms = (na
            .iter()
            .zip(&nb)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            / 1024.0)
            .sqrt();
        assert!(rms < 1e-7, "rate {rate}: RMS change {rms:e}");
    }
}

#[test]
fn constant_drive_stays_at_equilibrium() {
    let (p, bias) = reference();
    let f_r = relaxation_frequency(&p, bias.i_bias).unwrap();
    let s = simulate_large_signal(
        &[0.5; 1024],
        32.0 * f_r,
        &bias,
        &p,
        &SolverConfig::default(),
    )
    .unwrap();
    let after = &s[32..];
    let mean = after.iter().sum::<f64>() / after.len() as f64;
    let ripple = after.iter().fold(0.0f64, |m, v| m.max((v - mean).abs())) / mean;
    assert!(ripple < 1e-6, "ripple {ripple:e}");
}

#[test]
fn densities_stay_non_negative_and_runs_are_deterministic() {
    let (p, bias) = reference();
    let f_r = relaxation_frequency(&p, bias.i_bias).unwrap();
    let drive = random_pam(9, 1024, 32);
    let cfg = SolverConfig::default();
    let a = simulate_trajectory(&drive, 32.0 * 1.2 * f_r, &bias, &p, &cfg).unwrap();
    let b = simulate_trajectory(&drive, 32.0 * 1.2 * f_r, &bias, &p, &cfg).unwrap();
    assert!(a.photons.iter().all(|s| *s > 0.0) && a.carriers.iter().all(|n| *n > 0.0));
    assert_eq!(a.photons, b.photons);
}

#[test]
fn step_clipping_and_dense_output_agree() {
    let (p, bias) = reference();
    let f_r = relaxation_frequency(&p, bias.i_bias).unwrap();
    let drive = random_pam(3, 512, 32);
    let f_s = 32.0 * 0.5 * f_r;
    let clipped = SolverConfig::default();
    let dense = SolverConfig {
        dense_output: true,
        ..clipped.with_tolerances(1e-11, 1e-12)
    };
    let a = simulate_large_signal(&drive, f_s, &bias, &p, &dense).unwrap();
    let b = simulate_large_signal(&drive, f_s, &bias, &p, &clipped).unwrap();
    let (na, mm) = detect_and_normalize(&a).unwrap();
    let nb = mm.apply(&b);
    let max = na
        .iter()
        .zip(&nb)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    assert!(max < 1e-6, "max deviation {max:e}");
}

#[test]
fn loose_tolerances_or_bad_config_are_rejected() {
    let (p, bias) = reference();
    let cfg = SolverConfig {
        rel_tol: 0.5,
        ..SolverConfig::default()
    };
    assert!(simulate_large_signal(&[0.5; 8], 1e11, &bias, &p, &cfg).is_err());
    assert!(
        simulate_large_signal(&[f64::NAN; 8], 1e11, &bias, &p, &SolverConfig::default()).is_err()
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn steady_state_converges_across_currents(k in 0.01f64..20.0) {
        let p = LaserParams::reference();
        let i = k * p.threshold_current();
        let st = steady_state(i, &p).unwrap();
        prop_assert!(st.n > 0.0 && st.s > 0.0);
        let (dn, _) = derivatives(st, i, &p);
        prop_assert!(dn.abs() < 1e-6 * i / (p.q_e * p.v_act));
    }

    #[test]
    fn normalization_round_trips(v in proptest::collection::vec(-1e6f64..1e6, 2..64)) {
        prop_assume!(v.iter().any(|x| *x != v[0]));
        let (y, mm) = detect_and_normalize(&v).unwrap();
        prop_assert!(y.iter().all(|x| (0.0..=1.0).contains(x)));
        for (a, b) in mm.invert(&y).iter().zip(&v) {
            prop_assert!((a - b).abs() <= 1e-12 * mm.range().max(1.0));
        }
    }
}
