use num_complex::Complex64;

use super::params::{LaserParams, RateState};
use crate::error::{Error, Result};

/// Time derivatives `(dN/dt, dS/dt)` of the single-mode rate equations at current `i`.
pub fn derivatives(state: RateState, i: f64, p: &LaserParams) -> (f64, f64) {
    let RateState { n, s } = state;
    let gain = p.g0 * (n - p.n0) / (1.0 + p.eps * s);
    let dn = i / (p.q_e * p.v_act) - n / p.tau_n - gain * s;
    let ds = p.gamma_c * gain * s - s / p.tau_p + p.gamma_c * p.beta_sp * n / p.tau_n;
    (dn, ds)
}

/// Jacobian `∂(dN/dt, dS/dt)/∂(N, S)`, row-major.
pub fn jacobian(state: RateState, p: &LaserParams) -> [[f64; 2]; 2] {
    let RateState { n, s } = state;
    let den = 1.0 + p.eps * s;
    let g = p.g0 * (n - p.n0) / den;
    let g_n = p.g0 / den;
    let g_s = -p.g0 * (n - p.n0) * p.eps / (den * den);
    [
        [-1.0 / p.tau_n - g_n * s, -g - g_s * s],
        [
            p.gamma_c * g_n * s + p.gamma_c * p.beta_sp / p.tau_n,
            p.gamma_c * (g + g_s * s) - 1.0 / p.tau_p,
        ],
    ]
}

/// Scaled residual: derivatives divided by the natural rates of each equation.
fn scaled_residual(x: [f64; 2], i: f64, p: &LaserParams) -> [f64; 2] {
    let (nth, ssc) = (p.threshold_density(), p.photon_scale());
    let (dn, ds) = derivatives(
        RateState {
            n: x[0] * nth,
            s: x[1] * ssc,
        },
        i,
        p,
    );
    [dn * p.tau_n / nth, ds * p.tau_p / ssc]
}

fn norm2(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

/// Equilibrium `(N̄, S̄)` at constant current `i`, by damped Newton iteration.
pub fn steady_state(i: f64, p: &LaserParams) -> Result<RateState> {
    p.validate()?;
    if !(i > 0.0 && i.is_finite()) {
        return Err(Error::param(format!(
            "steady state needs a positive current, got {i}"
        )));
    }
    let (nth, ssc) = (p.threshold_density(), p.photon_scale());
    let qv = p.q_e * p.v_act;
    let n_below = i * p.tau_n / qv;
    let s_below = p.gamma_c * p.beta_sp * n_below * p.tau_p / p.tau_n;
    let s_above = p.gamma_c * p.tau_p * (i - p.threshold_current()) / qv;
    let mut x = [n_below.min(nth) / nth, s_below.max(s_above) / ssc];

    let mut r = scaled_residual(x, i, p);
    for _ in 0..200 {
        let rn = norm2(r);
        if rn < 1e-14 {
            return Ok(RateState {
                n: x[0] * nth,
                s: x[1] * ssc,
            });
        }
        // Jacobian of the scaled system from the physical one.
        let j = jacobian(
            RateState {
                n: x[0] * nth,
                s: x[1] * ssc,
            },
            p,
        );
        let a = [
            [j[0][0] * p.tau_n, j[0][1] * p.tau_n * ssc / nth],
            [j[1][0] * p.tau_p * nth / ssc, j[1][1] * p.tau_p],
        ];
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        if !(det.abs() > 0.0 && det.is_finite()) {
            break;
        }
        let dx = [
            -(a[1][1] * r[0] - a[0][1] * r[1]) / det,
            -(-a[1][0] * r[0] + a[0][0] * r[1]) / det,
        ];
        let mut lambda = 1.0;
        let mut accepted = false;
        while lambda > 1e-10 {
            let trial = [x[0] + lambda * dx[0], x[1] + lambda * dx[1]];
            if trial[0] > 0.0 && trial[1] > 0.0 {
                let rt = scaled_residual(trial, i, p);
                if norm2(rt) < rn {
                    x = trial;
                    r = rt;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if norm2(r) < 1e-11 {
        return Ok(RateState {
            n: x[0] * nth,
            s: x[1] * ssc,
        });
    }
    Err(Error::Numerical(format!(
        "steady state did not converge at I = {i:e} A (scaled residual {:e})",
        norm2(r)
    )))
}

/// Eigenvalues of the Jacobian at the operating point; errors if they are real.
fn complex_pole(p: &LaserParams, i_bias: f64) -> Result<(RateState, [[f64; 2]; 2], f64, f64)> {
    if i_bias <= p.threshold_current() {
        return Err(Error::Domain(format!(
            "bias {i_bias:e} A is not above threshold {:e} A",
            p.threshold_current()
        )));
    }
    let ss = steady_state(i_bias, p)?;
    let j = jacobian(ss, p);
    let half_tr = 0.5 * (j[0][0] + j[1][1]);
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let disc = det - half_tr * half_tr;
    if disc <= 0.0 {
        return Err(Error::Domain(format!(
            "Jacobian eigenvalues are real at I = {i_bias:e} A (det {det:e}, (tr/2)² {:e})",
            half_tr * half_tr
        )));
    }
    Ok((ss, j, half_tr, disc.sqrt()))
}

/// Relaxation-oscillation frequency `Im(λ)/2π` at the given bias, Hz.
pub fn relaxation_frequency(p: &LaserParams, i_bias: f64) -> Result<f64> {
    let (_, _, _, im) = complex_pole(p, i_bias)?;
    Ok(im / (2.0 * std::f64::consts::PI))
}

/// Current-to-photon-density transfer function of the linearized system,
/// normalized to unity at DC.
pub fn small_signal_response(p: &LaserParams, i_bias: f64, f: f64) -> Result<Complex64> {
    let (_, j, _, _) = complex_pole(p, i_bias)?;
    let h = |w: f64| {
        let s = Complex64::new(0.0, w);
        let den = (s - j[0][0]) * (s - j[1][1]) - j[0][1] * j[1][0];
        Complex64::new(j[1][0] / (p.q_e * p.v_act), 0.0) / den
    };
    Ok(h(2.0 * std::f64::consts::PI * f) / h(0.0))
}
