//! Dormand–Prince 5(4) integrator with PI step-size control and the
//! fourth-order continuous extension.

use super::params::SolverConfig;
use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// fifth minus fourth order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const BETA: f64 = 0.04;
const SAFE: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SolverStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

fn axpy<const D: usize>(y: &[f64; D], h: f64, terms: &[(f64, &[f64; D])]) -> [f64; D] {
    let mut out = *y;
    for (c, k) in terms {
        for d in 0..D {
            out[d] += h * c * k[d];
        }
    }
    out
}

fn initial_step<const D: usize, F>(
    f: &mut F,
    t0: f64,
    y0: &[f64; D],
    f0: &[f64; D],
    cfg: &SolverConfig,
    span: f64,
) -> f64
where
    F: FnMut(f64, &[f64; D]) -> [f64; D],
{
    let mut dnf = 0.0;
    let mut dny = 0.0;
    for d in 0..D {
        let sk = cfg.abs_tol + cfg.rel_tol * y0[d].abs();
        dnf += (f0[d] / sk).powi(2);
        dny += (y0[d] / sk).powi(2);
    }
    let hmax = cfg.max_step.min(span);
    let mut h = if dnf <= 1e-10 || dny <= 1e-10 {
        1e-6 * hmax
    } else {
        0.01 * (dny / dnf).sqrt()
    };
    h = h.min(hmax);
    let y1 = axpy(y0, h, &[(1.0, f0)]);
    let f1 = f(t0 + h, &y1);
    let mut der2 = 0.0;
    for d in 0..D {
        let sk = cfg.abs_tol + cfg.rel_tol * y0[d].abs();
        der2 += ((f1[d] - f0[d]) / sk).powi(2);
    }
    let der2 = der2.sqrt() / h;
    let der12 = der2.max(dnf.sqrt());
    let h1 = if der12 <= 1e-15 {
        (h * 1e-3).max(1e-6 * hmax)
    } else {
        (0.01 / der12).powf(0.2)
    };
    (100.0 * h).min(h1).min(hmax)
}

/// Integrates `y' = f(t, y)` from `t0` and records the state at each time in
/// `outputs` (ascending, all `≥ t0`). Steps never straddle an entry of
/// `breakpoints`, so a right-hand side with kinks there is integrated at full
/// order. `check` sees every accepted state and may abort the run.
pub fn integrate<const D: usize, F, C>(
    mut f: F,
    t0: f64,
    y0: [f64; D],
    outputs: &[f64],
    breakpoints: &[f64],
    cfg: &SolverConfig,
    mut check: C,
) -> Result<(Vec<[f64; D]>, SolverStats)>
where
    F: FnMut(f64, &[f64; D]) -> [f64; D],
    C: FnMut(f64, &[f64; D]) -> Result<()>,
{
    cfg.validate()?;
    let mut stats = SolverStats::default();
    let mut out = Vec::with_capacity(outputs.len());
    if outputs.windows(2).any(|w| w[1] < w[0]) || outputs.first().is_some_and(|&o| o < t0) {
        return Err(Error::Contract(
            "output times must be ascending and not before t0".into(),
        ));
    }
    let Some(&t_end) = outputs.last() else {
        return Ok((out, stats));
    };

    let mut t = t0;
    let mut y = y0;
    let mut next_out = 0;
    while next_out < outputs.len() && outputs[next_out] == t0 {
        out.push(y);
        next_out += 1;
    }
    if t_end == t0 {
        return Ok((out, stats));
    }

    let mut bp = breakpoints
        .iter()
        .copied()
        .filter(|&b| b > t0 && b < t_end)
        .peekable();
    let mut k1 = f(t, &y);
    stats.evaluations += 1;
    let mut h = initial_step(&mut f, t, &y, &k1, cfg, t_end - t0);
    stats.evaluations += 1;
    let expo1 = 0.2 - BETA * 0.75;
    let mut facold: f64 = 1e-4;
    let mut last_rejected = false;

    while t < t_end {
        while bp.peek().is_some_and(|&b| b <= t) {
            bp.next();
        }
        let stop = bp.peek().copied().unwrap_or(t_end);
        h = h.min(cfg.max_step);
        // land exactly on the stop, and avoid leaving a sliver behind it
        let hits_stop = t + h >= stop || t + 1.01 * h >= stop;
        if hits_stop {
            h = stop - t;
        }
        if h <= 1e-12 * cfg.max_step || t + h == t {
            return Err(Error::Numerical(format!(
                "step size underflow at t = {t:e} s (h = {h:e})"
            )));
        }

        let k2 = f(t + C2 * h, &axpy(&y, h, &[(A21, &k1)]));
        let k3 = f(t + C3 * h, &axpy(&y, h, &[(A31, &k1), (A32, &k2)]));
        let k4 = f(
            t + C4 * h,
            &axpy(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]),
        );
        let k5 = f(
            t + C5 * h,
            &axpy(&y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
        );
        let k6 = f(
            t + h,
            &axpy(
                &y,
                h,
                &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
            ),
        );
        let y1 = axpy(
            &y,
            h,
            &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)],
        );
        let t1 = if hits_stop { stop } else { t + h };
        let k7 = f(t1, &y1);
        stats.evaluations += 6;

        let mut err = 0.0;
        for d in 0..D {
            let e =
                h * (E1 * k1[d] + E3 * k3[d] + E4 * k4[d] + E5 * k5[d] + E6 * k6[d] + E7 * k7[d]);
            let sk = cfg.abs_tol + cfg.rel_tol * y[d].abs().max(y1[d].abs());
            err += (e / sk).powi(2);
        }
        let err = (err / D as f64).sqrt();
        if !err.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite error estimate at t = {t:e} s"
            )));
        }

        let fac11 = err.powf(expo1);
        if err <= 1.0 {
            let fac = (fac11 / facold.powf(BETA) / SAFE).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
            let mut h_new = h / fac;
            if last_rejected {
                h_new = h_new.min(h);
            }
            facold = err.max(1e-4);
            stats.accepted += 1;
            check(t1, &y1)?;

            if next_out < outputs.len() && outputs[next_out] <= t1 {
                let r2: [f64; D] = std::array::from_fn(|d| y1[d] - y[d]);
                let r3: [f64; D] = std::array::from_fn(|d| h * k1[d] - r2[d]);
                let r4: [f64; D] = std::array::from_fn(|d| r2[d] - h * k7[d] - r3[d]);
                let r5: [f64; D] = std::array::from_fn(|d| {
                    h * (D1 * k1[d]
                        + D3 * k3[d]
                        + D4 * k4[d]
                        + D5 * k5[d]
                        + D6 * k6[d]
                        + D7 * k7[d])
                });
                while next_out < outputs.len() && outputs[next_out] <= t1 {
                    let to = outputs[next_out];
                    if to == t1 {
                        out.push(y1);
                    } else {
                        let th = (to - t) / h;
                        let th1 = 1.0 - th;
                        out.push(std::array::from_fn(|d| {
                            y[d] + th * (r2[d] + th1 * (r3[d] + th * (r4[d] + th1 * r5[d])))
                        }));
                    }
                    next_out += 1;
                }
            }

            t = t1;
            y = y1;
            k1 = k7;
            h = h_new;
            last_rejected = false;
        } else {
            h /= (fac11 / SAFE).min(1.0 / FAC_MIN);
            stats.rejected += 1;
            last_rejected = true;
        }
    }
    Ok((out, stats))
}
