use super::params::{BiasMap, LaserParams, RateState, SolverConfig};
use super::rate::{derivatives, steady_state};
use super::solver::{integrate, SolverStats};
use crate::error::{Error, Result};

/// Full output of a large-signal run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Photon density at each drive sample, m⁻³.
    pub photons: Vec<f64>,
    /// Carrier density at each drive sample, m⁻³.
    pub carriers: Vec<f64>,
    pub stats: SolverStats,
}

/// Integrates the rate equations for a normalized drive sampled at `f_s`,
/// starting from the equilibrium at `I_bias`. Returns the photon density
/// (detected power up to a constant) on the drive grid.
pub fn simulate_large_signal(
    drive: &[f64],
    f_s: f64,
    bias: &BiasMap,
    p: &LaserParams,
    cfg: &SolverConfig,
) -> Result<Vec<f64>> {
    Ok(simulate_trajectory(drive, f_s, bias, p, cfg)?.photons)
}

pub fn simulate_trajectory(
    drive: &[f64],
    f_s: f64,
    bias: &BiasMap,
    p: &LaserParams,
    cfg: &SolverConfig,
) -> Result<Trajectory> {
    p.validate()?;
    bias.validate()?;
    cfg.validate()?;
    if !(f_s > 0.0 && f_s.is_finite()) {
        return Err(Error::param(format!(
            "sample rate must be positive, got {f_s}"
        )));
    }
    if let Some(i) = drive.iter().position(|d| !d.is_finite()) {
        return Err(Error::param(format!("drive sample {i} is not finite")));
    }
    if drive.is_empty() {
        return Ok(Trajectory {
            photons: vec![],
            carriers: vec![],
            stats: SolverStats::default(),
        });
    }

    let ss = steady_state(bias.i_bias, p)?;
    let nth = p.threshold_density();
    let ssc = p.photon_scale();
    let dt = 1.0 / f_s;
    let last = drive.len() - 1;
    let current = |t: f64| {
        let u = t * f_s;
        let k = (u.floor().max(0.0) as usize).min(last);
        let d = if k == last {
            drive[last]
        } else {
            let w = u - k as f64;
            drive[k] + w * (drive[k + 1] - drive[k])
        };
        bias.current(d)
    };
    let rhs = |t: f64, y: &[f64; 2]| {
        let (dn, ds) = derivatives(
            RateState {
                n: y[0] * nth,
                s: y[1] * ssc,
            },
            current(t),
            p,
        );
        [dn / nth, ds / ssc]
    };

    let times: Vec<f64> = (0..drive.len()).map(|k| k as f64 * dt).collect();
    let breakpoints: &[f64] = if cfg.dense_output { &[] } else { &times };
    let floor = -cfg.abs_tol;
    let (ys, stats) = integrate(
        rhs,
        0.0,
        [ss.n / nth, ss.s / ssc],
        &times,
        breakpoints,
        cfg,
        |t, y| {
            if y[0] < floor || y[1] < floor {
                Err(Error::Numerical(format!(
                "negative density at t = {t:e} s (N/N_th = {:e}, S/S_ref = {:e}); tolerances too loose",
                y[0], y[1]
            )))
            } else {
                Ok(())
            }
        },
    )?;
    Ok(Trajectory {
        photons: ys.iter().map(|y| y[1] * ssc).collect(),
        carriers: ys.iter().map(|y| y[0] * nth).collect(),
        stats,
    })
}
