//! Central finite-difference gradient checker.

use crate::error::{AutodiffError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradcheckOptions {
    /// Maximum admissible relative error.
    pub tol: f64,
    /// Step is `step_scale·max(1, |θ|)`, rounded to a power of two so that
    /// `θ ± h` is exact.
    pub step_scale: f64,
    /// Lower bound on the denominator of the relative error, as a fraction
    /// of `max(1, |f(θ)|)`. Central differences at this step carry about
    /// `2e-10·|f|` of round-off, so components far below `|f|` cannot be
    /// resolved in relative terms and are compared against the floor.
    pub floor: f64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            tol: 1e-6,
            step_scale: 1e-6,
            floor: 1e-3,
        }
    }
}

impl GradcheckOptions {
    pub fn with_tol(tol: f64) -> Self {
        GradcheckOptions {
            tol,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckEntry {
    pub tensor: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub tol: f64,
    pub max_rel_error: f64,
    pub entries: Vec<GradcheckEntry>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tol
    }

    pub fn worst(&self) -> Option<&GradcheckEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

fn fd_step(theta: f64, scale: f64) -> f64 {
    let h = scale * theta.abs().max(1.0);
    2f64.powi(h.log2().round() as i32)
}

fn eval<F>(f: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p)).collect();
    let out = f(&mut tape, &vars)?;
    tape.scalar(out)
}

/// Checks the tape gradient of a scalar function of one tensor against
/// central differences on every coordinate.
pub fn gradcheck<F>(f: F, theta: &Tensor, tol: f64) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let coords: Vec<(usize, usize)> = (0..theta.numel()).map(|i| (0, i)).collect();
    gradcheck_params(
        |tape, vars| f(tape, vars[0]),
        std::slice::from_ref(theta),
        &coords,
        GradcheckOptions::with_tol(tol),
    )
}

/// Checks selected `(tensor, element)` coordinates of a multi-tensor function.
pub fn gradcheck_params<F>(
    f: F,
    params: &[Tensor],
    coords: &[(usize, usize)],
    opts: GradcheckOptions,
) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let params: Vec<Tensor> = params
        .iter()
        .map(|p| p.clone().with_requires_grad(true))
        .collect();
    for &(ti, ei) in coords {
        if ti >= params.len() || ei >= params[ti].numel() {
            return Err(AutodiffError::param(
                "gradcheck",
                format!("coordinate ({ti}, {ei}) is out of range"),
            ));
        }
    }

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p)).collect();
    let out = f(&mut tape, &vars)?;
    let f0 = tape.scalar(out)?;
    if eval(&f, &params)?.to_bits() != f0.to_bits() {
        return Err(AutodiffError::Contract(
            "function under check is not deterministic".into(),
        ));
    }
    let grads = tape.backward(out)?;

    let mut entries = Vec::with_capacity(coords.len());
    let mut max_rel_error = 0.0f64;
    let floor = opts.floor * f0.abs().max(1.0);
    let mut work = params.clone();
    for &(ti, ei) in coords {
        let analytic = grads.get(vars[ti]).map_or(0.0, |g| g[ei]);
        let theta = params[ti].data()[ei];
        let h = fd_step(theta, opts.step_scale);
        work[ti].data_mut()[ei] = theta + h;
        let fp = eval(&f, &work)?;
        work[ti].data_mut()[ei] = theta - h;
        let fm = eval(&f, &work)?;
        work[ti].data_mut()[ei] = theta;
        let numeric = (fp - fm) / (2.0 * h);
        let denom = analytic.abs().max(numeric.abs()).max(floor);
        let rel_error = (analytic - numeric).abs() / denom;
        max_rel_error = max_rel_error.max(if rel_error.is_nan() {
            f64::INFINITY
        } else {
            rel_error
        });
        entries.push(GradcheckEntry {
            tensor: ti,
            index: ei,
            analytic,
            numeric,
            rel_error,
        });
    }
    Ok(GradcheckReport {
        tol: opts.tol,
        max_rel_error,
        entries,
    })
}

/// Deterministically picks `count` distinct coordinates spread over all
/// tensors (every tensor first gets one pick while budget allows).
pub fn sample_coords(params: &[Tensor], count: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut state = seed ^ 0x9E37_79B9_7F4A_7C15;
    let mut next = move || {
        // splitmix64
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    };
    let total: usize = params.iter().map(Tensor::numel).sum();
    let count = count.min(total);
    let mut picked = std::collections::BTreeSet::new();
    for (ti, p) in params.iter().enumerate() {
        if picked.len() >= count {
            break;
        }
        picked.insert((ti, (next() % p.numel() as u64) as usize));
    }
    while picked.len() < count {
        let mut flat = (next() % total as u64) as usize;
        for (ti, p) in params.iter().enumerate() {
            if flat < p.numel() {
                picked.insert((ti, flat));
                break;
            }
            flat -= p.numel();
        }
    }
    picked.into_iter().collect()
}
