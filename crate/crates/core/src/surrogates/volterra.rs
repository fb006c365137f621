//! Second-order Volterra filter:
//! `y[t] = h0 + Σ_i h1[i]·x[t−i] + Σ_{i≤j} h2[i,j]·x[t−i]·x[t−j]`.

use dml_autodiff::{pair_count, Tape, Var};

use super::hyper::ModelHyper;
use super::layout::{Init, ParamSpec};
use crate::error::Result;

pub(crate) fn layout(h: &ModelHyper) -> Vec<ParamSpec> {
    let m = h.memory;
    let p = pair_count(m);
    vec![
        ParamSpec::new("h0", &[1], Init::Zeros),
        ParamSpec::new("h1", &[m, 1], Init::Uniform { fan_in: m }),
        ParamSpec::new("h2", &[p, 1], Init::Uniform { fan_in: p }),
    ]
}

/// Regressor rows `[x[t−i]] ++ [x[t−i]·x[t−j]]_{i≤j}` of the linear-in-parameters form.
pub fn regressors(x: &[f64], memory: usize) -> Vec<Vec<f64>> {
    (0..x.len())
        .map(|t| {
            let lag: Vec<f64> = (0..memory)
                .map(|i| if i <= t { x[t - i] } else { 0.0 })
                .collect();
            let mut row = lag.clone();
            for i in 0..memory {
                for j in i..memory {
                    row.push(lag[i] * lag[j]);
                }
            }
            row
        })
        .collect()
}

pub(crate) fn forward(h: &ModelHyper, tape: &mut Tape, p: &[Var], x: Var) -> Result<Var> {
    let lags = tape.lag_matrix(x, h.memory)?;
    let pairs = tape.pair_products(lags)?;
    let lin = tape.matmul(lags, p[1])?;
    let quad = tape.matmul(pairs, p[2])?;
    let y = tape.add(lin, quad)?;
    Ok(tape.add_bias(y, p[0])?)
}
