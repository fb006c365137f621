//! Time-delay network: causal window → ReLU layers → linear output.

use dml_autodiff::{Tape, Var};

use super::hyper::ModelHyper;
use super::layout::{conv, linear, ParamSpec};
use crate::error::Result;

pub(crate) fn layout(h: &ModelHyper) -> Vec<ParamSpec> {
    let mut s = Vec::new();
    conv(&mut s, "in", h.conv_window, 1, h.hidden_nodes);
    for l in 1..h.hidden_layers {
        linear(
            &mut s,
            &format!("hidden{l}"),
            h.hidden_nodes,
            h.hidden_nodes,
        );
    }
    linear(&mut s, "out", h.hidden_nodes, 1);
    s
}

pub(crate) fn forward(h: &ModelHyper, tape: &mut Tape, p: &[Var], x: Var) -> Result<Var> {
    let z = tape.conv1d_causal(x, p[0], p[1])?;
    let mut a = tape.relu(z);
    for l in 1..h.hidden_layers {
        let z = tape.matmul(a, p[2 * l])?;
        let z = tape.add_bias(z, p[2 * l + 1])?;
        a = tape.relu(z);
    }
    let n = p.len();
    let y = tape.matmul(a, p[n - 2])?;
    Ok(tape.add_bias(y, p[n - 1])?)
}
