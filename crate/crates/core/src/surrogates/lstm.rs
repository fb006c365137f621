//! Stacked LSTM with a per-step linear head. Gate order in the packed
//! weights: input, forget, candidate, output.

use dml_autodiff::{Tape, Var};

use super::hyper::ModelHyper;
use super::layout::{linear, Init, ParamSpec};
use crate::error::Result;

pub(crate) fn layout(h: &ModelHyper) -> Vec<ParamSpec> {
    let hid = h.hidden_nodes;
    let mut s = Vec::new();
    for l in 0..h.hidden_layers {
        let din = if l == 0 { 1 } else { hid };
        s.push(ParamSpec::new(
            format!("l{l}.w_ih"),
            &[din, 4 * hid],
            Init::Uniform { fan_in: din },
        ));
        s.push(ParamSpec::new(
            format!("l{l}.w_hh"),
            &[hid, 4 * hid],
            Init::Uniform { fan_in: hid },
        ));
        s.push(ParamSpec::new(
            format!("l{l}.b"),
            &[4 * hid],
            Init::ForgetBias { hidden: hid },
        ));
    }
    linear(&mut s, "out", hid, 1);
    s
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One recurrent layer as a single tape node. The gate pre-activations
/// `x·W_ih + b` stay on the tape; the recurrence over `W_hh` runs here and
/// its backward pass is hand-written BPTT.
fn layer(tape: &mut Tape, x: Var, w_ih: Var, w_hh: Var, b: Var, hid: usize) -> Result<Var> {
    let t_len = tape.shape(x)[0];
    let gx = tape.matmul(x, w_ih)?;
    let gx = tape.add_bias(gx, b)?;
    let (trace, hs) = recur(tape.value(gx), tape.value(w_hh), hid);
    let vjp = move |inputs: &[&[f64]], out: &[f64], g: &[f64]| {
        let [_, w] = inputs else { unreachable!("two inputs") };
        backprop(w, out, g, &trace, hid)
    };
    Ok(tape.custom(&[gx, w_hh], &[t_len, hid], hs, Box::new(vjp))?)
}

/// Per-step quantities kept for the backward pass.
struct Trace {
    /// post-activation gates `[i f g o]`
    acts: Vec<f64>,
    cells: Vec<f64>,
    tanh_c: Vec<f64>,
}

/// Forward recurrence; returns the trace and the hidden states.
fn recur(gx: &[f64], w: &[f64], hid: usize) -> (Trace, Vec<f64>) {
    let g4 = 4 * hid;
    let t_len = gx.len() / g4;
    let mut acts = gx.to_vec();
    let mut cells = vec![0.0; t_len * hid];
    let mut tanh_c = vec![0.0; t_len * hid];
    let mut hs = vec![0.0; t_len * hid];
    let mut c = vec![0.0; hid];
    for t in 0..t_len {
        let (done, rest) = hs.split_at_mut(t * hid);
        let a = &mut acts[t * g4..(t + 1) * g4];
        if t > 0 {
            for (j, &hj) in done[(t - 1) * hid..].iter().enumerate() {
                for (ak, wk) in a.iter_mut().zip(&w[j * g4..(j + 1) * g4]) {
                    *ak += hj * wk;
                }
            }
        }
        let (ifg, o) = a.split_at_mut(3 * hid);
        ifg[..2 * hid].iter_mut().for_each(|v| *v = sigmoid(*v));
        ifg[2 * hid..].iter_mut().for_each(|v| *v = v.tanh());
        o.iter_mut().for_each(|v| *v = sigmoid(*v));
        let tc = &mut tanh_c[t * hid..(t + 1) * hid];
        for k in 0..hid {
            c[k] = ifg[k] * ifg[2 * hid + k] + ifg[hid + k] * c[k];
            tc[k] = c[k].tanh();
            rest[k] = o[k] * tc[k];
        }
        cells[t * hid..(t + 1) * hid].copy_from_slice(&c);
    }
    (Trace { acts, cells, tanh_c }, hs)
}

fn backprop(w: &[f64], hs: &[f64], g: &[f64], tr: &Trace, hid: usize) -> Vec<Vec<f64>> {
    let (acts, tanh_c) = (&tr.acts, &tr.tanh_c);
    let g4 = 4 * hid;
    let t_len = hs.len() / hid;
    let mut dgx = vec![0.0; t_len * g4];
    let mut dw = vec![0.0; w.len()];
    let mut dh_next = vec![0.0; hid];
    let mut dc_next = vec![0.0; hid];
    for t in (0..t_len).rev() {
        let a = &acts[t * g4..(t + 1) * g4];
        let tc = &tanh_c[t * hid..(t + 1) * hid];
        let da = &mut dgx[t * g4..(t + 1) * g4];
        for k in 0..hid {
            let (i, f, cand, o) = (a[k], a[hid + k], a[2 * hid + k], a[3 * hid + k]);
            let dh = g[t * hid + k] + dh_next[k];
            let dc = dh * o * (1.0 - tc[k] * tc[k]) + dc_next[k];
            let c_prev = if t > 0 { tr.cells[(t - 1) * hid + k] } else { 0.0 };
            da[k] = dc * cand * i * (1.0 - i);
            da[hid + k] = dc * c_prev * f * (1.0 - f);
            da[2 * hid + k] = dc * i * (1.0 - cand * cand);
            da[3 * hid + k] = dh * tc[k] * o * (1.0 - o);
            dc_next[k] = dc * f;
        }
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        if t > 0 {
            let h_prev = &hs[(t - 1) * hid..t * hid];
            for j in 0..hid {
                let wj = &w[j * g4..(j + 1) * g4];
                dh_next[j] = wj.iter().zip(da.iter()).map(|(x, y)| x * y).sum();
                for (dwk, dak) in dw[j * g4..(j + 1) * g4].iter_mut().zip(da.iter()) {
                    *dwk += h_prev[j] * dak;
                }
            }
        }
    }
    vec![dgx, dw]
}
pub(crate) fn forward(h: &ModelHyper, tape: &mut Tape, p: &[Var], x: Var) -> Result<Var> {
    let mut a = x;
    for l in 0..h.hidden_layers {
        a = layer(
            tape,
            a,
            p[3 * l],
            p[3 * l + 1],
            p[3 * l + 2],
            h.hidden_nodes,
        )?;
    }
    let n = p.len();
    let y = tape.matmul(a, p[n - 2])?;
    Ok(tape.add_bias(y, p[n - 1])?)
}
