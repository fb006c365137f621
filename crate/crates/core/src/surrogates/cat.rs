//! Decoder-only convolutional attention transformer (pre-norm).
//!
//! Embedding: causal conv from the scalar input to `d` channels plus a
//! learned positional table. Each layer: LN → attention whose queries and
//! keys come from causal convs and values from a position-wise map, then
//! LN → ReLU MLP, both residual. Final LN and a linear `d → 1` head.

use dml_autodiff::{Tape, Var};

use super::hyper::ModelHyper;
use super::layout::{conv, layer_norm, linear, Init, ParamSpec};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;

pub(crate) fn layout(h: &ModelHyper) -> Vec<ParamSpec> {
    let (d, k) = (h.embed_dim, h.conv_window);
    let mut s = Vec::new();
    conv(&mut s, "embed", k, 1, d);
    s.push(ParamSpec::new(
        "pos",
        &[h.max_len, d],
        Init::Normal { std: 0.02 },
    ));
    for l in 0..h.hidden_layers {
        layer_norm(&mut s, &format!("l{l}.ln1"), d);
        conv(&mut s, &format!("l{l}.q"), k, d, d);
        conv(&mut s, &format!("l{l}.k"), k, d, d);
        linear(&mut s, &format!("l{l}.v"), d, d);
        linear(&mut s, &format!("l{l}.o"), d, d);
        layer_norm(&mut s, &format!("l{l}.ln2"), d);
        for m in 0..h.mlp_sublayers {
            let fan_in = if m == 0 { d } else { h.hidden_nodes };
            let out = if m + 1 == h.mlp_sublayers {
                d
            } else {
                h.hidden_nodes
            };
            linear(&mut s, &format!("l{l}.mlp{m}"), fan_in, out);
        }
    }
    layer_norm(&mut s, "ln_f", d);
    linear(&mut s, "head", d, 1);
    s
}

/// Returns the output and the attention nodes of every layer.
pub(crate) fn forward_traced(
    h: &ModelHyper,
    tape: &mut Tape,
    p: &[Var],
    x: Var,
) -> Result<(Var, Vec<Var>)> {
    let t = tape.shape(x)[0];
    if t > h.max_len {
        return Err(Error::Contract(format!(
            "sequence of {t} samples exceeds the positional table ({})",
            h.max_len
        )));
    }
    let d = h.embed_dim;
    let mut it = p.iter().copied();
    let mut next = || it.next().expect("parameter list matches layout");

    let (we, be) = (next(), next());
    let e = tape.conv1d_causal(x, we, be)?;
    let pos = next();
    let pos = tape.slice_rows(pos, 0, t)?;
    let mut hdn = tape.add(e, pos)?;
    let mut attns = Vec::with_capacity(h.hidden_layers);

    for _ in 0..h.hidden_layers {
        let (g1, b1) = (next(), next());
        let a = tape.layer_norm(hdn, g1, b1, LN_EPS)?;
        let (wq, bq, wk, bk) = (next(), next(), next(), next());
        // one conv with 2d output channels shares the unfolded input
        let (wqk, bqk) = stack_out_channels(tape, [wq, wk], [bq, bk], h)?;
        let qk = tape.conv1d_causal(a, wqk, bqk)?;
        let q = tape.slice_cols(qk, 0, d)?;
        let k = tape.slice_cols(qk, d, d)?;
        let (wv, bv) = (next(), next());
        let v = tape.matmul(a, wv)?;
        let v = tape.add_bias(v, bv)?;
        let att = tape.causal_attention(q, k, v, h.n_heads)?;
        attns.push(att);
        let (wo, bo) = (next(), next());
        let o = tape.matmul(att, wo)?;
        let o = tape.add_bias(o, bo)?;
        hdn = tape.add(hdn, o)?;

        let (g2, b2) = (next(), next());
        let mut m = tape.layer_norm(hdn, g2, b2, LN_EPS)?;
        for j in 0..h.mlp_sublayers {
            let (w, b) = (next(), next());
            m = tape.matmul(m, w)?;
            m = tape.add_bias(m, b)?;
            if j + 1 < h.mlp_sublayers {
                m = tape.relu(m);
            }
        }
        hdn = tape.add(hdn, m)?;
    }
    let (gf, bf) = (next(), next());
    let f = tape.layer_norm(hdn, gf, bf, LN_EPS)?;
    let (wh, bh) = (next(), next());
    let y = tape.matmul(f, wh)?;
    Ok((tape.add_bias(y, bh)?, attns))
}

fn stack_out_channels(
    tape: &mut Tape,
    w: [Var; 2],
    b: [Var; 2],
    h: &ModelHyper,
) -> Result<(Var, Var)> {
    let (d, k) = (h.embed_dim, h.conv_window);
    let w2 = [
        tape.reshape(w[0], &[k * d, d])?,
        tape.reshape(w[1], &[k * d, d])?,
    ];
    let w = tape.concat_cols(&w2)?;
    let w = tape.reshape(w, &[k, d, 2 * d])?;
    let b2 = [tape.reshape(b[0], &[1, d])?, tape.reshape(b[1], &[1, d])?];
    let b = tape.concat_cols(&b2)?;
    Ok((w, tape.reshape(b, &[2 * d])?))
}
