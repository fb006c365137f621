//! Softmax variants and fused multi-head causal attention.

use crate::error::{AutodiffError, Result};
use crate::fastmath;
use crate::linalg::{dims2, gemm, Mat};
use crate::tape::{Backprop, Op, Tape, Var};

/// Query rows are processed in blocks so that only the causal
/// (lower-triangular) part of each score matrix is ever computed.
const BLOCK: usize = 64;

/// In-place softmax of `row`; entries at `valid..` are set to zero.
fn softmax_prefix(row: &mut [f64], valid: usize) {
    let (live, dead) = row.split_at_mut(valid);
    let max = fastmath::max(live);
    let inv = 1.0 / fastmath::exp_affine_sum(live, 1.0, max);
    live.iter_mut().for_each(|v| *v *= inv);
    dead.iter_mut().for_each(|v| *v = 0.0);
}

/// `dx = y ⊙ (g − ⟨g, y⟩)` row by row.
pub(crate) fn softmax_backward(y: &[f64], g: &[f64], n: usize, buf: &mut [f64]) {
    for ((yr, gr), br) in y
        .chunks_exact(n)
        .zip(g.chunks_exact(n))
        .zip(buf.chunks_exact_mut(n))
    {
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((b, &yi), &gi) in br.iter_mut().zip(yr).zip(gr) {
            *b += yi * (gi - dot);
        }
    }
}

impl Tape {
    /// Softmax over the last dimension (max-subtracted, overflow-free).
    pub fn softmax_lastdim(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().unwrap_or(&1);
        let mut out = self.value(x).to_vec();
        for row in out.chunks_exact_mut(n) {
            softmax_prefix(row, n);
        }
        self.push(shape, out, Op::Softmax(x), &[x])
    }

    /// Row-wise softmax of a square `[T×T]` score matrix restricted to the
    /// causal part: row `i` is normalized over columns `0..=i` and is zero
    /// above the diagonal.
    pub fn softmax_causal(&mut self, x: Var) -> Result<Var> {
        let (r, c) = dims2(self.shape(x), "softmax_causal")?;
        if r != c {
            return Err(AutodiffError::param(
                "softmax_causal",
                format!("score matrix must be square, found [{r}, {c}]"),
            ));
        }
        let mut out = self.value(x).to_vec();
        for (i, row) in out.chunks_exact_mut(c).enumerate() {
            softmax_prefix(row, i + 1);
        }
        Ok(self.push(vec![r, c], out, Op::SoftmaxCausal(x), &[x]))
    }

    /// Multi-head scaled dot-product attention with a causal mask.
    ///
    /// `q`, `k`, `v` are `[T×D]`; head `h` uses columns `h·D/H .. (h+1)·D/H`.
    /// Scores are scaled by `1/√(D/H)`; the concatenated head outputs are
    /// returned as `[T×D]`. Only the per-row log-normalizers are kept, the
    /// probabilities are recomputed block by block in the backward pass.
    pub fn causal_attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let (t, d) = dims2(self.shape(q), "causal_attention")?;
        for other in [k, v] {
            if self.shape(other) != [t, d] {
                return Err(AutodiffError::shape(
                    "causal_attention",
                    self.shape(q),
                    self.shape(other),
                ));
            }
        }
        if heads == 0 || d % heads != 0 {
            return Err(AutodiffError::param(
                "causal_attention",
                format!("width {d} is not divisible by {heads} heads"),
            ));
        }
        let geo = Geometry::new(d, heads);
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut lse = vec![0.0; heads * t];
        let mut out = vec![0.0; t * d];
        let mut block = vec![0.0; BLOCK.min(t) * t];
        for h in 0..heads {
            for r0 in (0..t).step_by(BLOCK) {
                let r1 = (r0 + BLOCK).min(t);
                geo.raw_scores(qv, kv, h, r0, r1, &mut block);
                // rows are left unnormalized; 1/Σ is applied to the output
                let mut inv = [0.0; BLOCK];
                for (i, row) in block.chunks_exact_mut(r1).take(r1 - r0).enumerate() {
                    let (live, dead) = row.split_at_mut(r0 + i + 1);
                    let shift = geo.scale * fastmath::max(live);
                    let sum = fastmath::exp_affine_sum(live, geo.scale, shift);
                    dead.iter_mut().for_each(|x| *x = 0.0);
                    lse[h * t + r0 + i] = shift + sum.ln();
                    inv[i] = 1.0 / sum;
                }
                let col = r0 * d + h * geo.dh;
                // O_h[r0..r1] = P · V_h[0..r1]
                gemm(
                    r1 - r0,
                    r1,
                    geo.dh,
                    Mat::rows(&block, 0, r1),
                    Mat::rows(vv, h * geo.dh, d),
                    0.0,
                    &mut out,
                    col,
                    d,
                );
                for (i, c) in inv.iter().take(r1 - r0).enumerate() {
                    out[col + i * d..col + i * d + geo.dh]
                        .iter_mut()
                        .for_each(|x| *x *= c);
                }
            }
        }
        Ok(self.push(
            vec![t, d],
            out,
            Op::CausalAttention {
                q,
                k,
                v,
                heads,
                lse,
            },
            &[q, k, v],
        ))
    }

    /// Attention probabilities of a node produced by [`Tape::causal_attention`],
    /// laid out as `heads × T × T` (row-stochastic, zero above the diagonal).
    pub fn attention_probs(&self, attn: Var) -> Option<Vec<f64>> {
        let Op::CausalAttention {
            q, k, heads, lse, ..
        } = &self.nodes[attn.0].op
        else {
            return None;
        };
        let (t, d) = (self.shape(*q)[0], self.shape(*q)[1]);
        let geo = Geometry::new(d, *heads);
        let (qv, kv) = (self.value(*q), self.value(*k));
        let mut probs = vec![0.0; heads * t * t];
        let mut block = vec![0.0; BLOCK.min(t) * t];
        for h in 0..*heads {
            for r0 in (0..t).step_by(BLOCK) {
                let r1 = (r0 + BLOCK).min(t);
                geo.probs(qv, kv, &lse[h * t..], h, r0, r1, &mut block);
                for (i, row) in block.chunks_exact(r1).take(r1 - r0).enumerate() {
                    let dst = (h * t + r0 + i) * t;
                    probs[dst..dst + r1].copy_from_slice(row);
                }
            }
        }
        Some(probs)
    }
}

#[derive(Clone, Copy)]
struct Geometry {
    d: usize,
    dh: usize,
    scale: f64,
}

impl Geometry {
    fn new(d: usize, heads: usize) -> Self {
        let dh = d / heads;
        Geometry {
            d,
            dh,
            scale: 1.0 / (dh as f64).sqrt(),
        }
    }

    /// Unscaled scores of query rows `r0..r1` against keys `0..r1`, row stride `r1`.
    fn raw_scores(&self, qv: &[f64], kv: &[f64], h: usize, r0: usize, r1: usize, out: &mut [f64]) {
        let col = h * self.dh;
        gemm(
            r1 - r0,
            self.dh,
            r1,
            Mat::rows(qv, r0 * self.d + col, self.d),
            Mat::transposed(kv, col, self.d),
            0.0,
            out,
            0,
            r1,
        );
    }

    /// Probabilities of rows `r0..r1` rebuilt from the stored log-normalizers.
    #[allow(clippy::too_many_arguments)]
    fn probs(
        &self,
        qv: &[f64],
        kv: &[f64],
        lse: &[f64],
        h: usize,
        r0: usize,
        r1: usize,
        out: &mut [f64],
    ) {
        self.raw_scores(qv, kv, h, r0, r1, out);
        for (i, row) in out.chunks_exact_mut(r1).take(r1 - r0).enumerate() {
            let (live, dead) = row.split_at_mut(r0 + i + 1);
            fastmath::exp_affine_sum(live, self.scale, lse[r0 + i]);
            dead.iter_mut().for_each(|s| *s = 0.0);
        }
    }
}

pub(crate) fn causal_attention_backward(
    ctx: &mut Backprop<'_>,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    lse: &[f64],
    g: &[f64],
) {
    let nodes = ctx.nodes;
    let (t, d) = (nodes[q.0].shape[0], nodes[q.0].shape[1]);
    let geo = Geometry::new(d, heads);
    let dh = geo.dh;
    let (qv, kv, vv) = (&nodes[q.0].value, &nodes[k.0].value, &nodes[v.0].value);
    let (need_q, need_k, need_v) = (ctx.wants(q), ctx.wants(k), ctx.wants(v));
    if !(need_q || need_k || need_v) {
        return;
    }
    let mut dq = vec![0.0; if need_q { t * d } else { 0 }];
    let mut dk = vec![0.0; if need_k { t * d } else { 0 }];
    let mut dv = vec![0.0; if need_v { t * d } else { 0 }];
    let mut p = vec![0.0; BLOCK.min(t) * t];
    let mut ds = vec![0.0; BLOCK.min(t) * t];

    for h in 0..heads {
        let col = h * dh;
        for r0 in (0..t).step_by(BLOCK) {
            let r1 = (r0 + BLOCK).min(t);
            let rows = r1 - r0;
            geo.probs(qv, kv, &lse[h * t..], h, r0, r1, &mut p);
            if need_v {
                // dV_h[0..r1] += Pᵀ · dO_h[r0..r1]
                gemm(
                    r1,
                    rows,
                    dh,
                    Mat::transposed(&p, 0, r1),
                    Mat::rows(g, r0 * d + col, d),
                    1.0,
                    &mut dv,
                    col,
                    d,
                );
            }
            if !(need_q || need_k) {
                continue;
            }
            // dP = dO_h[r0..r1] · V_h[0..r1]ᵀ
            gemm(
                rows,
                dh,
                r1,
                Mat::rows(g, r0 * d + col, d),
                Mat::transposed(vv, col, d),
                0.0,
                &mut ds,
                0,
                r1,
            );
            for (prow, srow) in p.chunks_exact(r1).zip(ds.chunks_exact_mut(r1)).take(rows) {
                let dot = fastmath::dot(prow, srow);
                for (s, &pi) in srow.iter_mut().zip(prow) {
                    *s = geo.scale * pi * (*s - dot);
                }
            }
            if need_q {
                // dQ_h[r0..r1] += dS · K_h[0..r1]
                gemm(
                    rows,
                    r1,
                    dh,
                    Mat::rows(&ds, 0, r1),
                    Mat::rows(kv, col, d),
                    1.0,
                    &mut dq,
                    r0 * d + col,
                    d,
                );
            }
            if need_k {
                // dK_h[0..r1] += dSᵀ · Q_h[r0..r1]
                gemm(
                    r1,
                    rows,
                    dh,
                    Mat::transposed(&ds, 0, r1),
                    Mat::rows(qv, r0 * d + col, d),
                    1.0,
                    &mut dk,
                    col,
                    d,
                );
            }
        }
    }
    for (var, grad, needed) in [(q, dq, need_q), (k, dk, need_k), (v, dv, need_v)] {
        if needed {
            ctx.accumulate(var, |buf| crate::tape::add_into(buf, &grad));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_input_gives_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(&[2], vec![0.0, 0.0]).unwrap();
        let y = tape.softmax_lastdim(x);
        assert_eq!(tape.value(y), &[0.5, 0.5]);
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let mut tape = Tape::new();
        let x = tape.constant(&[2], vec![1000.0, 0.0]).unwrap();
        let y = tape.softmax_lastdim(x);
        let v = tape.value(y);
        assert!((v[0] - 1.0).abs() < 1e-15 && v[1] >= 0.0 && v[1] < 1e-300);
        assert!(v.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn causal_softmax_is_lower_triangular() {
        let mut tape = Tape::new();
        let x = tape
            .constant(&[3, 3], (0..9).map(|i| i as f64 * 0.3).collect())
            .unwrap();
        let y = tape.softmax_causal(x).unwrap();
        let v = tape.value(y);
        assert_eq!(v[0], 1.0);
        assert_eq!(&v[1..3], &[0.0, 0.0]);
        assert_eq!(v[5], 0.0);
        for row in v.chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn heads_must_divide_width() {
        let mut tape = Tape::new();
        let q = tape.constant(&[4, 6], vec![0.1; 24]).unwrap();
        assert!(tape.causal_attention(q, q, q, 4).is_err());
        assert!(tape.causal_attention(q, q, q, 3).is_ok());
    }
}
