use crate::error::{AutodiffError, Result};
use crate::linalg::dims2;
use crate::tape::{Backprop, Op, Tape, Var};

impl Tape {
    /// Layer normalization over the last dimension of `x[R×C]` with
    /// per-feature gain and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (r, c) = dims2(self.shape(x), "layer_norm")?;
        for p in [gamma, beta] {
            if self.shape(p) != [c] {
                return Err(AutodiffError::shape(
                    "layer_norm",
                    self.shape(x),
                    self.shape(p),
                ));
            }
        }
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let mut xhat = vec![0.0; r * c];
        let mut rstd = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[i] = rs;
            for j in 0..c {
                let xh = (row[j] - mean) * rs;
                xhat[i * c + j] = xh;
                out[i * c + j] = xh * gv[j] + bv[j];
            }
        }
        Ok(self.push(
            vec![r, c],
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            &[x, gamma, beta],
        ))
    }
}

pub(crate) fn layer_norm_backward(
    ctx: &mut Backprop<'_>,
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: &[f64],
    rstd: &[f64],
    g: &[f64],
) {
    let nodes = ctx.nodes;
    let c = nodes[gamma.0].value.len();
    let gv = &nodes[gamma.0].value;
    ctx.accumulate(gamma, |buf| {
        for (gr, xr) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
            for j in 0..c {
                buf[j] += gr[j] * xr[j];
            }
        }
    });
    ctx.accumulate(beta, |buf| {
        for gr in g.chunks_exact(c) {
            buf.iter_mut().zip(gr).for_each(|(b, &v)| *b += v);
        }
    });
    ctx.accumulate(x, |buf| {
        let mut dxhat = vec![0.0; c];
        for (i, (gr, xr)) in g.chunks_exact(c).zip(xhat.chunks_exact(c)).enumerate() {
            for j in 0..c {
                dxhat[j] = gr[j] * gv[j];
            }
            let mean_d = dxhat.iter().sum::<f64>() / c as f64;
            let mean_dx = dxhat.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / c as f64;
            let out = &mut buf[i * c..(i + 1) * c];
            for j in 0..c {
                out[j] += rstd[i] * (dxhat[j] - mean_d - xr[j] * mean_dx);
            }
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalized_rows_have_zero_mean_unit_variance() {
        let mut tape = Tape::new();
        let x = tape
            .constant(&[2, 4], vec![1.0, 2.0, 3.0, 4.0, -2.0, 0.0, 2.0, 8.0])
            .unwrap();
        let g = tape.constant(&[4], vec![1.0; 4]).unwrap();
        let b = tape.constant(&[4], vec![0.0; 4]).unwrap();
        let y = tape.layer_norm(x, g, b, 0.0).unwrap();
        for row in tape.value(y).chunks(4) {
            let m: f64 = row.iter().sum::<f64>() / 4.0;
            let v: f64 = row.iter().map(|r| (r - m) * (r - m)).sum::<f64>() / 4.0;
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
        }
    }
}
