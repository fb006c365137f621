use crate::error::{AutodiffError, Result};
use crate::linalg::{dims2, gemm, Mat};
use crate::tape::{Backprop, Op, Tape, Var};

impl Tape {
    /// Causal 1-D convolution of `x[T×Cin]` with `kernel[K×Cin×Cout]`.
    ///
    /// `y[t,o] = bias[o] + Σ_{k,c} kernel[k,c,o]·x[t−K+1+k, c]`, with `x`
    /// zero for negative time, so `y[t]` only sees `x[t−K+1 ..= t]`.
    pub fn conv1d_causal(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (t, cin) = dims2(self.shape(x), "conv1d_causal")?;
        let (k, kc, cout) = match self.shape(kernel) {
            [k, c, o] => (*k, *c, *o),
            other => {
                return Err(AutodiffError::param(
                    "conv1d_causal",
                    format!("kernel must be [K×Cin×Cout], found {other:?}"),
                ))
            }
        };
        if k == 0 {
            return Err(AutodiffError::param(
                "conv1d_causal",
                "window length must be positive",
            ));
        }
        if kc != cin {
            return Err(AutodiffError::shape(
                "conv1d_causal",
                self.shape(x),
                self.shape(kernel),
            ));
        }
        if self.shape(bias) != [cout] {
            return Err(AutodiffError::shape(
                "conv1d_causal",
                self.shape(kernel),
                self.shape(bias),
            ));
        }
        let mut out = vec![0.0; t * cout];
        let bv = self.value(bias);
        for row in out.chunks_exact_mut(cout) {
            row.copy_from_slice(bv);
        }
        let col = im2col(self.value(x), t, cin, k);
        // y = col[T × K·Cin] · W[K·Cin × Cout]
        gemm(
            t,
            k * cin,
            cout,
            Mat::rows(&col, 0, k * cin),
            Mat::rows(self.value(kernel), 0, cout),
            1.0,
            &mut out,
            0,
            cout,
        );
        Ok(self.push(
            vec![t, cout],
            out,
            Op::Conv1dCausal { x, kernel, bias },
            &[x, kernel, bias],
        ))
    }
}

/// Row `t` holds `x[t−K+1 ..= t]` (zero before the start), flattened tap-major.
fn im2col(x: &[f64], t: usize, cin: usize, k: usize) -> Vec<f64> {
    let kc = k * cin;
    let mut col = vec![0.0; t * kc];
    for ti in 0..t {
        let row = &mut col[ti * kc..(ti + 1) * kc];
        for tap in 0..k {
            if let Some(src) = (ti + tap + 1).checked_sub(k) {
                row[tap * cin..(tap + 1) * cin].copy_from_slice(&x[src * cin..(src + 1) * cin]);
            }
        }
    }
    col
}

pub(crate) fn conv1d_causal_backward(
    ctx: &mut Backprop<'_>,
    x: Var,
    kernel: Var,
    bias: Var,
    g: &[f64],
) {
    let nodes = ctx.nodes;
    let (t, cin) = (nodes[x.0].shape[0], nodes[x.0].shape[1]);
    let (k, cout) = (nodes[kernel.0].shape[0], nodes[kernel.0].shape[2]);
    let (xv, kv) = (&nodes[x.0].value, &nodes[kernel.0].value);
    let kc = k * cin;
    if ctx.wants(x) {
        // dcol = dy · Wᵀ, then scatter back onto the shifted rows
        let mut dcol = vec![0.0; t * kc];
        gemm(
            t,
            cout,
            kc,
            Mat::rows(g, 0, cout),
            Mat::transposed(kv, 0, cout),
            0.0,
            &mut dcol,
            0,
            kc,
        );
        ctx.accumulate(x, |buf| {
            for ti in 0..t {
                let row = &dcol[ti * kc..(ti + 1) * kc];
                for tap in 0..k {
                    let Some(src) = (ti + tap + 1).checked_sub(k) else {
                        continue;
                    };
                    let dst = &mut buf[src * cin..(src + 1) * cin];
                    dst.iter_mut()
                        .zip(&row[tap * cin..(tap + 1) * cin])
                        .for_each(|(d, v)| *d += v);
                }
            }
        });
    }
    if ctx.wants(kernel) {
        let col = im2col(xv, t, cin, k);
        ctx.accumulate(kernel, |buf| {
            // dW += colᵀ · dy
            gemm(
                kc,
                t,
                cout,
                Mat::transposed(&col, 0, kc),
                Mat::rows(g, 0, cout),
                1.0,
                buf,
                0,
                cout,
            );
        });
    }
    ctx.accumulate(bias, |buf| {
        for row in g.chunks_exact(cout) {
            buf.iter_mut().zip(row).for_each(|(b, &v)| *b += v);
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv(x: &[f64], k: usize, kernel: &[f64]) -> Vec<f64> {
        let mut tape = Tape::new();
        let xv = tape.constant(&[x.len(), 1], x.to_vec()).unwrap();
        let kv = tape.constant(&[k, 1, 1], kernel.to_vec()).unwrap();
        let bv = tape.constant(&[1], vec![0.0]).unwrap();
        let y = tape.conv1d_causal(xv, kv, bv).unwrap();
        tape.value(y).to_vec()
    }

    #[test]
    fn identity_kernel() {
        assert_eq!(conv(&[5.0, 7.0], 1, &[1.0]), vec![5.0, 7.0]);
    }

    #[test]
    fn running_pair_sum() {
        assert_eq!(conv(&[1.0, 2.0, 3.0], 2, &[1.0, 1.0]), vec![1.0, 3.0, 5.0]);
    }

    #[test]
    fn window_longer_than_sequence() {
        // K > T is covered by the padding: only the last taps ever see data.
        assert_eq!(
            conv(&[1.0, 2.0], 4, &[9.0, 9.0, 10.0, 1.0]),
            vec![1.0, 12.0]
        );
    }

    #[test]
    fn zero_window_rejected() {
        let mut tape = Tape::new();
        let x = tape.constant(&[4, 1], vec![0.0; 4]).unwrap();
        // A zero-length kernel cannot even be built as a tensor.
        assert!(tape.constant(&[0, 1, 1], vec![]).is_err());
        let k = tape.constant(&[2, 2, 1], vec![0.0; 4]).unwrap();
        let b = tape.constant(&[1], vec![0.0]).unwrap();
        assert!(matches!(
            tape.conv1d_causal(x, k, b),
            Err(AutodiffError::Shape { .. })
        ));
    }
}
