//! Reshaping, slicing, concatenation and lag-embedding operations.

use crate::error::{AutodiffError, Result};
use crate::linalg::dims2;
use crate::tape::{Backprop, Op, Tape, Var};
use crate::tensor::numel;

/// Number of unordered pairs `(i, j)`, `i ≤ j`, among `m` columns.
pub fn pair_count(m: usize) -> usize {
    m * (m + 1) / 2
}

fn seq_len(shape: &[usize], op: &'static str) -> Result<usize> {
    match shape {
        [t] | [t, 1] => Ok(*t),
        other => Err(AutodiffError::param(
            op,
            format!("expected a [T] or [T×1] sequence, found {other:?}"),
        )),
    }
}

impl Tape {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(x).len() || shape.iter().any(|&d| d == 0) {
            return Err(AutodiffError::shape("reshape", self.shape(x), shape));
        }
        let value = self.value(x).to_vec();
        Ok(self.push(shape.to_vec(), value, Op::Reshape(x), &[x]))
    }

    /// Rows `start..start+len` of `x[R×C]`.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = dims2(self.shape(x), "slice_rows")?;
        if len == 0 || start + len > r {
            return Err(AutodiffError::param(
                "slice_rows",
                format!("rows {start}..{} out of 0..{r}", start + len),
            ));
        }
        let value = self.value(x)[start * c..(start + len) * c].to_vec();
        Ok(self.push(vec![len, c], value, Op::SliceRows { x, start }, &[x]))
    }

    /// Columns `start..start+len` of `x[R×C]`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = dims2(self.shape(x), "slice_cols")?;
        if len == 0 || start + len > c {
            return Err(AutodiffError::param(
                "slice_cols",
                format!("columns {start}..{} out of 0..{c}", start + len),
            ));
        }
        let xv = self.value(x);
        let mut value = Vec::with_capacity(r * len);
        for row in xv.chunks_exact(c) {
            value.extend_from_slice(&row[start..start + len]);
        }
        Ok(self.push(vec![r, len], value, Op::SliceCols { x, start }, &[x]))
    }

    /// Stacks `[Ri×C]` blocks vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| AutodiffError::param("concat_rows", "nothing to concatenate"))?;
        let (_, c) = dims2(self.shape(first), "concat_rows")?;
        let mut rows = 0;
        for &p in parts {
            let (r, pc) = dims2(self.shape(p), "concat_rows")?;
            if pc != c {
                return Err(AutodiffError::shape(
                    "concat_rows",
                    self.shape(first),
                    self.shape(p),
                ));
            }
            rows += r;
        }
        let mut value = Vec::with_capacity(rows * c);
        for &p in parts {
            value.extend_from_slice(self.value(p));
        }
        Ok(self.push(vec![rows, c], value, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Places `[R×Ci]` blocks side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| AutodiffError::param("concat_cols", "nothing to concatenate"))?;
        let (r, _) = dims2(self.shape(first), "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = dims2(self.shape(p), "concat_cols")?;
            if pr != r {
                return Err(AutodiffError::shape(
                    "concat_cols",
                    self.shape(first),
                    self.shape(p),
                ));
            }
            widths.push(pc);
        }
        let c: usize = widths.iter().sum();
        let mut value = Vec::with_capacity(r * c);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                value.extend_from_slice(&self.value(p)[i * w..(i + 1) * w]);
            }
        }
        Ok(self.push(vec![r, c], value, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Delay-line embedding: `out[t][i] = x[t − i]` for `i < lags`, zero
    /// before the start of the sequence.
    pub fn lag_matrix(&mut self, x: Var, lags: usize) -> Result<Var> {
        let t = seq_len(self.shape(x), "lag_matrix")?;
        if lags == 0 {
            return Err(AutodiffError::param("lag_matrix", "need at least one lag"));
        }
        let xv = self.value(x);
        let mut value = vec![0.0; t * lags];
        for ti in 0..t {
            let row = &mut value[ti * lags..(ti + 1) * lags];
            for (i, slot) in row.iter_mut().enumerate().take(ti + 1) {
                *slot = xv[ti - i];
            }
        }
        Ok(self.push(vec![t, lags], value, Op::LagMatrix { x, lags }, &[x]))
    }

    /// All pairwise column products `x[:,i]·x[:,j]` with `i ≤ j`, ordered
    /// `(0,0), (0,1), …, (0,M−1), (1,1), …`.
    pub fn pair_products(&mut self, x: Var) -> Result<Var> {
        let (r, m) = dims2(self.shape(x), "pair_products")?;
        let p = pair_count(m);
        let xv = self.value(x);
        let mut value = Vec::with_capacity(r * p);
        for row in xv.chunks_exact(m) {
            for i in 0..m {
                for j in i..m {
                    value.push(row[i] * row[j]);
                }
            }
        }
        Ok(self.push(vec![r, p], value, Op::PairProducts(x), &[x]))
    }
}

pub(crate) fn slice_rows_backward(ctx: &mut Backprop<'_>, x: Var, start: usize, g: &[f64]) {
    let c = ctx.shape(x)[1];
    ctx.accumulate(x, |buf| {
        crate::tape::add_into(&mut buf[start * c..start * c + g.len()], g)
    });
}

pub(crate) fn slice_cols_backward(
    ctx: &mut Backprop<'_>,
    x: Var,
    start: usize,
    out_shape: &[usize],
    g: &[f64],
) {
    let c = ctx.shape(x)[1];
    let len = out_shape[1];
    ctx.accumulate(x, |buf| {
        for (row, gr) in buf.chunks_exact_mut(c).zip(g.chunks_exact(len)) {
            crate::tape::add_into(&mut row[start..start + len], gr);
        }
    });
}

pub(crate) fn concat_rows_backward(ctx: &mut Backprop<'_>, parts: &[Var], g: &[f64]) {
    let mut offset = 0;
    for &p in parts {
        let n = ctx.value(p).len();
        ctx.accumulate(p, |buf| crate::tape::add_into(buf, &g[offset..offset + n]));
        offset += n;
    }
}

pub(crate) fn concat_cols_backward(
    ctx: &mut Backprop<'_>,
    parts: &[Var],
    out_shape: &[usize],
    g: &[f64],
) {
    let c = out_shape[1];
    let mut col = 0;
    for &p in parts {
        let w = ctx.shape(p)[1];
        ctx.accumulate(p, |buf| {
            for (row, gr) in buf.chunks_exact_mut(w).zip(g.chunks_exact(c)) {
                crate::tape::add_into(row, &gr[col..col + w]);
            }
        });
        col += w;
    }
}

pub(crate) fn lag_matrix_backward(ctx: &mut Backprop<'_>, x: Var, lags: usize, g: &[f64]) {
    ctx.accumulate(x, |buf| {
        for (ti, gr) in g.chunks_exact(lags).enumerate() {
            for (i, &gv) in gr.iter().enumerate().take(ti + 1) {
                buf[ti - i] += gv;
            }
        }
    });
}

pub(crate) fn pair_products_backward(ctx: &mut Backprop<'_>, x: Var, g: &[f64]) {
    let m = ctx.shape(x)[1];
    let p = pair_count(m);
    let xv = ctx.nodes[x.0].value.as_slice();
    ctx.accumulate(x, |buf| {
        for ((row, gr), br) in xv
            .chunks_exact(m)
            .zip(g.chunks_exact(p))
            .zip(buf.chunks_exact_mut(m))
        {
            let mut idx = 0;
            for i in 0..m {
                for j in i..m {
                    br[i] += gr[idx] * row[j];
                    br[j] += gr[idx] * row[i];
                    idx += 1;
                }
            }
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lag_matrix_zero_pads() {
        let mut tape = Tape::new();
        let x = tape.constant(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let l = tape.lag_matrix(x, 2).unwrap();
        assert_eq!(tape.value(l), &[1.0, 0.0, 2.0, 1.0, 3.0, 2.0]);
    }

    #[test]
    fn pair_products_order() {
        let mut tape = Tape::new();
        let x = tape.constant(&[1, 3], vec![2.0, 3.0, 5.0]).unwrap();
        let p = tape.pair_products(x).unwrap();
        assert_eq!(tape.value(p), &[4.0, 6.0, 10.0, 9.0, 15.0, 25.0]);
        assert_eq!(pair_count(16), 136);
    }

    #[test]
    fn slice_and_concat_round_trip() {
        let mut tape = Tape::new();
        let x = tape
            .constant(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
            .unwrap();
        let a = tape.slice_cols(x, 0, 1).unwrap();
        let b = tape.slice_cols(x, 1, 2).unwrap();
        let y = tape.concat_cols(&[a, b]).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
        let r0 = tape.slice_rows(x, 0, 1).unwrap();
        let r1 = tape.slice_rows(x, 1, 1).unwrap();
        let z = tape.concat_rows(&[r0, r1]).unwrap();
        assert_eq!(tape.value(z), tape.value(x));
        assert!(tape.slice_rows(x, 1, 2).is_err());
    }
}
