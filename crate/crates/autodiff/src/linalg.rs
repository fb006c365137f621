use crate::error::{AutodiffError, Result};
use crate::tape::{Backprop, Op, Tape, Var};

/// Strided view of a row-major matrix inside a slice.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a> {
    pub data: &'a [f64],
    pub offset: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a> Mat<'a> {
    pub fn rows(data: &'a [f64], offset: usize, rs: usize) -> Self {
        Mat {
            data,
            offset,
            rs,
            cs: 1,
        }
    }

    /// The transpose of a row-major block starting at `offset` with row stride `rs`.
    pub fn transposed(data: &'a [f64], offset: usize, rs: usize) -> Self {
        Mat {
            data,
            offset,
            rs: 1,
            cs: rs,
        }
    }

    fn check(&self, rows: usize, cols: usize) {
        if rows > 0 && cols > 0 {
            let last = self.offset + (rows - 1) * self.rs + (cols - 1) * self.cs;
            assert!(last < self.data.len(), "gemm operand out of bounds");
        }
    }
}

/// `c[m×n] = beta·c + a[m×k]·b[k×n]` on strided views.
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: Mat<'_>,
    b: Mat<'_>,
    beta: f64,
    c: &mut [f64],
    c_offset: usize,
    c_rs: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    a.check(m, k);
    b.check(k, n);
    assert!(
        c_offset + (m - 1) * c_rs + n <= c.len(),
        "gemm output out of bounds"
    );
    if k == 0 {
        for i in 0..m {
            let row = &mut c[c_offset + i * c_rs..c_offset + i * c_rs + n];
            row.iter_mut().for_each(|v| *v *= beta);
        }
        return;
    }
    // SAFETY: every index touched by dgemm was bounds-checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr().add(a.offset),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr().add(b.offset),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr().add(c_offset),
            c_rs as isize,
            1,
        );
    }
}

pub(crate) fn dims2(tape_shape: &[usize], op: &'static str) -> Result<(usize, usize)> {
    match tape_shape {
        [r, c] => Ok((*r, *c)),
        other => Err(AutodiffError::param(
            op,
            format!("expected a 2-D tensor, found shape {other:?}"),
        )),
    }
}

impl Tape {
    /// Matrix product `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a[m×k] · bᵀ` where `b` is `[n×k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (m, k) = dims2(self.shape(a), "matmul")?;
        let (br, bc) = dims2(self.shape(b), "matmul")?;
        let (kb, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != kb {
            return Err(AutodiffError::shape("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        let bm = if trans_b {
            Mat::transposed(self.value(b), 0, bc)
        } else {
            Mat::rows(self.value(b), 0, bc)
        };
        gemm(
            m,
            k,
            n,
            Mat::rows(self.value(a), 0, k),
            bm,
            0.0,
            &mut out,
            0,
            n,
        );
        Ok(self.push(vec![m, n], out, Op::MatMul { a, b, trans_b }, &[a, b]))
    }

    /// Adds a per-column bias `[C]` to every row of `x[R×C]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (r, c) = dims2(self.shape(x), "add_bias")?;
        if self.shape(bias) != [c] {
            return Err(AutodiffError::shape(
                "add_bias",
                self.shape(x),
                self.shape(bias),
            ));
        }
        let bv = self.value(bias);
        let mut out = self.value(x).to_vec();
        for row in out.chunks_exact_mut(c) {
            row.iter_mut().zip(bv).for_each(|(o, &b)| *o += b);
        }
        debug_assert_eq!(out.len(), r * c);
        Ok(self.push(vec![r, c], out, Op::AddBias { x, bias }, &[x, bias]))
    }
}

pub(crate) fn matmul_backward(ctx: &mut Backprop<'_>, a: Var, b: Var, trans_b: bool, g: &[f64]) {
    let nodes = ctx.nodes;
    let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
    let (br, bc) = (nodes[b.0].shape[0], nodes[b.0].shape[1]);
    let n = if trans_b { br } else { bc };
    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
    // dA = G·Bᵀ  (G is m×n)
    ctx.accumulate(a, |buf| {
        let bt = if trans_b {
            Mat::rows(bv, 0, bc)
        } else {
            Mat::transposed(bv, 0, bc)
        };
        gemm(m, n, k, Mat::rows(g, 0, n), bt, 1.0, buf, 0, k);
    });
    ctx.accumulate(b, |buf| {
        if trans_b {
            // dB[n×k] = Gᵀ·A
            gemm(
                n,
                m,
                k,
                Mat::transposed(g, 0, n),
                Mat::rows(av, 0, k),
                1.0,
                buf,
                0,
                k,
            );
        } else {
            // dB[k×n] = Aᵀ·G
            gemm(
                k,
                m,
                n,
                Mat::transposed(av, 0, k),
                Mat::rows(g, 0, n),
                1.0,
                buf,
                0,
                n,
            );
        }
    });
}
