//! Pointwise operations. Binary operations require equal shapes; the only
//! broadcast allowed is a single-element operand against a tensor.

use crate::error::{AutodiffError, Result};
use crate::tape::{Backprop, Op, Tape, Var};

#[derive(Clone, Copy)]
enum Bcast {
    Same,
    LeftScalar,
    RightScalar,
}

fn is_scalar(shape: &[usize]) -> bool {
    shape.iter().product::<usize>() == 1
}

fn classify(op: &'static str, a: &[usize], b: &[usize]) -> Result<(Bcast, Vec<usize>)> {
    if a == b {
        Ok((Bcast::Same, a.to_vec()))
    } else if is_scalar(a) && a.len() <= 1 {
        Ok((Bcast::LeftScalar, b.to_vec()))
    } else if is_scalar(b) && b.len() <= 1 {
        Ok((Bcast::RightScalar, a.to_vec()))
    } else {
        Err(AutodiffError::shape(op, a, b))
    }
}

fn binary(
    tape: &Tape,
    op: &'static str,
    a: Var,
    b: Var,
    f: impl Fn(f64, f64) -> f64,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let (mode, shape) = classify(op, tape.shape(a), tape.shape(b))?;
    let (av, bv) = (tape.value(a), tape.value(b));
    let value = match mode {
        Bcast::Same => av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect(),
        Bcast::LeftScalar => bv.iter().map(|&y| f(av[0], y)).collect(),
        Bcast::RightScalar => av.iter().map(|&x| f(x, bv[0])).collect(),
    };
    Ok((shape, value))
}

fn unary(tape: &mut Tape, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
    let shape = tape.shape(x).to_vec();
    let value = tape.value(x).iter().map(|&v| f(v)).collect();
    tape.push(shape, value, op, &[x])
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, value) = binary(self, "add", a, b, |x, y| x + y)?;
        Ok(self.push(shape, value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, value) = binary(self, "sub", a, b, |x, y| x - y)?;
        Ok(self.push(shape, value, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, value) = binary(self, "mul", a, b, |x, y| x * y)?;
        Ok(self.push(shape, value, Op::Mul(a, b), &[a, b]))
    }

    /// `x + c` for a constant `c`.
    pub fn add_const(&mut self, x: Var, c: f64) -> Var {
        unary(self, x, Op::AddConst(x), |v| v + c)
    }

    /// `c * x` for a constant `c`.
    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        unary(self, x, Op::Scale(x, c), |v| c * v)
    }

    pub fn square(&mut self, x: Var) -> Var {
        unary(self, x, Op::Square(x), |v| v * v)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        if self.value(x).iter().any(|&v| v < 0.0) {
            return Err(AutodiffError::param("sqrt", "negative input"));
        }
        Ok(unary(self, x, Op::Sqrt(x), f64::sqrt))
    }

    /// ReLU; the subgradient at exactly zero is zero.
    pub fn relu(&mut self, x: Var) -> Var {
        unary(self, x, Op::Relu(x), |v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        unary(self, x, Op::Sigmoid(x), sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        unary(self, x, Op::Tanh(x), f64::tanh)
    }
}

fn reduce_into_scalar(buf: &mut [f64], g: &[f64], weight: impl Fn(usize) -> f64) {
    buf[0] += g
        .iter()
        .enumerate()
        .map(|(i, &gi)| gi * weight(i))
        .sum::<f64>();
}

pub(crate) fn add_backward(ctx: &mut Backprop<'_>, a: Var, b: Var, g: &[f64], sign_b: f64) {
    let (sa, sb) = (ctx.shape(a).to_vec(), ctx.shape(b).to_vec());
    let a_scalar = sa != sb && is_scalar(&sa);
    let b_scalar = sa != sb && is_scalar(&sb);
    ctx.accumulate(a, |buf| {
        if a_scalar {
            reduce_into_scalar(buf, g, |_| 1.0);
        } else {
            buf.iter_mut().zip(g).for_each(|(d, &gi)| *d += gi);
        }
    });
    ctx.accumulate(b, |buf| {
        if b_scalar {
            reduce_into_scalar(buf, g, |_| sign_b);
        } else {
            buf.iter_mut().zip(g).for_each(|(d, &gi)| *d += sign_b * gi);
        }
    });
}

pub(crate) fn mul_backward(ctx: &mut Backprop<'_>, a: Var, b: Var, g: &[f64]) {
    let nodes = ctx.nodes;
    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
    let (sa, sb) = (&nodes[a.0].shape, &nodes[b.0].shape);
    let a_scalar = sa != sb && is_scalar(sa);
    let b_scalar = sa != sb && is_scalar(sb);
    ctx.accumulate(a, |buf| {
        if a_scalar {
            reduce_into_scalar(buf, g, |i| bv[i]);
        } else if b_scalar {
            buf.iter_mut().zip(g).for_each(|(d, &gi)| *d += gi * bv[0]);
        } else {
            for ((d, &gi), &y) in buf.iter_mut().zip(g).zip(bv) {
                *d += gi * y;
            }
        }
    });
    ctx.accumulate(b, |buf| {
        if b_scalar {
            reduce_into_scalar(buf, g, |i| av[i]);
        } else if a_scalar {
            buf.iter_mut().zip(g).for_each(|(d, &gi)| *d += gi * av[0]);
        } else {
            for ((d, &gi), &x) in buf.iter_mut().zip(g).zip(av) {
                *d += gi * x;
            }
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    #[test]
    fn relu_sigmoid_tanh_values() {
        let mut tape = Tape::new();
        let x = tape.constant(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        let r = tape.relu(x);
        assert_eq!(tape.value(r), &[0.0, 0.0, 2.0]);
        let z = tape.constant(&[1], vec![0.0]).unwrap();
        let s = tape.sigmoid(z);
        let t = tape.tanh(z);
        assert_eq!(tape.value(s), &[0.5]);
        assert_eq!(tape.value(t), &[0.0]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut tape = Tape::new();
        let a = tape.constant(&[2, 3], vec![0.0; 6]).unwrap();
        let b = tape.constant(&[3, 2], vec![0.0; 6]).unwrap();
        let err = tape.add(a, b).unwrap_err();
        assert_eq!(
            err,
            AutodiffError::Shape {
                op: "add",
                left: vec![2, 3],
                right: vec![3, 2]
            }
        );
        // a [2] vector is not a scalar even though it could be broadcast.
        let c = tape.constant(&[2], vec![1.0, 2.0]).unwrap();
        assert!(tape.mul(a, c).is_err());
    }

    #[test]
    fn scalar_broadcast_gradients() {
        let mut tape = Tape::new();
        let s = tape.leaf(&Tensor::scalar(3.0).with_requires_grad(true));
        let x = tape.variable(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = tape.mul(s, x).unwrap();
        let loss = tape.sum(y);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(s).unwrap(), &[10.0]);
        assert_eq!(grads.get(x).unwrap(), &[3.0; 4]);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut tape = Tape::new();
        let x = tape.variable(&[3], vec![-1.0, 0.0, 1.0]).unwrap();
        let y = tape.relu(x);
        let loss = tape.sum(y);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
    }
}
