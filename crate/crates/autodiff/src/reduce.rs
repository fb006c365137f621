use crate::error::{AutodiffError, Result};
use crate::tape::{Backprop, Op, Tape, Var};

impl Tape {
    /// Arithmetic mean of all elements, as a scalar.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if v.is_empty() {
            return Err(AutodiffError::param("mean", "empty tensor"));
        }
        let m = v.iter().sum::<f64>() / v.len() as f64;
        Ok(self.push(Vec::new(), vec![m], Op::Mean(x), &[x]))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        self.push(Vec::new(), vec![s], Op::Sum(x), &[x])
    }
}

pub(crate) fn mean_backward(ctx: &mut Backprop<'_>, x: Var, g: f64) {
    let n = ctx.value(x).len() as f64;
    ctx.accumulate(x, |buf| buf.iter_mut().for_each(|b| *b += g / n));
}

pub(crate) fn sum_backward(ctx: &mut Backprop<'_>, x: Var, g: f64) {
    ctx.accumulate(x, |buf| buf.iter_mut().for_each(|b| *b += g));
}
