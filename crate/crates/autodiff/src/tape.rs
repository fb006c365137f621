use crate::error::{AutodiffError, Result};
use crate::tensor::Tensor;
use crate::{attention, conv, elementwise, linalg, norm, reduce, shape};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Vector-Jacobian product of a user-defined operation.
///
/// Receives the input values, the output value and the upstream gradient,
/// and returns one gradient buffer per input.
pub type CustomVjp = Box<dyn Fn(&[&[f64]], &[f64], &[f64]) -> Vec<Vec<f64>> + Send + Sync>;

pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddConst(Var),
    Scale(Var, f64),
    Square(Var),
    Sqrt(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    AddBias {
        x: Var,
        bias: Var,
    },
    Conv1dCausal {
        x: Var,
        kernel: Var,
        bias: Var,
    },
    Softmax(Var),
    SoftmaxCausal(Var),
    CausalAttention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        lse: Vec<f64>,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Reshape(Var),
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    LagMatrix {
        x: Var,
        lags: usize,
    },
    PairProducts(Var),
    Mean(Var),
    Sum(Var),
    Custom {
        inputs: Vec<Var>,
        vjp: CustomVjp,
    },
}

pub(crate) struct Node {
    pub(crate) shape: Vec<usize>,
    pub(crate) value: Vec<f64>,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// Dynamic reverse-mode tape. Rebuilt for every forward pass.
///
/// Nodes are appended in evaluation order, so the node list is always a
/// valid topological order and backward is a single reverse sweep.
#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records `t` as a leaf; it takes part in backward iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push_raw(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Leaf,
            t.requires_grad(),
        )
    }

    /// Records a frozen leaf that never receives a gradient.
    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.leaf(&t))
    }

    /// Records a trainable leaf built from raw values.
    pub fn variable(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        let t = Tensor::param(shape, data)?;
        Ok(self.leaf(&t))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        let node = &self.nodes[v.0];
        if node.value.len() != 1 {
            return Err(AutodiffError::Contract(format!(
                "expected a scalar, found shape {:?}",
                node.shape
            )));
        }
        Ok(node.value[0])
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let node = &self.nodes[v.0];
        Tensor::new(&node.shape, node.value.clone())
            .expect("tape nodes always hold consistent shapes")
            .with_requires_grad(node.requires_grad)
    }

    pub(crate) fn push_raw(
        &mut self,
        shape: Vec<usize>,
        value: Vec<f64>,
        op: Op,
        requires_grad: bool,
    ) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Appends an op whose output requires grad iff any input does.
    pub(crate) fn push(
        &mut self,
        shape: Vec<usize>,
        value: Vec<f64>,
        op: Op,
        inputs: &[Var],
    ) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_raw(shape, value, op, requires_grad)
    }

    /// Records an operation with a caller-supplied forward value and VJP.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        shape: &[usize],
        value: Vec<f64>,
        vjp: CustomVjp,
    ) -> Result<Var> {
        if shape.iter().product::<usize>() != value.len() {
            return Err(AutodiffError::param(
                "custom",
                "output value does not match its shape",
            ));
        }
        Ok(self.push(
            shape.to_vec(),
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                vjp,
            },
            inputs,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Every node that requires grad and is reachable from `loss` gets an
    /// entry; fan-out contributions are summed.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let n = self.nodes.len();
        if loss.0 >= n {
            return Err(AutodiffError::Contract("loss is not on this tape".into()));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(AutodiffError::Contract(format!(
                "backward needs a scalar loss, found shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let mut ctx = Backprop { nodes, grads };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => elementwise::add_backward(&mut ctx, *a, *b, g, 1.0),
            Op::Sub(a, b) => elementwise::add_backward(&mut ctx, *a, *b, g, -1.0),
            Op::Mul(a, b) => elementwise::mul_backward(&mut ctx, *a, *b, g),
            Op::AddConst(x) => ctx.accumulate(*x, |buf| add_into(buf, g)),
            Op::Scale(x, c) => ctx.accumulate(*x, |buf| {
                buf.iter_mut().zip(g).for_each(|(b, &gi)| *b += c * gi)
            }),
            Op::Square(x) => {
                let xv = &nodes[x.0].value;
                ctx.accumulate(*x, |buf| {
                    for ((b, &gi), &xi) in buf.iter_mut().zip(g).zip(xv) {
                        *b += 2.0 * xi * gi;
                    }
                })
            }
            Op::Sqrt(x) => {
                let y = &node.value;
                ctx.accumulate(*x, |buf| {
                    for ((b, &gi), &yi) in buf.iter_mut().zip(g).zip(y) {
                        *b += 0.5 * gi / yi;
                    }
                })
            }
            Op::Relu(x) => {
                let xv = &nodes[x.0].value;
                ctx.accumulate(*x, |buf| {
                    for ((b, &gi), &xi) in buf.iter_mut().zip(g).zip(xv) {
                        if xi > 0.0 {
                            *b += gi;
                        }
                    }
                })
            }
            Op::Sigmoid(x) => {
                let y = &node.value;
                ctx.accumulate(*x, |buf| {
                    for ((b, &gi), &yi) in buf.iter_mut().zip(g).zip(y) {
                        *b += gi * yi * (1.0 - yi);
                    }
                })
            }
            Op::Tanh(x) => {
                let y = &node.value;
                ctx.accumulate(*x, |buf| {
                    for ((b, &gi), &yi) in buf.iter_mut().zip(g).zip(y) {
                        *b += gi * (1.0 - yi * yi);
                    }
                })
            }
            Op::MatMul { a, b, trans_b } => linalg::matmul_backward(&mut ctx, *a, *b, *trans_b, g),
            Op::AddBias { x, bias } => {
                ctx.accumulate(*x, |buf| add_into(buf, g));
                let c = nodes[bias.0].value.len();
                ctx.accumulate(*bias, |buf| {
                    for row in g.chunks_exact(c) {
                        add_into(buf, row);
                    }
                });
            }
            Op::Conv1dCausal { x, kernel, bias } => {
                conv::conv1d_causal_backward(&mut ctx, *x, *kernel, *bias, g)
            }
            Op::Softmax(x) | Op::SoftmaxCausal(x) => {
                let n = *node.shape.last().unwrap_or(&1);
                let y = &node.value;
                ctx.accumulate(*x, |buf| attention::softmax_backward(y, g, n, buf));
            }
            Op::CausalAttention {
                q,
                k,
                v,
                heads,
                lse,
            } => attention::causal_attention_backward(&mut ctx, *q, *k, *v, *heads, lse, g),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => norm::layer_norm_backward(&mut ctx, *x, *gamma, *beta, xhat, rstd, g),
            Op::Reshape(x) => ctx.accumulate(*x, |buf| add_into(buf, g)),
            Op::SliceRows { x, start } => shape::slice_rows_backward(&mut ctx, *x, *start, g),
            Op::SliceCols { x, start } => {
                shape::slice_cols_backward(&mut ctx, *x, *start, &node.shape, g)
            }
            Op::ConcatRows(parts) => shape::concat_rows_backward(&mut ctx, parts, g),
            Op::ConcatCols(parts) => shape::concat_cols_backward(&mut ctx, parts, &node.shape, g),
            Op::LagMatrix { x, lags } => shape::lag_matrix_backward(&mut ctx, *x, *lags, g),
            Op::PairProducts(x) => shape::pair_products_backward(&mut ctx, *x, g),
            Op::Mean(x) => reduce::mean_backward(&mut ctx, *x, g[0]),
            Op::Sum(x) => reduce::sum_backward(&mut ctx, *x, g[0]),
            Op::Custom { inputs, vjp } => {
                let values: Vec<&[f64]> =
                    inputs.iter().map(|v| nodes[v.0].value.as_slice()).collect();
                let input_grads = vjp(&values, &node.value, g);
                for (v, ig) in inputs.iter().zip(input_grads) {
                    ctx.accumulate(*v, |buf| add_into(buf, &ig));
                }
            }
        }
    }
}

/// Mutable view used by backward rules to accumulate into input gradients.
pub(crate) struct Backprop<'a> {
    pub(crate) nodes: &'a [Node],
    grads: &'a mut [Option<Vec<f64>>],
}

impl Backprop<'_> {
    pub(crate) fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub(crate) fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub(crate) fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Runs `f` on the gradient buffer of `v` (zero-initialized on first
    /// touch). Skipped entirely when `v` does not require grad.
    pub(crate) fn accumulate(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        let buf = self.grads[v.0].get_or_insert_with(|| vec![0.0; node.value.len()]);
        f(buf);
    }
}

pub(crate) fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}
