use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Square,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Max,
    Mean,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Binary(BinaryOp, Var, Var),
    Unary(UnaryOp, Var),
    Affine {
        x: Var,
        scale: f64,
    },
    Clamp {
        x: Var,
        lo: f64,
        hi: f64,
    },
    AddRow {
        x: Var,
        row: Var,
    },
    Transpose(Var),
    Reshape(Var),
    AddN(Vec<Var>),
    Reduce {
        op: ReduceOp,
        x: Var,
        axis: Option<usize>,
        // For max: flat source index feeding each output element.
        argmax: Vec<usize>,
    },
    Softmax(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records primitive operations in evaluation order for reverse-mode
/// differentiation.
///
/// Every operand of a recorded node was itself recorded earlier, so a single
/// reverse sweep over the node list visits each node after all of its
/// consumers.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> Result<&Node> {
        self.nodes.get(v.0).ok_or(Error::UnknownVar(v.0))
    }

    /// A differentiable input. [`Tape::backward`] reports a gradient for it.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// An input treated as fixed data; no gradient is reported for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> Result<f64> {
        self.node(v)?.value.item()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.node(a)?.value.matmul(&self.node(b)?.value)?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (&self.node(a)?.value, &self.node(b)?.value);
        if x.shape() != y.shape() {
            return Err(Error::shape("elementwise", x.shape(), y.shape()));
        }
        let value = match op {
            BinaryOp::Add => x.zip_map(y, |p, q| p + q),
            BinaryOp::Sub => x.zip_map(y, |p, q| p - q),
            BinaryOp::Mul => x.zip_map(y, |p, q| p * q),
        };
        Ok(self.push(value, Op::Binary(op, a, b)))
    }

    pub fn unary(&mut self, op: UnaryOp, a: Var) -> Result<Var> {
        let x = &self.node(a)?.value;
        let value = match op {
            UnaryOp::Tanh => x.map(f64::tanh),
            UnaryOp::Sigmoid => x.map(sigmoid),
            UnaryOp::Exp => x.map(f64::exp),
            UnaryOp::Square => x.map(|v| v * v),
            UnaryOp::Log => {
                if let Some((index, &value)) = x
                    .data()
                    .iter()
                    .enumerate()
                    .find(|(_, &v)| v <= 0.0 || v.is_nan())
                {
                    return Err(Error::Domain {
                        op: "log",
                        index,
                        value,
                    });
                }
                x.map(f64::ln)
            }
        };
        Ok(self.push(value, Op::Unary(op, a)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Tanh, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Sigmoid, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Log, a)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Square, a)
    }

    /// `scale * x + offset`, entrywise.
    pub fn affine(&mut self, x: Var, scale: f64, offset: f64) -> Result<Var> {
        let value = self.node(x)?.value.map(|v| scale * v + offset);
        Ok(self.push(value, Op::Affine { x, scale }))
    }

    pub fn scale(&mut self, x: Var, scale: f64) -> Result<Var> {
        self.affine(x, scale, 0.0)
    }

    /// Clamps into `[lo, hi]`. The gradient is passed through inside the
    /// interval and zeroed outside it.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        let value = self.node(x)?.value.map(|v| v.clamp(lo, hi));
        Ok(self.push(value, Op::Clamp { x, lo, hi }))
    }

    /// Adds `row` (length `cols`) to every row of the `rows × cols` matrix `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let m = &self.node(x)?.value;
        let r = &self.node(row)?.value;
        let (rows, cols) = m.dims2("add_row")?;
        if r.len() != cols {
            return Err(Error::shape("add_row", m.shape(), r.shape()));
        }
        let mut value = m.clone();
        for i in 0..rows {
            for (o, b) in value.data_mut()[i * cols..(i + 1) * cols]
                .iter_mut()
                .zip(r.data())
            {
                *o += b;
            }
        }
        Ok(self.push(value, Op::AddRow { x, row }))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let value = self.node(x)?.value.transpose()?;
        Ok(self.push(value, Op::Transpose(x)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let src = &self.node(x)?.value;
        let value = src
            .reshaped(shape)
            .map_err(|_| Error::shape("reshape", src.shape(), shape))?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    /// Sum of several tensors of identical shape.
    pub fn add_n(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs.first().ok_or_else(|| Error::shape("add_n", &[], &[]))?;
        let mut value = self.node(*first)?.value.clone();
        for &x in &xs[1..] {
            let t = &self.node(x)?.value;
            if t.shape() != value.shape() {
                return Err(Error::shape("add_n", value.shape(), t.shape()));
            }
            value.add_assign(t);
        }
        Ok(self.push(value, Op::AddN(xs.to_vec())))
    }

    /// Reduces over `axis`, or over every element when `axis` is `None`.
    ///
    /// Max routes its gradient to the lowest index among tied maxima.
    pub fn reduce(&mut self, op: ReduceOp, x: Var, axis: Option<usize>) -> Result<Var> {
        let src = &self.node(x)?.value;
        let shape = src.shape().to_vec();
        // (outer, extent, inner) view of the reduced axis.
        let (outer, extent, inner, out_shape) = match axis {
            None => (1, src.len(), 1, Vec::new()),
            Some(a) => {
                if a >= shape.len() {
                    return Err(Error::Axis {
                        op: "reduce",
                        axis: a,
                        shape,
                    });
                }
                let outer = shape[..a].iter().product();
                let inner = shape[a + 1..].iter().product();
                let mut out_shape = shape.clone();
                out_shape.remove(a);
                (outer, shape[a], inner, out_shape)
            }
        };
        if extent == 0 {
            return Err(Error::Axis {
                op: "reduce",
                axis: axis.unwrap_or(0),
                shape,
            });
        }
        let data = src.data();
        let mut out = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::new();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * extent + k) * inner + i;
                match op {
                    ReduceOp::Sum | ReduceOp::Mean => {
                        let s: f64 = (0..extent).map(|k| data[idx(k)]).sum();
                        out.push(if op == ReduceOp::Mean {
                            s / extent as f64
                        } else {
                            s
                        });
                    }
                    ReduceOp::Max => {
                        let mut best = idx(0);
                        for k in 1..extent {
                            if data[idx(k)] > data[best] {
                                best = idx(k);
                            }
                        }
                        argmax.push(best);
                        out.push(data[best]);
                    }
                }
            }
        }
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push(
            value,
            Op::Reduce {
                op,
                x,
                axis,
                argmax,
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.reduce(ReduceOp::Sum, x, None)
    }

    /// Softmax over all elements of `x`, computed after subtracting the maximum.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let src = &self.node(x)?.value;
        let max = src.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps = src.map(|v| (v - max).exp());
        let total: f64 = exps.data().iter().sum();
        let value = exps.map(|e| e / total);
        Ok(self.push(value, Op::Softmax(x)))
    }

    /// Reverse sweep from a one-element `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_value = &self.node(root)?.value;
        if !root_value.is_scalar() {
            return Err(Error::NotScalar(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::filled(root_value.shape(), 1.0));

        for k in (0..=root.0).rev() {
            let Some(g) = grads[k].take() else { continue };
            let node = &self.nodes[k];
            match &node.op {
                Op::Leaf | Op::Constant => {
                    grads[k] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let ga = g.matmul(&bv.transpose()?)?;
                    let gb = av.transpose()?.matmul(&g)?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Binary(op, a, b) => {
                    let (ga, gb) = match op {
                        BinaryOp::Add => (g.clone(), g),
                        BinaryOp::Sub => (g.clone(), g.map(|v| -v)),
                        BinaryOp::Mul => {
                            let av = &self.nodes[a.0].value;
                            let bv = &self.nodes[b.0].value;
                            (g.zip_map(bv, |p, q| p * q), g.zip_map(av, |p, q| p * q))
                        }
                    };
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Unary(op, a) => {
                    let x = &self.nodes[a.0].value;
                    let y = &node.value;
                    let local = match op {
                        UnaryOp::Tanh => y.map(|t| 1.0 - t * t),
                        UnaryOp::Sigmoid => y.map(|s| s * (1.0 - s)),
                        UnaryOp::Exp => y.clone(),
                        UnaryOp::Log => x.map(|v| 1.0 / v),
                        UnaryOp::Square => x.map(|v| 2.0 * v),
                    };
                    accumulate(&mut grads, *a, g.zip_map(&local, |p, q| p * q));
                }
                Op::Affine { x, scale } => {
                    let s = *scale;
                    accumulate(&mut grads, *x, g.map(|v| s * v));
                }
                Op::Clamp { x, lo, hi } => {
                    let xv = &self.nodes[x.0].value;
                    let (lo, hi) = (*lo, *hi);
                    let gx = g.zip_map(xv, |p, v| if v >= lo && v <= hi { p } else { 0.0 });
                    accumulate(&mut grads, *x, gx);
                }
                Op::AddRow { x, row } => {
                    let (rows, cols) = g.dims2("add_row")?;
                    let mut gr = vec![0.0; cols];
                    for i in 0..rows {
                        for (acc, v) in gr.iter_mut().zip(g.row(i)) {
                            *acc += v;
                        }
                    }
                    let row_shape = self.nodes[row.0].value.shape().to_vec();
                    accumulate(&mut grads, *row, Tensor::new(row_shape, gr)?);
                    accumulate(&mut grads, *x, g);
                }
                Op::Transpose(x) => {
                    accumulate(&mut grads, *x, g.transpose()?);
                }
                Op::Reshape(x) => {
                    let shape = self.nodes[x.0].value.shape().to_vec();
                    accumulate(&mut grads, *x, g.reshaped(&shape)?);
                }
                Op::AddN(xs) => {
                    for x in xs {
                        accumulate(&mut grads, *x, g.clone());
                    }
                }
                Op::Reduce {
                    op,
                    x,
                    axis,
                    argmax,
                } => {
                    let src = &self.nodes[x.0].value;
                    let shape = src.shape();
                    let (extent, inner) = match axis {
                        None => (src.len(), 1),
                        Some(a) => (shape[*a], shape[a + 1..].iter().product()),
                    };
                    let mut gx = Tensor::zeros(shape);
                    let out = g.data();
                    let dst = gx.data_mut();
                    match op {
                        ReduceOp::Max => {
                            for (j, &src_idx) in argmax.iter().enumerate() {
                                dst[src_idx] += out[j];
                            }
                        }
                        ReduceOp::Sum | ReduceOp::Mean => {
                            let factor = if *op == ReduceOp::Mean {
                                1.0 / extent as f64
                            } else {
                                1.0
                            };
                            for (flat, d) in dst.iter_mut().enumerate() {
                                let o = flat / (extent * inner);
                                let i = flat % inner;
                                *d = out[o * inner + i] * factor;
                            }
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Softmax(x) => {
                    let s = &node.value;
                    let dot: f64 = g.data().iter().zip(s.data()).map(|(p, q)| p * q).sum();
                    let gx = g.zip_map(s, |p, q| q * (p - dot));
                    accumulate(&mut grads, *x, gx);
                }
            }
        }

        let mut by_leaf = Vec::new();
        for (k, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) {
                let g = grads
                    .get_mut(k)
                    .and_then(Option::take)
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                by_leaf.push((Var(k), g));
            }
        }
        Ok(Gradients { by_leaf })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Gradients of a root with respect to every leaf on the tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    by_leaf: Vec<(Var, Tensor)>,
}

impl Gradients {
    /// Gradient for `leaf`; `None` if `leaf` is not a leaf on the tape.
    pub fn get(&self, leaf: Var) -> Option<&Tensor> {
        self.by_leaf
            .binary_search_by_key(&leaf, |(v, _)| *v)
            .ok()
            .map(|i| &self.by_leaf[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor)> {
        self.by_leaf.iter().map(|(v, t)| (*v, t))
    }

    pub fn len(&self) -> usize {
        self.by_leaf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_leaf.is_empty()
    }
}
