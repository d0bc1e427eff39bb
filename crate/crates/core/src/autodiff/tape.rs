//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends one node holding its forward value and the
//! indices of its inputs. [`Tape::backward`] walks the nodes in reverse
//! order exactly once, applying each node's vector-Jacobian product.

use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamSet, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    Embed {
        param: ParamId,
        ids: Vec<usize>,
        pad: Option<usize>,
        vocab: usize,
    },
    MatMul(usize, usize),
    MatVec(usize, usize),
    MatTVec(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddColBias(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Exp(usize),
    Log(usize),
    Sum(usize),
    Dot(usize, usize),
    SumSquares(usize, Option<Vec<bool>>),
    Softmax(usize),
    Normalize(usize),
    Conv1d {
        seq: usize,
        filters: usize,
        bias: usize,
        width: usize,
    },
    MaxPool {
        x: usize,
        argmax: Vec<usize>,
    },
    Concat(Vec<usize>),
    Reshape(usize),
    Column(usize, usize),
    IndexSum {
        x: usize,
        groups: Vec<Vec<usize>>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::Embed { .. } => "embed",
            Op::MatMul(..) => "matmul",
            Op::MatVec(..) => "matvec",
            Op::MatTVec(..) => "mat_t_vec",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddColBias(..) => "add_col_bias",
            Op::Scale(..) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Sum(_) => "sum",
            Op::Dot(..) => "dot",
            Op::SumSquares(..) => "sum_squares",
            Op::Softmax(_) => "softmax",
            Op::Normalize(_) => "normalize",
            Op::Conv1d { .. } => "conv1d",
            Op::MaxPool { .. } => "maxpool",
            Op::Concat(_) => "concat",
            Op::Reshape(_) => "reshape",
            Op::Column(..) => "column",
            Op::IndexSum { .. } => "index_sum",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Which primitive, if any, should have its backward rule corrupted.
///
/// Used only by negative-control gradient checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FaultInjection {
    #[default]
    None,
    /// Doubles the gradient flowing into convolution filters.
    ConvFilters,
    /// Doubles the gradient of matrix products.
    MatMul,
}

/// A single-writer record of executed operations.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: FaultInjection,
}

/// Result of a backward pass: gradients for every node plus the
/// contributions destined for parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Vec<f64>>,
    params: Vec<(ParamId, ParamGrad)>,
}

#[derive(Debug, Clone)]
enum ParamGrad {
    Dense(Vec<f64>),
    Columns {
        ids: Vec<usize>,
        pad: Option<usize>,
        vocab: usize,
        grad: Vec<f64>,
        rows: usize,
    },
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zeros if `v` did not
    /// influence the loss.
    pub fn wrt(&self, v: Var) -> &[f64] {
        &self.grads[v.0]
    }

    /// Adds parameter contributions into each tensor's `grad` field.
    pub fn accumulate_into(&self, params: &mut ParamSet) {
        for (id, g) in &self.params {
            let t = params.get_mut(*id);
            match g {
                ParamGrad::Dense(g) => t.add_grad(g),
                ParamGrad::Columns {
                    ids,
                    pad,
                    vocab,
                    grad,
                    rows,
                } => {
                    let n = t.len();
                    let tg = t.grad.get_or_insert_with(|| vec![0.0; n]);
                    let len = ids.len();
                    for (j, &id) in ids.iter().enumerate() {
                        if Some(id) == *pad {
                            continue;
                        }
                        for r in 0..*rows {
                            tg[r * vocab + id] += grad[r * len + j];
                        }
                    }
                }
            }
        }
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
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
        Self::default()
    }

    pub fn with_fault(fault: FaultInjection) -> Self {
        Tape {
            nodes: Vec::new(),
            fault,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(&n.shape, n.value.clone()).expect("node shapes are valid")
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, value: Vec<f64>) -> Result<Var> {
        debug_assert_eq!(numel(&shape), value.len());
        if let Some(bad) = value.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                op: format!("{} (element {bad})", op.name()),
            });
        }
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::Param(_) | Op::Embed { .. } => true,
            other => self.inputs(other).iter().any(|&i| self.nodes[i].requires_grad),
        };
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn inputs(&self, op: &Op) -> Vec<usize> {
        match op {
            Op::Leaf | Op::Param(_) | Op::Embed { .. } => vec![],
            Op::MatMul(a, b)
            | Op::MatVec(a, b)
            | Op::MatTVec(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddColBias(a, b)
            | Op::Dot(a, b) => vec![*a, *b],
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Sum(a)
            | Op::SumSquares(a, _)
            | Op::Softmax(a)
            | Op::Normalize(a)
            | Op::Reshape(a)
            | Op::Column(a, _) => vec![*a],
            Op::MaxPool { x, .. } | Op::IndexSum { x, .. } => vec![*x],
            Op::Conv1d { seq, filters, bias, .. } => vec![*seq, *filters, *bias],
            Op::Concat(v) => v.clone(),
        }
    }

    // ---- leaves -------------------------------------------------------

    /// Records a tensor. It participates in differentiation iff
    /// `t.requires_grad`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let v = self
            .push(Op::Leaf, t.shape().to_vec(), t.data().to_vec())
            .expect("leaf values are checked by caller");
        self.nodes[v.0].requires_grad = t.requires_grad;
        v
    }

    /// Records a constant that never receives gradient.
    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        if numel(shape) != data.len() {
            return Err(Error::dim("constant", shape, &[data.len()]));
        }
        self.push(Op::Leaf, shape.to_vec(), data)
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Var {
        self.constant(shape, vec![0.0; numel(shape)]).unwrap()
    }

    /// Copies a parameter onto the tape; gradients flow back to it via
    /// [`Gradients::accumulate_into`].
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        let t = params.get(id);
        self.push(Op::Param(id), t.shape().to_vec(), t.data().to_vec())
            .unwrap_or_else(|e| panic!("parameter {}: {e}", params.name(id)))
    }

    /// Gathers columns `ids` of the `[D x V]` table `id` into a `[D x L]`
    /// matrix. Column `pad`, if given, never receives gradient.
    pub fn embed(&mut self, params: &ParamSet, id: ParamId, ids: &[usize], pad: Option<usize>) -> Result<Var> {
        let table = params.get(id);
        let shape = table.shape();
        if shape.len() != 2 {
            return Err(Error::dim("embed", shape, &[0, 0]));
        }
        let (rows, vocab) = (shape[0], shape[1]);
        if ids.is_empty() {
            return Err(Error::degenerate("embed", "empty id sequence"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(Error::Vocabulary { id: bad, size: vocab });
        }
        let len = ids.len();
        let w = table.data();
        let mut out = vec![0.0; rows * len];
        for r in 0..rows {
            for (j, &tok) in ids.iter().enumerate() {
                out[r * len + j] = w[r * vocab + tok];
            }
        }
        self.push(
            Op::Embed {
                param: id,
                ids: ids.to_vec(),
                pad,
                vocab,
            },
            vec![rows, len],
            out,
        )
    }

    /// A copy of `v` that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let n = &self.nodes[v.0];
        let (shape, value) = (n.shape.clone(), n.value.clone());
        self.push(Op::Leaf, shape, value).unwrap()
    }

    // ---- linear algebra ----------------------------------------------

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.nodes[v.0].shape.as_slice() {
            &[r, c] => Ok((r, c)),
            other => Err(Error::dim(op, other, &[0, 0])),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(Error::dim("matmul", self.shape(a), self.shape(b)));
        }
        let out = matmul_raw(&self.nodes[a.0].value, &self.nodes[b.0].value, m, k, n);
        self.push(Op::MatMul(a.0, b.0), vec![m, n], out)
    }

    /// `[m x k] * [k] -> [m]`
    pub fn matvec(&mut self, a: Var, v: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matvec")?;
        if self.shape(v) != [k] {
            return Err(Error::dim("matvec", self.shape(a), self.shape(v)));
        }
        let av = &self.nodes[a.0].value;
        let vv = &self.nodes[v.0].value;
        let out = (0..m)
            .map(|i| av[i * k..(i + 1) * k].iter().zip(vv).map(|(x, y)| x * y).sum())
            .collect();
        self.push(Op::MatVec(a.0, v.0), vec![m], out)
    }

    /// `[m x k]^T * [m] -> [k]`
    pub fn mat_t_vec(&mut self, a: Var, v: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "mat_t_vec")?;
        if self.shape(v) != [m] {
            return Err(Error::dim("mat_t_vec", self.shape(a), self.shape(v)));
        }
        let av = &self.nodes[a.0].value;
        let vv = &self.nodes[v.0].value;
        let mut out = vec![0.0; k];
        for i in 0..m {
            let s = vv[i];
            for (o, x) in out.iter_mut().zip(&av[i * k..(i + 1) * k]) {
                *o += s * x;
            }
        }
        self.push(Op::MatTVec(a.0, v.0), vec![k], out)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "transpose")?;
        let av = &self.nodes[a.0].value;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = av[i * n + j];
            }
        }
        self.push(Op::Transpose(a.0), vec![n, m], out)
    }

    // ---- elementwise --------------------------------------------------

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let out = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        self.push(op, shape, out)
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let out = self.nodes[a.0].value.iter().map(|&x| f(x)).collect();
        let shape = self.nodes[a.0].shape.clone();
        self.push(op, shape, out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        self.zip_with(a, b, Op::Add(a.0, b.0), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        self.zip_with(a, b, Op::Sub(a.0, b.0), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        self.zip_with(a, b, Op::Mul(a.0, b.0), |x, y| x * y)
    }

    /// Adds `b: [m]` to every column of `x: [m x n]`.
    pub fn add_col_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "add_col_bias")?;
        if self.shape(b) != [m] {
            return Err(Error::dim("add_col_bias", self.shape(x), self.shape(b)));
        }
        let mut out = self.nodes[x.0].value.clone();
        let bv = &self.nodes[b.0].value;
        for i in 0..m {
            for o in &mut out[i * n..(i + 1) * n] {
                *o += bv[i];
            }
        }
        self.push(Op::AddColBias(x.0, b.0), vec![m, n], out)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map(a, Op::Scale(a.0, c), |x| c * x)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map(a, Op::AddScalar(a.0), |x| x + c)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Sigmoid(a.0), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Tanh(a.0), f64::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Relu(a.0), |x| x.max(0.0))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Exp(a.0), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Log(a.0), f64::ln)
    }

    // ---- reductions ---------------------------------------------------

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.nodes[a.0].value.iter().sum();
        self.push(Op::Sum(a.0), vec![1], vec![s])
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).len() != self.value(b).len() {
            return Err(Error::dim("dot", self.shape(a), self.shape(b)));
        }
        let s = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).sum();
        self.push(Op::Dot(a.0, b.0), vec![1], vec![s])
    }

    /// Sum of squared elements, optionally restricted to `keep[i] == true`.
    pub fn sum_squares(&mut self, a: Var, keep: Option<Vec<bool>>) -> Result<Var> {
        let v = self.value(a);
        if let Some(k) = &keep {
            if k.len() != v.len() {
                return Err(Error::dim("sum_squares", self.shape(a), &[k.len()]));
            }
        }
        let s = v
            .iter()
            .enumerate()
            .filter(|(i, _)| keep.as_ref().is_none_or(|k| k[*i]))
            .map(|(_, x)| x * x)
            .sum();
        self.push(Op::SumSquares(a.0, keep), vec![1], vec![s])
    }

    /// Softmax over a vector, shifted by the maximum for stability.
    /// Masked-out positions (`mask[i] == false`) are exactly zero.
    pub fn softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 1 {
            return Err(Error::dim("softmax", &shape, &[0]));
        }
        let n = shape[0];
        if let Some(m) = mask {
            if m.len() != n {
                return Err(Error::dim("softmax", &shape, &[m.len()]));
            }
        }
        let on = |i: usize| mask.is_none_or(|m| m[i]);
        let xv = self.value(x);
        let max = (0..n)
            .filter(|&i| on(i))
            .map(|i| xv[i])
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::degenerate("softmax", "all positions masked"));
        }
        let mut out: Vec<f64> = (0..n).map(|i| if on(i) { (xv[i] - max).exp() } else { 0.0 }).collect();
        let z: f64 = out.iter().sum();
        out.iter_mut().for_each(|o| *o /= z);
        self.push(Op::Softmax(x.0), shape, out)
    }

    /// `x / sum(x)` for a nonnegative vector with positive total.
    pub fn normalize(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let s: f64 = xv.iter().sum();
        if s <= 0.0 || xv.iter().any(|&v| v < 0.0) {
            return Err(Error::degenerate(
                "normalize",
                "products are zero or negative; nothing to normalize",
            ));
        }
        let out = xv.iter().map(|v| v / s).collect();
        let shape = self.shape(x).to_vec();
        self.push(Op::Normalize(x.0), shape, out)
    }

    // ---- convolution and pooling --------------------------------------

    /// Narrow convolution of `seq: [C x L]` with `filters: [C x m x F]`
    /// plus `bias: [F]`, giving `[F x (L - m + 1)]`.
    pub fn conv1d_valid(&mut self, seq: Var, filters: Var, bias: Var) -> Result<Var> {
        let (c, l) = self.dims2(seq, "conv1d")?;
        let fshape = self.shape(filters).to_vec();
        let (fc, m, f) = match fshape.as_slice() {
            &[a, b, c] => (a, b, c),
            _ => return Err(Error::dim("conv1d", self.shape(seq), &fshape)),
        };
        if fc != c {
            return Err(Error::dim("conv1d", self.shape(seq), &fshape));
        }
        if self.shape(bias) != [f] {
            return Err(Error::dim("conv1d", &fshape, self.shape(bias)));
        }
        if l < m {
            return Err(Error::SequenceTooShort {
                op: "conv1d",
                len: l,
                width: m,
            });
        }
        let t_out = l - m + 1;
        let sv = &self.nodes[seq.0].value;
        let fv = &self.nodes[filters.0].value;
        let bv = &self.nodes[bias.0].value;
        let mut out = vec![0.0; f * t_out];
        for fi in 0..f {
            out[fi * t_out..(fi + 1) * t_out].iter_mut().for_each(|o| *o = bv[fi]);
        }
        for ci in 0..c {
            for k in 0..m {
                let frow = &fv[(ci * m + k) * f..(ci * m + k + 1) * f];
                for t in 0..t_out {
                    let s = sv[ci * l + t + k];
                    if s == 0.0 {
                        continue;
                    }
                    for (fi, w) in frow.iter().enumerate() {
                        out[fi * t_out + t] += s * w;
                    }
                }
            }
        }
        self.push(
            Op::Conv1d {
                seq: seq.0,
                filters: filters.0,
                bias: bias.0,
                width: m,
            },
            vec![f, t_out],
            out,
        )
    }

    /// Row-wise maximum of `[F x L]`; ties resolve to the lowest index.
    pub fn maxpool_over_time(&mut self, x: Var) -> Result<Var> {
        let (f, l) = self.dims2(x, "maxpool")?;
        if l == 0 {
            return Err(Error::degenerate("maxpool", "empty time axis"));
        }
        let xv = &self.nodes[x.0].value;
        let mut out = Vec::with_capacity(f);
        let mut argmax = Vec::with_capacity(f);
        for r in 0..f {
            let row = &xv[r * l..(r + 1) * l];
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            argmax.push(best);
            out.push(row[best]);
        }
        self.push(Op::MaxPool { x: x.0, argmax }, vec![f], out)
    }

    // ---- shape ----------------------------------------------------------

    /// Flat concatenation of any number of tensors into a vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::degenerate("concat", "no inputs"));
        }
        let out: Vec<f64> = parts.iter().flat_map(|p| self.value(*p).iter().copied()).collect();
        let n = out.len();
        self.push(Op::Concat(parts.iter().map(|p| p.0).collect()), vec![n], out)
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn vstack(&mut self, parts: &[Var]) -> Result<Var> {
        let mut rows = 0;
        let mut cols = None;
        for p in parts {
            let (r, c) = self.dims2(*p, "vstack")?;
            if cols.is_some_and(|cc| cc != c) {
                return Err(Error::dim("vstack", self.shape(parts[0]), self.shape(*p)));
            }
            cols = Some(c);
            rows += r;
        }
        let v = self.concat(parts)?;
        self.nodes[v.0].shape = vec![rows, cols.unwrap_or(0)];
        Ok(v)
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let width = rows.first().map(|r| self.value(*r).len()).unwrap_or(0);
        if let Some(bad) = rows.iter().find(|r| self.shape(**r) != [width]) {
            return Err(Error::dim("stack_rows", &[width], self.shape(*bad)));
        }
        let v = self.concat(rows)?;
        self.nodes[v.0].shape = vec![rows.len(), width];
        Ok(v)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(a).len() || shape.contains(&0) {
            return Err(Error::dim("reshape", self.shape(a), shape));
        }
        let value = self.value(a).to_vec();
        self.push(Op::Reshape(a.0), shape.to_vec(), value)
    }

    /// Column `j` of a matrix as a vector.
    pub fn column(&mut self, a: Var, j: usize) -> Result<Var> {
        let (m, n) = self.dims2(a, "column")?;
        if j >= n {
            return Err(Error::dim("column", self.shape(a), &[j]));
        }
        let av = &self.nodes[a.0].value;
        let out = (0..m).map(|i| av[i * n + j]).collect();
        self.push(Op::Column(a.0, j), vec![m], out)
    }

    /// `out[g] = sum(x[i] for i in groups[g])` over the flattened input.
    pub fn index_sum(&mut self, x: Var, groups: Vec<Vec<usize>>) -> Result<Var> {
        if groups.is_empty() {
            return Err(Error::degenerate("index_sum", "no groups"));
        }
        let xv = self.value(x);
        if let Some(&bad) = groups.iter().flatten().find(|&&i| i >= xv.len()) {
            return Err(Error::dim("index_sum", self.shape(x), &[bad]));
        }
        let out = groups.iter().map(|g| g.iter().map(|&i| xv[i]).sum()).collect();
        let n = groups.len();
        self.push(Op::IndexSum { x: x.0, groups }, vec![n], out)
    }

    /// Element `i` of the flattened input as a 1-element vector.
    pub fn select(&mut self, x: Var, i: usize) -> Result<Var> {
        self.index_sum(x, vec![vec![i]])
    }

    // ---- backward ---------------------------------------------------------

    /// Propagates d(loss)/d(node) for every node reachable from `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != [1] {
            return Err(Error::dim("backward", self.shape(loss), &[1]));
        }
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); self.nodes.len()];
        grads[loss.0] = vec![1.0];
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if grads[i].is_empty() || !node.requires_grad {
                continue;
            }
            let g = std::mem::take(&mut grads[i]);
            self.apply_rule(i, &g, &mut grads);
            grads[i] = g;
        }
        let mut params = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if grads[i].is_empty() {
                continue;
            }
            match &node.op {
                Op::Param(id) => params.push((*id, ParamGrad::Dense(grads[i].clone()))),
                Op::Embed { param, ids, pad, vocab } => params.push((
                    *param,
                    ParamGrad::Columns {
                        ids: ids.clone(),
                        pad: *pad,
                        vocab: *vocab,
                        grad: grads[i].clone(),
                        rows: node.shape[0],
                    },
                )),
                _ => {}
            }
        }
        for (g, n) in grads.iter_mut().zip(&self.nodes) {
            if g.is_empty() {
                *g = vec![0.0; n.value.len()];
            }
        }
        Ok(Gradients { grads, params })
    }

    fn apply_rule(&self, i: usize, g: &[f64], grads: &mut [Vec<f64>]) {
        macro_rules! slot {
            ($j:expr) => {
                grad_slot(&self.nodes, grads, $j)
            };
        }
        let node = &self.nodes[i];
        let nodes = &self.nodes;
        let val = |j: usize| -> &[f64] { &nodes[j].value };
        match &node.op {
            Op::Leaf | Op::Param(_) | Op::Embed { .. } => {}
            Op::MatMul(a, b) => {
                let (m, k) = (nodes[*a].shape[0], nodes[*a].shape[1]);
                let n = nodes[*b].shape[1];
                let fault = if self.fault == FaultInjection::MatMul { 2.0 } else { 1.0 };
                if let Some(ga) = slot!(*a) {
                    // ga += g * b^T
                    let bv = val(*b);
                    for r in 0..m {
                        for c in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[r * n + j] * bv[c * n + j];
                            }
                            ga[r * k + c] += fault * s;
                        }
                    }
                }
                if let Some(gb) = slot!(*b) {
                    // gb += a^T * g
                    let av = val(*a);
                    for r in 0..m {
                        for c in 0..k {
                            let s = av[r * k + c];
                            if s == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                gb[c * n + j] += fault * s * g[r * n + j];
                            }
                        }
                    }
                }
            }
            Op::MatVec(a, v) => {
                let (m, k) = (nodes[*a].shape[0], nodes[*a].shape[1]);
                if let Some(ga) = slot!(*a) {
                    let vv = val(*v);
                    for r in 0..m {
                        for c in 0..k {
                            ga[r * k + c] += g[r] * vv[c];
                        }
                    }
                }
                if let Some(gv) = slot!(*v) {
                    let av = val(*a);
                    for r in 0..m {
                        for c in 0..k {
                            gv[c] += av[r * k + c] * g[r];
                        }
                    }
                }
            }
            Op::MatTVec(a, v) => {
                let (m, k) = (nodes[*a].shape[0], nodes[*a].shape[1]);
                if let Some(ga) = slot!(*a) {
                    let vv = val(*v);
                    for r in 0..m {
                        for c in 0..k {
                            ga[r * k + c] += vv[r] * g[c];
                        }
                    }
                }
                if let Some(gv) = slot!(*v) {
                    let av = val(*a);
                    for r in 0..m {
                        gv[r] += av[r * k..(r + 1) * k].iter().zip(g).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
            }
            Op::Transpose(a) => {
                let (m, n) = (nodes[*a].shape[0], nodes[*a].shape[1]);
                if let Some(ga) = slot!(*a) {
                    for r in 0..m {
                        for c in 0..n {
                            ga[r * n + c] += g[c * m + r];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = slot!(*a) {
                    axpy(ga, g, 1.0);
                }
                if let Some(gb) = slot!(*b) {
                    axpy(gb, g, 1.0);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = slot!(*a) {
                    axpy(ga, g, 1.0);
                }
                if let Some(gb) = slot!(*b) {
                    axpy(gb, g, -1.0);
                }
            }
            Op::Mul(a, b) => {
                if let Some(ga) = slot!(*a) {
                    for ((o, gi), y) in ga.iter_mut().zip(g).zip(val(*b)) {
                        *o += gi * y;
                    }
                }
                if let Some(gb) = slot!(*b) {
                    for ((o, gi), x) in gb.iter_mut().zip(g).zip(val(*a)) {
                        *o += gi * x;
                    }
                }
            }
            Op::AddColBias(x, b) => {
                let (m, n) = (node.shape[0], node.shape[1]);
                if let Some(gx) = slot!(*x) {
                    axpy(gx, g, 1.0);
                }
                if let Some(gb) = slot!(*b) {
                    for r in 0..m {
                        gb[r] += g[r * n..(r + 1) * n].iter().sum::<f64>();
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = slot!(*a) {
                    axpy(ga, g, *c);
                }
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                if let Some(ga) = slot!(*a) {
                    axpy(ga, g, 1.0);
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = slot!(*a) {
                    for ((o, gi), y) in ga.iter_mut().zip(g).zip(&node.value) {
                        *o += gi * y * (1.0 - y);
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(ga) = slot!(*a) {
                    for ((o, gi), y) in ga.iter_mut().zip(g).zip(&node.value) {
                        *o += gi * (1.0 - y * y);
                    }
                }
            }
            Op::Relu(a) => {
                if let Some(ga) = slot!(*a) {
                    for ((o, gi), x) in ga.iter_mut().zip(g).zip(val(*a)) {
                        if *x > 0.0 {
                            *o += gi;
                        }
                    }
                }
            }
            Op::Exp(a) => {
                if let Some(ga) = slot!(*a) {
                    for ((o, gi), y) in ga.iter_mut().zip(g).zip(&node.value) {
                        *o += gi * y;
                    }
                }
            }
            Op::Log(a) => {
                if let Some(ga) = slot!(*a) {
                    for ((o, gi), x) in ga.iter_mut().zip(g).zip(val(*a)) {
                        *o += gi / x;
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = slot!(*a) {
                    ga.iter_mut().for_each(|o| *o += g[0]);
                }
            }
            Op::Dot(a, b) => {
                if let Some(ga) = slot!(*a) {
                    axpy(ga, val(*b), g[0]);
                }
                if let Some(gb) = slot!(*b) {
                    axpy(gb, val(*a), g[0]);
                }
            }
            Op::SumSquares(a, keep) => {
                if let Some(ga) = slot!(*a) {
                    for (idx, (o, x)) in ga.iter_mut().zip(val(*a)).enumerate() {
                        if keep.as_ref().is_none_or(|k| k[idx]) {
                            *o += 2.0 * x * g[0];
                        }
                    }
                }
            }
            Op::Softmax(a) => {
                if let Some(ga) = slot!(*a) {
                    let y = &node.value;
                    let dot: f64 = g.iter().zip(y).map(|(gi, yi)| gi * yi).sum();
                    for ((o, gi), yi) in ga.iter_mut().zip(g).zip(y) {
                        *o += yi * (gi - dot);
                    }
                }
            }
            Op::Normalize(a) => {
                if let Some(ga) = slot!(*a) {
                    let y = &node.value;
                    let s: f64 = val(*a).iter().sum();
                    let dot: f64 = g.iter().zip(y).map(|(gi, yi)| gi * yi).sum();
                    for (o, gi) in ga.iter_mut().zip(g) {
                        *o += (gi - dot) / s;
                    }
                }
            }
            Op::Conv1d {
                seq,
                filters,
                bias,
                width,
            } => {
                let (c, l) = (nodes[*seq].shape[0], nodes[*seq].shape[1]);
                let m = *width;
                let f = nodes[*bias].shape[0];
                let t_out = l - m + 1;
                let fault = if self.fault == FaultInjection::ConvFilters {
                    2.0
                } else {
                    1.0
                };
                if let Some(gs) = slot!(*seq) {
                    let fv = val(*filters);
                    for ci in 0..c {
                        for k in 0..m {
                            let frow = &fv[(ci * m + k) * f..(ci * m + k + 1) * f];
                            for t in 0..t_out {
                                let mut s = 0.0;
                                for (fi, w) in frow.iter().enumerate() {
                                    s += g[fi * t_out + t] * w;
                                }
                                gs[ci * l + t + k] += s;
                            }
                        }
                    }
                }
                if let Some(gf) = slot!(*filters) {
                    let sv = val(*seq);
                    for ci in 0..c {
                        for k in 0..m {
                            for fi in 0..f {
                                let mut s = 0.0;
                                for t in 0..t_out {
                                    s += g[fi * t_out + t] * sv[ci * l + t + k];
                                }
                                gf[(ci * m + k) * f + fi] += fault * s;
                            }
                        }
                    }
                }
                if let Some(gb) = slot!(*bias) {
                    for fi in 0..f {
                        gb[fi] += g[fi * t_out..(fi + 1) * t_out].iter().sum::<f64>();
                    }
                }
            }
            Op::MaxPool { x, argmax } => {
                let l = nodes[*x].shape[1];
                if let Some(gx) = slot!(*x) {
                    for (r, &j) in argmax.iter().enumerate() {
                        gx[r * l + j] += g[r];
                    }
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = nodes[p].value.len();
                    if let Some(gp) = slot!(p) {
                        axpy(gp, &g[off..off + n], 1.0);
                    }
                    off += n;
                }
            }
            Op::Column(a, j) => {
                let n = nodes[*a].shape[1];
                if let Some(ga) = slot!(*a) {
                    for (r, gi) in g.iter().enumerate() {
                        ga[r * n + j] += gi;
                    }
                }
            }
            Op::IndexSum { x, groups } => {
                if let Some(gx) = slot!(*x) {
                    for (grp, gi) in groups.iter().zip(g) {
                        for &idx in grp {
                            gx[idx] += gi;
                        }
                    }
                }
            }
        }
    }
}

/// Gradient buffer of input `j`, allocated on first use; `None` when the
/// input does not require gradient.
fn grad_slot<'g>(nodes: &[Node], grads: &'g mut [Vec<f64>], j: usize) -> Option<&'g mut Vec<f64>> {
    if !nodes[j].requires_grad {
        return None;
    }
    let buf = &mut grads[j];
    if buf.is_empty() {
        *buf = vec![0.0; nodes[j].value.len()];
    }
    Some(buf)
}

fn axpy(y: &mut [f64], x: &[f64], a: f64) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let s = a[i * k + p];
            if s == 0.0 {
                continue;
            }
            for (o, bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += s * bv;
            }
        }
    }
    out
}
