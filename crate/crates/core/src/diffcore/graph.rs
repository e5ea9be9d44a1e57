use std::collections::BTreeMap;

use super::gemm::gemm;
use super::tensor::check_shape;
use super::{ParameterSet, Tensor, TensorError};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    LRelu(Var, f64),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Index { x: Var, i: usize },
    Stack(Vec<Var>),
    SelectRows { x: Var, rows: Vec<usize> },
    Reshape(Var),
    Softmax(Var),
    MeanLast(Var),
    Sum(Var),
    Embedding { table: Var, index: usize },
    Conv1d { input: Var, kernels: Var, bias: Var, stride: usize },
    Mse(Var, Var),
    CrossEntropy { logits: Var, targets: Vec<usize> },
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Whether frozen parameters take part in gradient computation when bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BindMode {
    /// Every parameter is a gradient leaf.
    All,
    /// Frozen parameters are bound as constants; their subgraphs are skipped on backward.
    SkipFrozen,
}

/// Parameters bound to leaves of one graph.
#[derive(Debug, Clone, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, path: &str) -> Result<Var, TensorError> {
        self.vars
            .get(path)
            .copied()
            .ok_or_else(|| TensorError::MissingParameter(path.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

/// Reverse-mode tape. One graph per training step; dropped after backward.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, dim: usize, expected: usize, found: usize) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        dim,
        expected,
        found,
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

/// Splits a shape into (rows, last extent).
fn rows_cols(shape: &[usize]) -> (usize, usize) {
    let cols = *shape.last().unwrap_or(&1);
    let rows = shape.iter().product::<usize>() / cols.max(1);
    (rows, cols)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
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

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("graph nodes are well-formed")
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool, name: &'static str) -> Result<Var, TensorError> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        if value.iter().any(|x| !x.is_finite()) {
            return Err(TensorError::NonFinite { op: name });
        }
        self.nodes.push(Node {
            shape,
            value,
            grad: None,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a leaf holding `values`.
    pub fn leaf(&mut self, shape: Vec<usize>, values: Vec<f64>, requires_grad: bool) -> Result<Var, TensorError> {
        check_shape(&shape, values.len())?;
        self.push(shape, values, Op::Leaf, requires_grad, "leaf")
    }

    pub fn constant(&mut self, tensor: &Tensor) -> Result<Var, TensorError> {
        self.leaf(tensor.shape().to_vec(), tensor.values().to_vec(), false)
    }

    pub fn input(&mut self, tensor: &Tensor) -> Result<Var, TensorError> {
        self.leaf(tensor.shape().to_vec(), tensor.values().to_vec(), tensor.requires_grad())
    }

    /// Snapshots every parameter into a leaf.
    pub fn bind(&mut self, params: &ParameterSet, mode: BindMode) -> Result<Bound, TensorError> {
        let mut vars = BTreeMap::new();
        for (path, t) in params.iter() {
            let grad = match mode {
                BindMode::All => true,
                BindMode::SkipFrozen => !params.is_frozen(path),
            };
            let v = self.leaf(t.shape().to_vec(), t.values().to_vec(), grad)?;
            vars.insert(path.clone(), v);
        }
        Ok(Bound { vars })
    }

    /// Adds leaf gradients of bound parameters into the parameter set.
    pub fn export_grads(&self, bound: &Bound, params: &mut ParameterSet) -> Result<(), TensorError> {
        for (path, v) in bound.iter() {
            if let Some(g) = self.grad(*v) {
                params
                    .get_mut(path)
                    .ok_or_else(|| TensorError::MissingParameter(path.clone()))?
                    .accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    /// Sign of every rectifier input recorded so far, in tape order.
    pub fn activation_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::LRelu(a, _) => Some(self.nodes[a.0].value.iter().map(|&x| x > 0.0)),
                _ => None,
            })
            .flatten()
            .collect()
    }

    /// Clears every stored gradient on the graph.
    pub fn zero_grad(&mut self) {
        self.nodes.iter_mut().for_each(|n| n.grad = None);
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a, b]);
        self.push(shape, value, Op::Add(a, b), rg, "add")
    }

    /// `a + b` where `b` is broadcast over every row of `a` (bias add).
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (_, cols) = rows_cols(self.shape(a));
        if self.value(b).len() != cols {
            return Err(mismatch("add_row", self.shape(a).len() - 1, cols, self.value(b).len()));
        }
        let bv = self.value(b);
        let value = self
            .value(a)
            .chunks(cols)
            .flat_map(|row| row.iter().zip(bv).map(|(x, y)| x + y))
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a, b]);
        self.push(shape, value, Op::AddRow(a, b), rg, "add_row")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a, b]);
        self.push(shape, value, Op::Sub(a, b), rg, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a, b]);
        self.push(shape, value, Op::Mul(a, b), rg, "mul")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, TensorError> {
        let value = self.value(a).iter().map(|x| x * c).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a]);
        self.push(shape, value, Op::Scale(a, c), rg, "scale")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, TensorError> {
        let value = self.value(a).iter().map(|x| x.tanh()).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a]);
        self.push(shape, value, Op::Tanh(a), rg, "tanh")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        let value = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a]);
        self.push(shape, value, Op::Sigmoid(a), rg, "sigmoid")
    }

    /// Leaky rectifier `max(x, l·x)`; the slope at exactly zero is `l`.
    pub fn lrelu(&mut self, a: Var, leakiness: f64) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&leakiness) {
            return Err(TensorError::InvalidArgument(format!(
                "leakiness must lie in [0, 1), got {leakiness}"
            )));
        }
        let value = self
            .value(a)
            .iter()
            .map(|&x| if x > 0.0 { x } else { leakiness * x })
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a]);
        self.push(shape, value, Op::LRelu(a, leakiness), rg, "lrelu")
    }

    /// `[m,k] · [k,n] -> [m,n]`. A 1-D left operand is treated as `[1,k]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.as_matrix("matmul", a)?;
        let (k2, n) = self.as_matrix("matmul", b)?;
        if k != k2 {
            return Err(mismatch("matmul", 0, k, k2));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a), false, self.value(b), false, &mut out, 0.0);
        let shape = if self.shape(a).len() == 1 { vec![n] } else { vec![m, n] };
        let rg = self.rg(&[a, b]);
        self.push(shape, out, Op::MatMul(a, b), rg, "matmul")
    }

    /// `a · bᵀ` for `a: [m,k]`, `b: [n,k]` (weights stored output-major).
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.as_matrix("matmul_bt", a)?;
        let (n, k2) = self.as_matrix("matmul_bt", b)?;
        if k != k2 {
            return Err(mismatch("matmul_bt", 1, k, k2));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a), false, self.value(b), true, &mut out, 0.0);
        let shape = if self.shape(a).len() == 1 { vec![n] } else { vec![m, n] };
        let rg = self.rg(&[a, b]);
        self.push(shape, out, Op::MatMulBt(a, b), rg, "matmul_bt")
    }

    /// Concatenates along the last axis; leading extents must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts
            .first()
            .ok_or_else(|| TensorError::InvalidArgument("concat of zero tensors".into()))?;
        let lead = &self.shape(first)[..self.shape(first).len() - 1];
        let (rows, _) = rows_cols(self.shape(first));
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != lead.len() + 1 || &s[..s.len() - 1] != lead {
                return Err(mismatch("concat", 0, rows, rows_cols(s).0));
            }
            total += s[s.len() - 1];
        }
        let mut value = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let c = *self.shape(p).last().unwrap();
                value.extend_from_slice(&self.value(p)[r * c..(r + 1) * c]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let rg = self.rg(parts);
        self.push(shape, value, Op::Concat(parts.to_vec()), rg, "concat")
    }

    /// Takes `len` entries starting at `start` along the last axis.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let (rows, cols) = rows_cols(self.shape(x));
        if len == 0 || start + len > cols {
            return Err(mismatch("slice", self.shape(x).len() - 1, cols, start + len));
        }
        let value = self
            .value(x)
            .chunks(cols)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect::<Vec<_>>();
        debug_assert_eq!(value.len(), rows * len);
        let mut shape = self.shape(x).to_vec();
        *shape.last_mut().unwrap() = len;
        let rg = self.rg(&[x]);
        self.push(shape, value, Op::Slice { x, start }, rg, "slice")
    }

    /// Selects entry `i` along the first axis.
    pub fn index(&mut self, x: Var, i: usize) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(TensorError::InvalidArgument("index needs a tensor of rank >= 2".into()));
        }
        if i >= shape[0] {
            return Err(TensorError::IndexOutOfRange { op: "index", index: i, bound: shape[0] });
        }
        let inner: usize = shape[1..].iter().product();
        let value = self.value(x)[i * inner..(i + 1) * inner].to_vec();
        let rg = self.rg(&[x]);
        self.push(shape[1..].to_vec(), value, Op::Index { x, i }, rg, "index")
    }

    /// Stacks same-shaped tensors along a new leading axis.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts
            .first()
            .ok_or_else(|| TensorError::InvalidArgument("stack of zero tensors".into()))?;
        let inner = self.shape(first).to_vec();
        let mut value = Vec::with_capacity(parts.len() * self.value(first).len());
        for &p in parts {
            if self.shape(p) != inner.as_slice() {
                return Err(mismatch("stack", 0, self.value(first).len(), self.value(p).len()));
            }
            value.extend_from_slice(self.value(p));
        }
        let mut shape = vec![parts.len()];
        shape.extend(inner);
        let rg = self.rg(parts);
        self.push(shape, value, Op::Stack(parts.to_vec()), rg, "stack")
    }

    /// Gathers the listed entries along the first axis.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 || rows.is_empty() {
            return Err(TensorError::InvalidArgument("select_rows needs rank >= 2 and at least one row".into()));
        }
        let inner: usize = shape[1..].iter().product();
        let mut value = Vec::with_capacity(rows.len() * inner);
        for &r in rows {
            if r >= shape[0] {
                return Err(TensorError::IndexOutOfRange { op: "select_rows", index: r, bound: shape[0] });
            }
            value.extend_from_slice(&self.value(x)[r * inner..(r + 1) * inner]);
        }
        let mut out_shape = shape;
        out_shape[0] = rows.len();
        let rg = self.rg(&[x]);
        self.push(out_shape, value, Op::SelectRows { x, rows: rows.to_vec() }, rg, "select_rows")
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, TensorError> {
        check_shape(&shape, self.value(x).len())?;
        let value = self.value(x).to_vec();
        let rg = self.rg(&[x]);
        self.push(shape, value, Op::Reshape(x), rg, "reshape")
    }

    /// Softmax over the last axis, with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var, TensorError> {
        let (_, cols) = rows_cols(self.shape(x));
        let value = self.value(x).chunks(cols).flat_map(softmax_slice).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x]);
        self.push(shape, value, Op::Softmax(x), rg, "softmax")
    }

    /// Mean over the last axis (time for `[C, L]` feature maps).
    pub fn mean_last(&mut self, x: Var) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        let (_, cols) = rows_cols(&shape);
        let value = self
            .value(x)
            .chunks(cols)
            .map(|row| row.iter().sum::<f64>() / cols as f64)
            .collect();
        let out_shape = if shape.len() == 1 { vec![1] } else { shape[..shape.len() - 1].to_vec() };
        let rg = self.rg(&[x]);
        self.push(out_shape, value, Op::MeanLast(x), rg, "mean_last")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let s = self.value(x).iter().sum();
        let rg = self.rg(&[x]);
        self.push(vec![1], vec![s], Op::Sum(x), rg, "sum")
    }

    /// Row `index` of an embedding table `[V, E]`.
    pub fn embedding(&mut self, table: Var, index: usize) -> Result<Var, TensorError> {
        let (v, e) = self.as_matrix("embedding", table)?;
        if index >= v {
            return Err(TensorError::IndexOutOfRange { op: "embedding", index, bound: v });
        }
        let value = self.value(table)[index * e..(index + 1) * e].to_vec();
        let rg = self.rg(&[table]);
        self.push(vec![e], value, Op::Embedding { table, index }, rg, "embedding")
    }

    /// Valid (unpadded) strided correlation.
    ///
    /// `input` is `[C_in, L]` or a batch `[B, C_in, L]`; `kernels` is `[C_out, C_in, F]`,
    /// `bias` is `[C_out]`. Output length is `(L - F) / stride + 1`.
    pub fn conv1d(&mut self, input: Var, kernels: Var, bias: Var, stride: usize) -> Result<Var, TensorError> {
        if stride == 0 {
            return Err(TensorError::InvalidArgument("stride must be at least 1".into()));
        }
        let ishape = self.shape(input).to_vec();
        let (batch, c_in, len) = match ishape.as_slice() {
            [c, l] => (None, *c, *l),
            [b, c, l] => (Some(*b), *c, *l),
            _ => return Err(TensorError::InvalidArgument(format!("conv1d input must be rank 2 or 3, got {ishape:?}"))),
        };
        let kshape = self.shape(kernels).to_vec();
        let [c_out, kc_in, filter] = kshape.as_slice() else {
            return Err(TensorError::InvalidArgument(format!("conv1d kernels must be rank 3, got {kshape:?}")));
        };
        let (c_out, filter) = (*c_out, *filter);
        if *kc_in != c_in {
            return Err(mismatch("conv1d", 1, *kc_in, c_in));
        }
        if self.value(bias).len() != c_out {
            return Err(mismatch("conv1d", 0, c_out, self.value(bias).len()));
        }
        if len < filter {
            return Err(TensorError::InputShorterThanFilter { len, filter });
        }
        let l_out = conv_out_len(len, filter, stride);
        let nb = batch.unwrap_or(1);
        let ck = c_in * filter;
        let mut out = vec![0.0; nb * c_out * l_out];
        let mut cols = vec![0.0; ck * l_out];
        {
            let x = self.value(input);
            let w = self.value(kernels);
            let bv = self.value(bias);
            for b in 0..nb {
                im2col(&x[b * c_in * len..(b + 1) * c_in * len], c_in, len, filter, stride, l_out, &mut cols);
                let ob = &mut out[b * c_out * l_out..(b + 1) * c_out * l_out];
                for (co, row) in ob.chunks_mut(l_out).enumerate() {
                    row.fill(bv[co]);
                }
                gemm(c_out, ck, l_out, w, false, &cols, false, ob, 1.0);
            }
        }
        let shape = match batch {
            Some(b) => vec![b, c_out, l_out],
            None => vec![c_out, l_out],
        };
        let rg = self.rg(&[input, kernels, bias]);
        self.push(shape, out, Op::Conv1d { input, kernels, bias, stride }, rg, "conv1d")
    }

    /// `(1/S) Σ_s Σ_d (target − pred)²` for `[S, D]` operands (a 1-D operand counts as one frame).
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var, TensorError> {
        self.same_shape("mse", pred, target)?;
        let frames = frame_count(self.shape(pred));
        let s: f64 = self
            .value(pred)
            .iter()
            .zip(self.value(target))
            .map(|(z, f)| (f - z) * (f - z))
            .sum();
        let rg = self.rg(&[pred, target]);
        self.push(vec![1], vec![s / frames as f64], Op::Mse(pred, target), rg, "mse")
    }

    /// Mean over steps of `−log softmax(logits_t)[target_t]` for `logits: [T, V]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, TensorError> {
        let (t, v) = self.as_matrix("cross_entropy", logits)?;
        if targets.len() != t {
            return Err(mismatch("cross_entropy", 0, t, targets.len()));
        }
        let mut total = 0.0;
        for (row, &y) in self.value(logits).chunks(v).zip(targets) {
            if y >= v {
                return Err(TensorError::IndexOutOfRange { op: "cross_entropy", index: y, bound: v });
            }
            total -= log_softmax(row)[y];
        }
        let rg = self.rg(&[logits]);
        self.push(
            vec![1],
            vec![total / t as f64],
            Op::CrossEntropy { logits, targets: targets.to_vec() },
            rg,
            "cross_entropy",
        )
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != sb.len() {
            return Err(mismatch(op, 0, sa.len(), sb.len()));
        }
        for (d, (x, y)) in sa.iter().zip(sb).enumerate() {
            if x != y {
                return Err(mismatch(op, d, *x, *y));
            }
        }
        Ok(())
    }

    fn as_matrix(&self, op: &'static str, v: Var) -> Result<(usize, usize), TensorError> {
        match self.shape(v) {
            [k] => Ok((1, *k)),
            [m, k] => Ok((*m, *k)),
            s => Err(TensorError::InvalidArgument(format!("{op} expects rank 1 or 2, got {s:?}"))),
        }
    }

    /// Reverse pass from a scalar. Gradients add onto any left by earlier passes.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(TensorError::NonScalarLoss(self.nodes[loss.0].shape.clone()));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        adj[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            self.propagate(i, &g, &mut adj);
            if g.iter().any(|x| !x.is_finite()) {
                return Err(TensorError::NonFinite { op: "backward" });
            }
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => add_into(acc, &g),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let nodes = &self.nodes;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if let Some(ga) = slot(nodes, adj, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = slot(nodes, adj, *b) {
                    add_into(gb, g);
                }
            }
            Op::AddRow(a, b) => {
                if let Some(ga) = slot(nodes, adj, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = slot(nodes, adj, *b) {
                    let cols = gb.len();
                    for row in g.chunks(cols) {
                        add_into(gb, row);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = slot(nodes, adj, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = slot(nodes, adj, *b) {
                    gb.iter_mut().zip(g).for_each(|(d, s)| *d -= s);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                if let Some(ga) = slot(nodes, adj, *a) {
                    for ((d, gi), bi) in ga.iter_mut().zip(g).zip(bv) {
                        *d += gi * bi;
                    }
                }
                if let Some(gb) = slot(nodes, adj, *b) {
                    for ((d, gi), ai) in gb.iter_mut().zip(g).zip(av) {
                        *d += gi * ai;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = slot(nodes, adj, *a) {
                    ga.iter_mut().zip(g).for_each(|(d, s)| *d += c * s);
                }
            }
            Op::Tanh(a) => {
                if let Some(ga) = slot(nodes, adj, *a) {
                    for ((d, gi), y) in ga.iter_mut().zip(g).zip(&node.value) {
                        *d += gi * (1.0 - y * y);
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = slot(nodes, adj, *a) {
                    for ((d, gi), y) in ga.iter_mut().zip(g).zip(&node.value) {
                        *d += gi * y * (1.0 - y);
                    }
                }
            }
            Op::LRelu(a, l) => {
                let xv = &nodes[a.0].value;
                if let Some(ga) = slot(nodes, adj, *a) {
                    for ((d, gi), x) in ga.iter_mut().zip(g).zip(xv) {
                        *d += if *x > 0.0 { *gi } else { l * gi };
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = matrix_dims(&nodes[a.0].shape);
                let n = matrix_dims(&nodes[b.0].shape).1;
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                if let Some(ga) = slot(nodes, adj, *a) {
                    gemm(m, n, k, g, false, bv, true, ga, 1.0);
                }
                if let Some(gb) = slot(nodes, adj, *b) {
                    gemm(k, m, n, av, true, g, false, gb, 1.0);
                }
            }
            Op::MatMulBt(a, b) => {
                let (m, k) = matrix_dims(&nodes[a.0].shape);
                let n = matrix_dims(&nodes[b.0].shape).0;
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                if let Some(ga) = slot(nodes, adj, *a) {
                    gemm(m, n, k, g, false, bv, false, ga, 1.0);
                }
                if let Some(gb) = slot(nodes, adj, *b) {
                    gemm(n, m, k, g, true, av, false, gb, 1.0);
                }
            }
            Op::Concat(parts) => {
                let (rows, total) = rows_cols(&node.shape);
                let mut offset = 0;
                for p in parts {
                    let c = *nodes[p.0].shape.last().unwrap();
                    if let Some(gp) = slot(nodes, adj, *p) {
                        for r in 0..rows {
                            add_into(&mut gp[r * c..(r + 1) * c], &g[r * total + offset..r * total + offset + c]);
                        }
                    }
                    offset += c;
                }
            }
            Op::Slice { x, start } => {
                let (_, cols) = rows_cols(&nodes[x.0].shape);
                let len = *node.shape.last().unwrap();
                if let Some(gx) = slot(nodes, adj, *x) {
                    for (dst, src) in gx.chunks_mut(cols).zip(g.chunks(len)) {
                        add_into(&mut dst[*start..start + len], src);
                    }
                }
            }
            Op::Index { x, i } => {
                let inner = g.len();
                if let Some(gx) = slot(nodes, adj, *x) {
                    add_into(&mut gx[i * inner..(i + 1) * inner], g);
                }
            }
            Op::Stack(parts) => {
                let inner = g.len() / parts.len();
                for (k, p) in parts.iter().enumerate() {
                    if let Some(gp) = slot(nodes, adj, *p) {
                        add_into(gp, &g[k * inner..(k + 1) * inner]);
                    }
                }
            }
            Op::SelectRows { x, rows } => {
                let inner = g.len() / rows.len();
                if let Some(gx) = slot(nodes, adj, *x) {
                    for (k, r) in rows.iter().enumerate() {
                        add_into(&mut gx[r * inner..(r + 1) * inner], &g[k * inner..(k + 1) * inner]);
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = slot(nodes, adj, *x) {
                    add_into(gx, g);
                }
            }
            Op::Softmax(x) => {
                let (_, cols) = rows_cols(&node.shape);
                if let Some(gx) = slot(nodes, adj, *x) {
                    for ((dst, y), gr) in gx.chunks_mut(cols).zip(node.value.chunks(cols)).zip(g.chunks(cols)) {
                        let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((d, yi), gi) in dst.iter_mut().zip(y).zip(gr) {
                            *d += yi * (gi - dot);
                        }
                    }
                }
            }
            Op::MeanLast(x) => {
                let (_, cols) = rows_cols(&nodes[x.0].shape);
                if let Some(gx) = slot(nodes, adj, *x) {
                    for (dst, gi) in gx.chunks_mut(cols).zip(g) {
                        let share = gi / cols as f64;
                        dst.iter_mut().for_each(|d| *d += share);
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = slot(nodes, adj, *x) {
                    gx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Embedding { table, index } => {
                let e = g.len();
                if let Some(gt) = slot(nodes, adj, *table) {
                    add_into(&mut gt[index * e..(index + 1) * e], g);
                }
            }
            Op::Conv1d { input, kernels, bias, stride } => {
                let ishape = &nodes[input.0].shape;
                let (nb, c_in, len) = match ishape.as_slice() {
                    [c, l] => (1, *c, *l),
                    [b, c, l] => (*b, *c, *l),
                    _ => unreachable!(),
                };
                let kshape = &nodes[kernels.0].shape;
                let (c_out, filter) = (kshape[0], kshape[2]);
                let l_out = *node.shape.last().unwrap();
                let ck = c_in * filter;
                let xv = &nodes[input.0].value;
                let wv = &nodes[kernels.0].value;
                if let Some(gbias) = slot(nodes, adj, *bias) {
                    for b in 0..nb {
                        let gb = &g[b * c_out * l_out..(b + 1) * c_out * l_out];
                        for (d, row) in gbias.iter_mut().zip(gb.chunks(l_out)) {
                            *d += row.iter().sum::<f64>();
                        }
                    }
                }
                let mut cols = vec![0.0; ck * l_out];
                if let Some(gw) = slot(nodes, adj, *kernels) {
                    for b in 0..nb {
                        im2col(&xv[b * c_in * len..(b + 1) * c_in * len], c_in, len, filter, *stride, l_out, &mut cols);
                        let gb = &g[b * c_out * l_out..(b + 1) * c_out * l_out];
                        gemm(c_out, l_out, ck, gb, false, &cols, true, gw, 1.0);
                    }
                }
                if let Some(gx) = slot(nodes, adj, *input) {
                    for b in 0..nb {
                        let gb = &g[b * c_out * l_out..(b + 1) * c_out * l_out];
                        gemm(ck, c_out, l_out, wv, true, gb, false, &mut cols, 0.0);
                        col2im_add(&cols, c_in, len, filter, *stride, l_out, &mut gx[b * c_in * len..(b + 1) * c_in * len]);
                    }
                }
            }
            Op::Mse(p, t) => {
                let frames = frame_count(&nodes[p.0].shape) as f64;
                let (pv, tv) = (&nodes[p.0].value, &nodes[t.0].value);
                let c = 2.0 * g[0] / frames;
                if let Some(gp) = slot(nodes, adj, *p) {
                    for ((d, z), f) in gp.iter_mut().zip(pv).zip(tv) {
                        *d += c * (z - f);
                    }
                }
                if let Some(gt) = slot(nodes, adj, *t) {
                    for ((d, z), f) in gt.iter_mut().zip(pv).zip(tv) {
                        *d -= c * (z - f);
                    }
                }
            }
            Op::CrossEntropy { logits, targets } => {
                let v = nodes[logits.0].shape[1];
                let c = g[0] / targets.len() as f64;
                let lv = &nodes[logits.0].value;
                if let Some(gl) = slot(nodes, adj, *logits) {
                    for ((dst, row), &y) in gl.chunks_mut(v).zip(lv.chunks(v)).zip(targets) {
                        let p = softmax_slice(row);
                        for (k, (d, pk)) in dst.iter_mut().zip(&p).enumerate() {
                            let onehot = if k == y { 1.0 } else { 0.0 };
                            *d += c * (pk - onehot);
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint slot of `v`, allocated on first use; `None` when `v` takes no gradient.
fn slot<'a>(nodes: &[Node], adj: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    Some(adj[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]))
}

fn matrix_dims(shape: &[usize]) -> (usize, usize) {
    match shape {
        [k] => (1, *k),
        [m, k] => (*m, *k),
        _ => unreachable!("validated at record time"),
    }
}

fn frame_count(shape: &[usize]) -> usize {
    if shape.len() == 1 {
        1
    } else {
        rows_cols(shape).0
    }
}

/// Output length of a valid strided correlation.
pub fn conv_out_len(len: usize, filter: usize, stride: usize) -> usize {
    (len - filter) / stride + 1
}

fn im2col(x: &[f64], c_in: usize, len: usize, filter: usize, stride: usize, l_out: usize, cols: &mut [f64]) {
    for ci in 0..c_in {
        let xc = &x[ci * len..(ci + 1) * len];
        for f in 0..filter {
            let row = &mut cols[(ci * filter + f) * l_out..(ci * filter + f + 1) * l_out];
            if stride == 1 {
                row.copy_from_slice(&xc[f..f + l_out]);
            } else {
                for (o, r) in row.iter_mut().enumerate() {
                    *r = xc[o * stride + f];
                }
            }
        }
    }
}

fn col2im_add(cols: &[f64], c_in: usize, len: usize, filter: usize, stride: usize, l_out: usize, gx: &mut [f64]) {
    for ci in 0..c_in {
        let gc = &mut gx[ci * len..(ci + 1) * len];
        for f in 0..filter {
            let row = &cols[(ci * filter + f) * l_out..(ci * filter + f + 1) * l_out];
            for (o, r) in row.iter().enumerate() {
                gc[o * stride + f] += r;
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax of one vector.
pub fn softmax_slice(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    x.iter().map(|v| v - lse).collect()
}
