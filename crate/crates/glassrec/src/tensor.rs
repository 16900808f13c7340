//! Dense row-major `f64` tensors and a reverse-mode gradient tape.
//!
//! Every differentiable operation appends one record to a [`GradientTape`].
//! Records only ever reference earlier tape entries, so replaying the tape in
//! reverse visits nodes in reverse topological order; [`GradientTape::backward`]
//! does exactly that, accumulating gradients additively into every node that
//! requires them. All arithmetic is 64-bit: the networks here are tiny and
//! the test suite pins gradients against central finite differences, which
//! needs the head-room.

use rand::Rng;

use crate::error::{Error, Result};

pub mod gradcheck;

/// A dense tensor. Without a tape attached this is a plain immutable value;
/// on a tape it additionally carries the gradient buffer filled in by
/// [`GradientTape::backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Build a tensor, checking that `shape` and `data` agree.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} requires {} elements, got {}",
                shape,
                expect,
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::new(vec![1], vec![value]).expect("scalar shape is consistent")
    }

    /// Build a rank-2 tensor from rows, checking that they are rectangular.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != c {
                return Err(Error::Dimension(format!(
                    "row 0 has {} columns but row {} has {}",
                    c,
                    i,
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Tensor::new(vec![r, c], data)
    }

    /// Mark the tensor as a differentiation target when placed on a tape.
    pub fn requires_grad(mut self, yes: bool) -> Self {
        self.requires_grad = yes;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn requires_gradient(&self) -> bool {
        self.requires_grad
    }

    /// Gradient accumulated by the owning tape, if any.
    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Number of rows when the tensor is treated as a matrix (rank 1 counts
    /// as a single row).
    pub fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    /// Length of the last axis; 1 for scalars.
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Borrow row `i` of a matrix (or the whole buffer for rank 1).
    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.last_dim();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.last_dim() + j]
    }

    fn dims2(&self, what: &str) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(Error::Dimension(format!(
                "{what} expects a rank-2 tensor, got shape {:?}",
                self.shape
            )));
        }
        Ok((self.shape[0], self.shape[1]))
    }
}

/// Handle to a tensor stored on a [`GradientTape`]. Only valid for the tape
/// that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: TensorId, b: TensorId },
    Add { a: TensorId, b: TensorId },
    Sub { a: TensorId, b: TensorId },
    Mul { a: TensorId, b: TensorId },
    AddScalar { a: TensorId },
    MulScalar { a: TensorId, scalar: f64 },
    Relu { a: TensorId },
    LeakyRelu { a: TensorId, slope: f64 },
    Sigmoid { a: TensorId },
    Log { a: TensorId },
    SoftmaxRows { a: TensorId },
    LayerNorm { a: TensorId, gain: TensorId, bias: TensorId, eps: f64 },
    Dropout { a: TensorId, mask: Vec<f64> },
    ConcatColumns { parts: Vec<TensorId> },
    SelectRows { a: TensorId, indices: Vec<usize> },
    RowSum { a: TensorId },
    Sum { a: TensorId },
    SumSq { a: TensorId },
    Transpose { a: TensorId },
    AddRow { a: TensorId, bias: TensorId },
}

struct Node {
    tensor: Tensor,
    op: Op,
}

/// Ordered record of executed primitive operations plus their results.
///
/// Typical lifecycle: push inputs, build the computation through the op
/// methods, call [`backward`](GradientTape::backward) once on a scalar
/// result, then read gradients back with [`grad`](GradientTape::grad).
/// A tape is single-use: a second `backward` without a fresh tape is
/// rejected.
#[derive(Default)]
pub struct GradientTape {
    nodes: Vec<Node>,
    backward_done: bool,
}

impl GradientTape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of tensors recorded so far.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Place an input tensor on the tape, keeping its `requires_grad` flag.
    pub fn input(&mut self, tensor: Tensor) -> TensorId {
        self.push(tensor, Op::Leaf)
    }

    /// Place a non-differentiable value on the tape (graph operators,
    /// fixed embeddings, ...).
    pub fn constant(&mut self, tensor: Tensor) -> TensorId {
        self.push(tensor.requires_grad(false), Op::Leaf)
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].tensor
    }

    /// Gradient of the last `backward` target with respect to tensor `id`.
    pub fn grad(&self, id: TensorId) -> Result<&[f64]> {
        if !self.backward_done {
            return Err(Error::Contract(
                "gradients requested before backward was run".into(),
            ));
        }
        self.nodes[id.0].tensor.grad().ok_or_else(|| {
            Error::Contract(format!(
                "tensor {} does not require gradients",
                id.0
            ))
        })
    }

    fn push(&mut self, tensor: Tensor, op: Op) -> TensorId {
        self.nodes.push(Node { tensor, op });
        TensorId(self.nodes.len() - 1)
    }

    fn push_result(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, requires: bool) -> TensorId {
        let tensor = Tensor::new(shape, data)
            .expect("op results are shape-consistent by construction")
            .requires_grad(requires);
        self.push(tensor, op)
    }

    fn requires(&self, id: TensorId) -> bool {
        self.nodes[id.0].tensor.requires_grad
    }

    // ----- primitive operations -------------------------------------------

    /// `[m,k] x [k,n] -> [m,n]` matrix product.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (m, ka) = self.value(a).dims2("matmul lhs")?;
        let (kb, n) = self.value(b).dims2("matmul rhs")?;
        if ka != kb {
            return Err(Error::Dimension(format!(
                "matmul: lhs shape {:?} does not chain with rhs shape {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let out = matmul_raw(
            self.value(a).data(),
            self.value(b).data(),
            m,
            ka,
            n,
        );
        let req = self.requires(a) || self.requires(b);
        Ok(self.push_result(vec![m, n], out, Op::MatMul { a, b }, req))
    }

    fn zip_same_shape(
        &mut self,
        a: TensorId,
        b: TensorId,
        what: &str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<TensorId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Dimension(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.value(a).shape().to_vec();
        let req = self.requires(a) || self.requires(b);
        Ok(self.push_result(shape, data, op, req))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.zip_same_shape(a, b, "add", |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.zip_same_shape(a, b, "sub", |x, y| x - y, Op::Sub { a, b })
    }

    /// Elementwise (Hadamard) product of same-shape tensors.
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.zip_same_shape(a, b, "mul", |x, y| x * y, Op::Mul { a, b })
    }

    fn map(&mut self, a: TensorId, f: impl Fn(f64) -> f64, op: Op) -> TensorId {
        let data: Vec<f64> = self.value(a).data().iter().map(|&x| f(x)).collect();
        let shape = self.value(a).shape().to_vec();
        let req = self.requires(a);
        self.push_result(shape, data, op, req)
    }

    pub fn add_scalar(&mut self, a: TensorId, scalar: f64) -> TensorId {
        self.map(a, |x| x + scalar, Op::AddScalar { a })
    }

    pub fn mul_scalar(&mut self, a: TensorId, scalar: f64) -> TensorId {
        self.map(a, |x| x * scalar, Op::MulScalar { a, scalar })
    }

    /// `max(x, 0)`; the subgradient at exactly 0 is taken as 0.
    pub fn relu(&mut self, a: TensorId) -> TensorId {
        self.map(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu { a })
    }

    pub fn leaky_relu(&mut self, a: TensorId, slope: f64) -> TensorId {
        self.map(
            a,
            move |x| if x > 0.0 { x } else { slope * x },
            Op::LeakyRelu { a, slope },
        )
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        self.map(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid { a })
    }

    /// Natural logarithm; callers must keep inputs strictly positive.
    pub fn log(&mut self, a: TensorId) -> TensorId {
        self.map(a, f64::ln, Op::Log { a })
    }

    /// Row-wise softmax over the last axis, stabilised by subtracting the
    /// row maximum before exponentiating.
    pub fn softmax_rows(&mut self, a: TensorId) -> TensorId {
        let d = self.value(a).last_dim();
        let src = self.value(a).data();
        let mut out = vec![0.0; src.len()];
        for (row_out, row_in) in out.chunks_mut(d).zip(src.chunks(d)) {
            let max = row_in.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (o, &x) in row_out.iter_mut().zip(row_in) {
                *o = (x - max).exp();
                sum += *o;
            }
            for o in row_out.iter_mut() {
                *o /= sum;
            }
        }
        let shape = self.value(a).shape().to_vec();
        let req = self.requires(a);
        self.push_result(shape, out, Op::SoftmaxRows { a }, req)
    }

    /// Normalise the last axis to zero mean and unit (population) variance,
    /// then apply the learned `gain` and `bias` vectors.
    pub fn layer_norm(
        &mut self,
        a: TensorId,
        gain: TensorId,
        bias: TensorId,
        eps: f64,
    ) -> Result<TensorId> {
        let d = self.value(a).last_dim();
        if self.value(gain).numel() != d || self.value(bias).numel() != d {
            return Err(Error::Dimension(format!(
                "layer_norm: input last dim {} but gain has {} and bias {} elements",
                d,
                self.value(gain).numel(),
                self.value(bias).numel()
            )));
        }
        let src = self.value(a).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut out = vec![0.0; src.len()];
        for (row_out, row_in) in out.chunks_mut(d).zip(src.chunks(d)) {
            let mean = row_in.iter().sum::<f64>() / d as f64;
            let var = row_in.iter().map(|&x| (x - mean).powi(2)).sum::<f64>() / d as f64;
            let inv_std = 1.0 / (var + eps).sqrt();
            for j in 0..d {
                row_out[j] = g[j] * (row_in[j] - mean) * inv_std + b[j];
            }
        }
        let shape = self.value(a).shape().to_vec();
        let req = self.requires(a) || self.requires(gain) || self.requires(bias);
        Ok(self.push_result(shape, out, Op::LayerNorm { a, gain, bias, eps }, req))
    }

    /// Inverted dropout: surviving entries are scaled by `1/(1-rate)` so the
    /// expectation is unchanged. `training = false` (or a zero rate) is the
    /// identity and records nothing.
    pub fn dropout(
        &mut self,
        a: TensorId,
        rate: f64,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<TensorId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!(
                "dropout rate must lie in [0, 1), got {rate}"
            )));
        }
        if !training || rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(a).numel())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(&mask)
            .map(|(&x, &m)| x * m)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let req = self.requires(a);
        Ok(self.push_result(shape, data, Op::Dropout { a, mask }, req))
    }

    /// Concatenate rank-2 tensors with equal row counts along the column axis.
    pub fn concat_columns(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::Contract("concat_columns of zero tensors".into()));
        }
        let (rows, _) = self.value(parts[0]).dims2("concat_columns")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2("concat_columns")?;
            if r != rows {
                return Err(Error::Dimension(format!(
                    "concat_columns: shapes {:?} and {:?} have different row counts",
                    self.value(parts[0]).shape(),
                    self.value(p).shape()
                )));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for r in 0..rows {
                out[r * total + offset..r * total + offset + w]
                    .copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let req = parts.iter().any(|&p| self.requires(p));
        Ok(self.push_result(
            vec![rows, total],
            out,
            Op::ConcatColumns { parts: parts.to_vec() },
            req,
        ))
    }

    /// Gather rows of a matrix; repeated indices are allowed and their
    /// gradients accumulate.
    pub fn select_rows(&mut self, a: TensorId, indices: &[usize]) -> Result<TensorId> {
        let (rows, cols) = self.value(a).dims2("select_rows")?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::Contract(format!(
                "select_rows: index {bad} out of range for {rows} rows"
            )));
        }
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            out.extend_from_slice(&src[i * cols..(i + 1) * cols]);
        }
        let req = self.requires(a);
        Ok(self.push_result(
            vec![indices.len(), cols],
            out,
            Op::SelectRows { a, indices: indices.to_vec() },
            req,
        ))
    }

    /// Sum the last axis away: `[m,n] -> [m]`.
    pub fn row_sum(&mut self, a: TensorId) -> Result<TensorId> {
        let (rows, cols) = self.value(a).dims2("row_sum")?;
        let src = self.value(a).data();
        let out: Vec<f64> = (0..rows)
            .map(|r| src[r * cols..(r + 1) * cols].iter().sum())
            .collect();
        let req = self.requires(a);
        Ok(self.push_result(vec![rows], out, Op::RowSum { a }, req))
    }

    /// Sum of all entries, as a `[1]` tensor.
    pub fn sum(&mut self, a: TensorId) -> TensorId {
        let total: f64 = self.value(a).data().iter().sum();
        let req = self.requires(a);
        self.push_result(vec![1], vec![total], Op::Sum { a }, req)
    }

    /// Sum of squared entries, as a `[1]` tensor.
    pub fn sum_sq(&mut self, a: TensorId) -> TensorId {
        let total: f64 = self.value(a).data().iter().map(|&x| x * x).sum();
        let req = self.requires(a);
        self.push_result(vec![1], vec![total], Op::SumSq { a }, req)
    }

    pub fn transpose(&mut self, a: TensorId) -> Result<TensorId> {
        let (rows, cols) = self.value(a).dims2("transpose")?;
        let src = self.value(a).data();
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = src[r * cols + c];
            }
        }
        let req = self.requires(a);
        Ok(self.push_result(vec![cols, rows], out, Op::Transpose { a }, req))
    }

    /// Broadcast-add a length-`d` bias vector to every row of an `[m,d]`
    /// matrix.
    pub fn add_row(&mut self, a: TensorId, bias: TensorId) -> Result<TensorId> {
        let (rows, cols) = self.value(a).dims2("add_row")?;
        if self.value(bias).numel() != cols {
            return Err(Error::Dimension(format!(
                "add_row: matrix shape {:?} but bias has {} elements",
                self.value(a).shape(),
                self.value(bias).numel()
            )));
        }
        let src = self.value(a).data();
        let b = self.value(bias).data();
        let out: Vec<f64> = src
            .iter()
            .enumerate()
            .map(|(i, &x)| x + b[i % cols])
            .collect();
        let req = self.requires(a) || self.requires(bias);
        Ok(self.push_result(vec![rows, cols], out, Op::AddRow { a, bias }, req))
    }

    // ----- reverse pass ----------------------------------------------------

    /// Accumulate `d loss / d node` into every node that requires gradients.
    /// `loss` must hold exactly one element. A tape can only be differentiated
    /// once; build a fresh tape per step instead of resetting.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.backward_done {
            return Err(Error::Contract(
                "backward called twice on the same tape".into(),
            ));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward target must be a scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.backward_done = true;
        for node in &mut self.nodes {
            if node.tensor.requires_grad {
                node.tensor.grad = Some(vec![0.0; node.tensor.numel()]);
            }
        }
        if let Some(g) = self.nodes[loss.0].tensor.grad.as_mut() {
            g[0] = 1.0;
        } else {
            // Differentiating a pure constant: every gradient is zero.
            return Ok(());
        }

        for idx in (0..self.nodes.len()).rev() {
            let Some(upstream) = self.nodes[idx].tensor.grad.clone() else {
                continue;
            };
            if upstream.iter().all(|&g| g == 0.0) {
                continue;
            }
            // Borrow juggling: take the op apart first, then touch inputs.
            match &self.nodes[idx].op {
                Op::Leaf => {}
                &Op::MatMul { a, b } => {
                    let (m, k) = (self.value(a).shape()[0], self.value(a).shape()[1]);
                    let n = self.value(b).shape()[1];
                    if self.requires(a) {
                        // dA = G . B^T
                        let bt = transpose_raw(self.value(b).data(), k, n);
                        let da = matmul_raw(&upstream, &bt, m, n, k);
                        self.accumulate(a, &da);
                    }
                    if self.requires(b) {
                        // dB = A^T . G
                        let at = transpose_raw(self.value(a).data(), m, k);
                        let db = matmul_raw(&at, &upstream, k, m, n);
                        self.accumulate(b, &db);
                    }
                }
                &Op::Add { a, b } => {
                    if self.requires(a) {
                        self.accumulate(a, &upstream);
                    }
                    if self.requires(b) {
                        self.accumulate(b, &upstream);
                    }
                }
                &Op::Sub { a, b } => {
                    if self.requires(a) {
                        self.accumulate(a, &upstream);
                    }
                    if self.requires(b) {
                        let neg: Vec<f64> = upstream.iter().map(|&g| -g).collect();
                        self.accumulate(b, &neg);
                    }
                }
                &Op::Mul { a, b } => {
                    if self.requires(a) {
                        let da: Vec<f64> = upstream
                            .iter()
                            .zip(self.value(b).data())
                            .map(|(&g, &y)| g * y)
                            .collect();
                        self.accumulate(a, &da);
                    }
                    if self.requires(b) {
                        let db: Vec<f64> = upstream
                            .iter()
                            .zip(self.value(a).data())
                            .map(|(&g, &x)| g * x)
                            .collect();
                        self.accumulate(b, &db);
                    }
                }
                &Op::AddScalar { a } => {
                    if self.requires(a) {
                        self.accumulate(a, &upstream);
                    }
                }
                &Op::MulScalar { a, scalar } => {
                    if self.requires(a) {
                        let da: Vec<f64> = upstream.iter().map(|&g| g * scalar).collect();
                        self.accumulate(a, &da);
                    }
                }
                &Op::Relu { a } => {
                    if self.requires(a) {
                        let da: Vec<f64> = upstream
                            .iter()
                            .zip(self.value(a).data())
                            .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                            .collect();
                        self.accumulate(a, &da);
                    }
                }
                &Op::LeakyRelu { a, slope } => {
                    if self.requires(a) {
                        let da: Vec<f64> = upstream
                            .iter()
                            .zip(self.value(a).data())
                            .map(|(&g, &x)| if x > 0.0 { g } else { slope * g })
                            .collect();
                        self.accumulate(a, &da);
                    }
                }
                &Op::Sigmoid { a } => {
                    if self.requires(a) {
                        let da: Vec<f64> = upstream
                            .iter()
                            .zip(self.nodes[idx].tensor.data())
                            .map(|(&g, &s)| g * s * (1.0 - s))
                            .collect();
                        self.accumulate(a, &da);
                    }
                }
                &Op::Log { a } => {
                    if self.requires(a) {
                        let da: Vec<f64> = upstream
                            .iter()
                            .zip(self.value(a).data())
                            .map(|(&g, &x)| g / x)
                            .collect();
                        self.accumulate(a, &da);
                    }
                }
                &Op::SoftmaxRows { a } => {
                    if self.requires(a) {
                        let d = self.nodes[idx].tensor.last_dim();
                        let s = self.nodes[idx].tensor.data();
                        let mut da = vec![0.0; s.len()];
                        for r in 0..s.len() / d {
                            let row = &s[r * d..(r + 1) * d];
                            let grow = &upstream[r * d..(r + 1) * d];
                            let dot: f64 = row.iter().zip(grow).map(|(&si, &gi)| si * gi).sum();
                            for j in 0..d {
                                // ds_j = s_j * (g_j - sum_i g_i s_i)
                                da[r * d + j] = row[j] * (grow[j] - dot);
                            }
                        }
                        self.accumulate(a, &da);
                    }
                }
                &Op::LayerNorm { a, gain, bias, eps } => {
                    let d = self.nodes[idx].tensor.last_dim();
                    let x = self.value(a).data().to_vec();
                    let g = self.value(gain).data().to_vec();
                    let rows = x.len() / d;
                    let mut da = vec![0.0; x.len()];
                    let mut dgain = vec![0.0; d];
                    let mut dbias = vec![0.0; d];
                    for r in 0..rows {
                        let row = &x[r * d..(r + 1) * d];
                        let up = &upstream[r * d..(r + 1) * d];
                        let mean = row.iter().sum::<f64>() / d as f64;
                        let var =
                            row.iter().map(|&v| (v - mean).powi(2)).sum::<f64>() / d as f64;
                        let inv_std = 1.0 / (var + eps).sqrt();
                        let xhat: Vec<f64> =
                            row.iter().map(|&v| (v - mean) * inv_std).collect();
                        // dxhat = g_up * gain; dx derived from the population
                        // statistics: dx = (dxhat - mean(dxhat) - xhat*mean(dxhat*xhat)) / std
                        let dxhat: Vec<f64> =
                            up.iter().zip(&g).map(|(&u, &gj)| u * gj).collect();
                        let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
                        let mean_dxhat_xhat =
                            dxhat.iter().zip(&xhat).map(|(&dx, &xh)| dx * xh).sum::<f64>()
                                / d as f64;
                        for j in 0..d {
                            da[r * d + j] =
                                (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat) * inv_std;
                            dgain[j] += up[j] * xhat[j];
                            dbias[j] += up[j];
                        }
                    }
                    if self.requires(a) {
                        self.accumulate(a, &da);
                    }
                    if self.requires(gain) {
                        self.accumulate(gain, &dgain);
                    }
                    if self.requires(bias) {
                        self.accumulate(bias, &dbias);
                    }
                }
                Op::Dropout { a, mask } => {
                    let a = *a;
                    if self.requires(a) {
                        let da: Vec<f64> = upstream
                            .iter()
                            .zip(mask)
                            .map(|(&g, &m)| g * m)
                            .collect();
                        self.accumulate(a, &da);
                    }
                }
                Op::ConcatColumns { parts } => {
                    let parts = parts.clone();
                    let total = self.nodes[idx].tensor.last_dim();
                    let rows = self.nodes[idx].tensor.rows();
                    let mut offset = 0;
                    for p in parts {
                        let w = self.value(p).last_dim();
                        if self.requires(p) {
                            let mut dp = vec![0.0; rows * w];
                            for r in 0..rows {
                                dp[r * w..(r + 1) * w].copy_from_slice(
                                    &upstream[r * total + offset..r * total + offset + w],
                                );
                            }
                            self.accumulate(p, &dp);
                        }
                        offset += w;
                    }
                }
                Op::SelectRows { a, indices } => {
                    let a = *a;
                    let indices = indices.clone();
                    if self.requires(a) {
                        let cols = self.value(a).last_dim();
                        let mut da = vec![0.0; self.value(a).numel()];
                        for (r, &i) in indices.iter().enumerate() {
                            for c in 0..cols {
                                da[i * cols + c] += upstream[r * cols + c];
                            }
                        }
                        self.accumulate(a, &da);
                    }
                }
                &Op::RowSum { a } => {
                    if self.requires(a) {
                        let cols = self.value(a).last_dim();
                        let da: Vec<f64> = (0..self.value(a).numel())
                            .map(|i| upstream[i / cols])
                            .collect();
                        self.accumulate(a, &da);
                    }
                }
                &Op::Sum { a } => {
                    if self.requires(a) {
                        let da = vec![upstream[0]; self.value(a).numel()];
                        self.accumulate(a, &da);
                    }
                }
                &Op::SumSq { a } => {
                    if self.requires(a) {
                        let da: Vec<f64> = self
                            .value(a)
                            .data()
                            .iter()
                            .map(|&x| 2.0 * x * upstream[0])
                            .collect();
                        self.accumulate(a, &da);
                    }
                }
                &Op::Transpose { a } => {
                    if self.requires(a) {
                        let (rows, cols) = (
                            self.nodes[idx].tensor.shape()[0],
                            self.nodes[idx].tensor.shape()[1],
                        );
                        let da = transpose_raw(&upstream, rows, cols);
                        self.accumulate(a, &da);
                    }
                }
                &Op::AddRow { a, bias } => {
                    if self.requires(a) {
                        self.accumulate(a, &upstream);
                    }
                    if self.requires(bias) {
                        let cols = self.value(bias).numel();
                        let mut db = vec![0.0; cols];
                        for (i, &g) in upstream.iter().enumerate() {
                            db[i % cols] += g;
                        }
                        self.accumulate(bias, &db);
                    }
                }
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, id: TensorId, delta: &[f64]) {
        let grad = self.nodes[id.0]
            .tensor
            .grad
            .as_mut()
            .expect("nodes that require grad have buffers allocated");
        for (g, &d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::gradcheck::max_rel_error;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t2(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn tensor_shape_data_mismatch_is_rejected() {
        let err = Tensor::new(vec![2, 3], vec![1.0; 5]).unwrap_err();
        assert!(err.to_string().contains("[2, 3]"));
        assert!(err.to_string().contains('5'));
    }

    #[test]
    fn matmul_by_identity_is_identity() {
        let mut tape = GradientTape::new();
        let a = tape.input(t2(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let eye = tape.constant(t2(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let out = tape.matmul(a, eye).unwrap();
        assert_eq!(tape.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_row_by_column() {
        let mut tape = GradientTape::new();
        let a = tape.input(t2(&[&[1.0, 2.0]]));
        let b = tape.input(t2(&[&[3.0], &[4.0]]));
        let out = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(out).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut tape = GradientTape::new();
        let a = tape.input(Tensor::zeros(vec![2, 3]));
        let b = tape.input(Tensor::zeros(vec![4, 2]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn grad_of_sum_matmul_is_transposed_partner() {
        // d/dA sum(A.B) with A = [[1,1]], B = [[2],[5]]  ->  [[2, 5]]
        let mut tape = GradientTape::new();
        let a = tape.input(t2(&[&[1.0, 1.0]]).requires_grad(true));
        let b = tape.input(t2(&[&[2.0], &[5.0]]));
        let prod = tape.matmul(a, b).unwrap();
        let loss = tape.sum(prod);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[2.0, 5.0]);
    }

    #[test]
    fn elementwise_values() {
        let mut tape = GradientTape::new();
        let a = tape.input(Tensor::new(vec![2], vec![1.0, -2.0]).unwrap());
        let b = tape.input(Tensor::new(vec![2], vec![3.0, 4.0]).unwrap());
        let prod = tape.mul(a, b).unwrap();
        assert_eq!(tape.value(prod).data(), &[3.0, -8.0]);

        let z = tape.input(Tensor::scalar(0.0));
        let s = tape.sigmoid(z);
        assert_eq!(tape.value(s).data(), &[0.5]);

        let neg = tape.input(Tensor::scalar(-1.5));
        let r = tape.relu(neg);
        assert_eq!(tape.value(r).data(), &[0.0]);
    }

    #[test]
    fn relu_gradient_at_negative_input_is_zero() {
        let mut tape = GradientTape::new();
        let a = tape.input(Tensor::scalar(-1.5).requires_grad(true));
        let r = tape.relu(a);
        let loss = tape.sum(r);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[0.0]);
    }

    #[test]
    fn softmax_rows_handles_uniform_and_large_inputs() {
        let mut tape = GradientTape::new();
        let a = tape.input(t2(&[&[0.0, 0.0], &[1000.0, 1000.0]]));
        let s = tape.softmax_rows(a);
        for &v in tape.value(s).data() {
            assert!((v - 0.5).abs() < 1e-12);
        }
        let b = tape.input(t2(&[&[2.0f64.ln(), 0.0]]));
        let sb = tape.softmax_rows(b);
        let got = tape.value(sb).data();
        assert!((got[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((got[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let data: Vec<f64> = (0..12).map(|_| rng.gen_range(-6.0..6.0)).collect();
            let mut tape = GradientTape::new();
            let a = tape.input(Tensor::new(vec![3, 4], data).unwrap());
            let s = tape.softmax_rows(a);
            for r in 0..3 {
                let sum: f64 = tape.value(s).row(r).iter().sum();
                assert!((sum - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn layer_norm_constant_row_maps_to_bias() {
        let mut tape = GradientTape::new();
        let a = tape.input(Tensor::new(vec![3], vec![5.0, 5.0, 5.0]).unwrap());
        let g = tape.input(Tensor::new(vec![3], vec![1.0; 3]).unwrap());
        let b = tape.input(Tensor::new(vec![3], vec![0.0; 3]).unwrap());
        let out = tape.layer_norm(a, g, b, 1e-5).unwrap();
        for &v in tape.value(out).data() {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn layer_norm_unit_gain_values() {
        let mut tape = GradientTape::new();
        let a = tape.input(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let g = tape.input(Tensor::new(vec![3], vec![1.0; 3]).unwrap());
        let b = tape.input(Tensor::new(vec![3], vec![0.0; 3]).unwrap());
        let out = tape.layer_norm(a, g, b, 1e-5).unwrap();
        let got = tape.value(out).data();
        for (v, want) in got.iter().zip([-1.2247, 0.0, 1.2247]) {
            assert!((v - want).abs() < 1e-3, "got {got:?}");
        }
    }

    #[test]
    fn layer_norm_normalises_mean_and_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = 6;
        let data: Vec<f64> = (0..2 * d).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let mut tape = GradientTape::new();
        let a = tape.input(Tensor::new(vec![2, d], data).unwrap());
        let g = tape.input(Tensor::new(vec![d], vec![1.0; d]).unwrap());
        let b = tape.input(Tensor::new(vec![d], vec![0.0; d]).unwrap());
        let out = tape.layer_norm(a, g, b, 0.0).unwrap();
        for r in 0..2 {
            let row = tape.value(out).row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|&x| (x - mean).powi(2)).sum::<f64>() / d as f64;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn dropout_identities_and_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut tape = GradientTape::new();
        let a = tape.input(Tensor::new(vec![4], vec![1.0; 4]).unwrap());
        // rate 0 and eval mode are both the identity (same id back).
        assert_eq!(tape.dropout(a, 0.0, true, &mut rng).unwrap(), a);
        assert_eq!(tape.dropout(a, 0.5, false, &mut rng).unwrap(), a);
        assert!(tape.dropout(a, 1.0, true, &mut rng).is_err());

        // Surviving entries carry 1/(1-rate); the mean stays near 1.
        let n = 100_000;
        let big = tape.input(Tensor::new(vec![n], vec![1.0; n]).unwrap());
        let dropped = tape.dropout(big, 0.5, true, &mut rng).unwrap();
        let mean: f64 = tape.value(dropped).data().iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn concat_columns_values_and_backward_split() {
        let mut tape = GradientTape::new();
        let a = tape.input(t2(&[&[1.0]]).requires_grad(true));
        let b = tape.input(t2(&[&[2.0]]).requires_grad(true));
        let cat = tape.concat_columns(&[a, b]).unwrap();
        assert_eq!(tape.value(cat).shape(), &[1, 2]);
        assert_eq!(tape.value(cat).data(), &[1.0, 2.0]);

        let wide = tape.input(Tensor::zeros(vec![3, 4]).requires_grad(true));
        let narrow = tape.input(Tensor::zeros(vec![3, 2]).requires_grad(true));
        let both = tape.concat_columns(&[narrow, wide]).unwrap();
        assert_eq!(tape.value(both).shape(), &[3, 6]);

        let loss = tape.sum(cat);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[1.0]);
        assert_eq!(tape.grad(b).unwrap(), &[1.0]);
    }

    #[test]
    fn sum_of_squares_gradient_is_two_x() {
        let mut tape = GradientTape::new();
        let w = tape.input(t2(&[&[3.0]]).requires_grad(true));
        let loss = tape.sum_sq(w);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).unwrap(), &[6.0]);
    }

    #[test]
    fn gradient_accumulation_is_additive() {
        // y = x + x  =>  d sum(y) / dx = 2
        let mut tape = GradientTape::new();
        let x = tape.input(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap().requires_grad(true));
        let y = tape.add(x, x).unwrap();
        let loss = tape.sum(y);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn backward_twice_is_rejected() {
        let mut tape = GradientTape::new();
        let x = tape.input(Tensor::scalar(1.0).requires_grad(true));
        let loss = tape.sum(x);
        tape.backward(loss).unwrap();
        let err = tape.backward(loss).unwrap_err();
        assert!(err.to_string().contains("twice"));
    }

    #[test]
    fn backward_needs_scalar_target() {
        let mut tape = GradientTape::new();
        let x = tape.input(Tensor::zeros(vec![2, 2]).requires_grad(true));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn select_rows_accumulates_repeated_indices() {
        let mut tape = GradientTape::new();
        let x = tape.input(t2(&[&[1.0, 2.0], &[3.0, 4.0]]).requires_grad(true));
        let sel = tape.select_rows(x, &[0, 0, 1]).unwrap();
        assert_eq!(tape.value(sel).data(), &[1.0, 2.0, 1.0, 2.0, 3.0, 4.0]);
        let loss = tape.sum(sel);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 2.0, 1.0, 1.0]);
    }

    // ----- finite-difference checks per primitive -------------------------

    fn random_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
        let n: usize = shape.iter().product();
        // Keep entries away from the relu/leaky-relu kink at 0 so central
        // differences stay valid.
        let data: Vec<f64> = (0..n)
            .map(|_| {
                let mut v: f64 = rng.gen_range(-1.0..1.0);
                while v.abs() < 1e-3 {
                    v = rng.gen_range(-1.0..1.0);
                }
                v
            })
            .collect();
        Tensor::new(shape, data).unwrap().requires_grad(true)
    }

    #[test]
    fn primitives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let a = random_tensor(vec![3, 4], &mut rng);
        let b = random_tensor(vec![4, 2], &mut rng);
        let c = random_tensor(vec![3, 4], &mut rng);
        let g = random_tensor(vec![4], &mut rng);
        let bias = random_tensor(vec![4], &mut rng);

        let cases: Vec<(&str, Vec<Tensor>, Box<gradcheck::BuildFn>)> = vec![
            (
                "matmul",
                vec![a.clone(), b.clone()],
                Box::new(|t, ids| {
                    let m = t.matmul(ids[0], ids[1])?;
                    Ok(t.sum_sq(m))
                }),
            ),
            (
                "add_sub_mul",
                vec![a.clone(), c.clone()],
                Box::new(|t, ids| {
                    let s = t.add(ids[0], ids[1])?;
                    let d = t.sub(s, ids[1])?;
                    let m = t.mul(d, ids[1])?;
                    Ok(t.sum_sq(m))
                }),
            ),
            (
                "activations",
                vec![a.clone()],
                Box::new(|t, ids| {
                    let r = t.relu(ids[0]);
                    let l = t.leaky_relu(r, 0.01);
                    let s = t.sigmoid(l);
                    let sh = t.add_scalar(s, 1e-3);
                    let lg = t.log(sh);
                    Ok(t.sum(lg))
                }),
            ),
            (
                "softmax",
                vec![a.clone()],
                Box::new(|t, ids| {
                    let s = t.softmax_rows(ids[0]);
                    Ok(t.sum_sq(s))
                }),
            ),
            (
                "layer_norm",
                vec![a.clone(), g.clone(), bias.clone()],
                Box::new(|t, ids| {
                    let n = t.layer_norm(ids[0], ids[1], ids[2], 1e-5)?;
                    Ok(t.sum_sq(n))
                }),
            ),
            (
                "select_row_sum_concat_transpose",
                vec![a.clone(), c.clone()],
                Box::new(|t, ids| {
                    let sel = t.select_rows(ids[0], &[2, 0, 2])?;
                    let other = t.select_rows(ids[1], &[0, 1, 2])?;
                    let cat = t.concat_columns(&[sel, other])?;
                    let tr = t.transpose(cat)?;
                    let rs = t.row_sum(tr)?;
                    Ok(t.sum_sq(rs))
                }),
            ),
            (
                "add_row_bias",
                vec![a.clone(), bias.clone()],
                Box::new(|t, ids| {
                    let z = t.add_row(ids[0], ids[1])?;
                    Ok(t.sum_sq(z))
                }),
            ),
        ];
        for (name, inputs, build) in cases {
            let err = max_rel_error(&inputs, build.as_ref()).unwrap();
            assert!(err < 1e-4, "{name}: max relative error {err}");
        }
    }

    #[test]
    fn composite_gcn_style_layer_matches_finite_differences() {
        // relu(adj . x . w) summed: the exact shape used by the GCN layer.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_tensor(vec![4, 3], &mut rng);
        let w = random_tensor(vec![3, 3], &mut rng);
        let adj = t2(&[
            &[0.5, 0.5, 0.0, 0.0],
            &[0.5, 0.5, 0.0, 0.0],
            &[0.0, 0.0, 1.0, 0.0],
            &[0.0, 0.0, 0.0, 1.0],
        ]);
        let err = max_rel_error(&[x, w], |t, ids| {
            let a = t.constant(adj.clone());
            let ax = t.matmul(a, ids[0])?;
            let axw = t.matmul(ax, ids[1])?;
            let r = t.relu(axw);
            Ok(t.sum_sq(r))
        })
        .unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }
}
