//! Dense `f64` arrays and a reverse-accumulation tape.
//!
//! Values live in [`Tensor`]; differentiable computations are recorded on a
//! [`Tape`] through [`Var`] handles and differentiated with [`Tape::backward`].
//! Binary elementwise ops broadcast by aligning trailing extents and stretching
//! extents equal to 1.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("contract error: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Row-major array of 64-bit reals.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(TensorError::Dimension(format!("zero extent in shape {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(TensorError::Dimension(format!("shape {shape:?} needs {len} values, got {}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite("Tensor::new"));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(shape.iter().all(|&e| e > 0), "zero extent in {shape:?}");
        let len = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; len] }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![1], data: vec![value] }
    }

    /// Builds a `[rows.len(), cols]` matrix; panics on ragged input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(TensorError::Dimension("ragged rows".into()));
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access for optimizers and finite-difference probes. Finiteness is
    /// re-checked whenever the tensor enters a tape.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Product of all extents after the first.
    pub fn cols(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn check_finite(self, what: &'static str) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(TensorError::NonFinite(what))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape.len() != 2 || other.shape.len() != 2 {
            return Err(TensorError::Dimension(format!("matmul needs matrices, got {:?} and {:?}", self.shape, other.shape)));
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (other.shape[0], other.shape[1]);
        if k != k2 {
            return Err(TensorError::Dimension(format!("inner extents differ: {:?} x {:?}", self.shape, other.shape)));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &self.data, (k, 1), &other.data, (n, 1), &mut out, 0.0);
        Tensor { shape: vec![m, n], data: out }.check_finite("matmul")
    }

    pub fn relu(&self) -> Tensor {
        self.map(|v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn tanh(&self) -> Tensor {
        self.map(f64::tanh)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        broadcast_binary(self, other, |a, b| a + b)?.check_finite("add")
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        broadcast_binary(self, other, |a, b| a - b)?.check_finite("sub")
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        broadcast_binary(self, other, |a, b| a * b)?.check_finite("mul")
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

/// `out = a·b + beta·out` for row/column-strided operands.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    out: &mut [f64],
    beta: f64,
) {
    debug_assert!(out.len() >= m * n);
    // SAFETY: callers pass buffers whose extents cover the strided index ranges
    // (checked by the shape logic of every caller).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let ea = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let eb = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (ea, eb) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(TensorError::Dimension(format!("cannot broadcast {a:?} with {b:?}"))),
        };
    }
    Ok(out)
}

/// Strides of `shape` viewed inside `target` (0 on stretched extents).
fn broadcast_strides(shape: &[usize], target: &[usize]) -> Vec<usize> {
    let offset = target.len() - shape.len();
    let mut strides = vec![0; target.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i + offset] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Source offset for every element of `target` when reading a broadcast `shape`.
fn broadcast_index(shape: &[usize], target: &[usize]) -> Vec<usize> {
    let strides = broadcast_strides(shape, target);
    let total: usize = target.iter().product();
    let mut idx = Vec::with_capacity(total);
    let mut counter = vec![0usize; target.len()];
    let mut offset = 0usize;
    for _ in 0..total {
        idx.push(offset);
        for d in (0..target.len()).rev() {
            counter[d] += 1;
            offset += strides[d];
            if counter[d] < target[d] {
                break;
            }
            offset -= strides[d] * counter[d];
            counter[d] = 0;
        }
    }
    idx
}

fn broadcast_binary(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape == b.shape {
        let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
        return Ok(Tensor { shape: a.shape.clone(), data });
    }
    let shape = broadcast_shape(&a.shape, &b.shape)?;
    let data = if shape == a.shape && b.len() == *b.shape.last().unwrap() && b.len() == *shape.last().unwrap() {
        // Row broadcast: b is a single trailing row.
        let n = b.len();
        a.data.iter().enumerate().map(|(i, &x)| f(x, b.data[i % n])).collect()
    } else {
        let ia = broadcast_index(&a.shape, &shape);
        let ib = broadcast_index(&b.shape, &shape);
        ia.iter().zip(&ib).map(|(&i, &j)| f(a.data[i], b.data[j])).collect()
    };
    Ok(Tensor { shape, data })
}

/// Sums a broadcast gradient back down to `shape`.
fn reduce_to_shape(grad: &Tensor, shape: &[usize]) -> Tensor {
    if grad.shape == shape {
        return grad.clone();
    }
    let mut out = vec![0.0; shape.iter().product()];
    for (g, &i) in grad.data.iter().zip(&broadcast_index(shape, &grad.shape)) {
        out[i] += g;
    }
    Tensor { shape: shape.to_vec(), data: out }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Minimum(Var, Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Scale(Var, f64),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    SelectRows(Var, Vec<usize>),
    ScatterRows(Vec<(Var, Vec<usize>)>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records primitive operations for one reverse sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients indexed by [`Var`]; absent entries are zero.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, materializing zeros when the root does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn live(&self) -> Result<()> {
        if self.consumed {
            Err(TensorError::Contract("tape already consumed by a backward pass".into()))
        } else {
            Ok(())
        }
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool, what: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite(what));
        }
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn grad1(&self, a: Var) -> bool {
        self.nodes[a.0].needs_grad
    }

    fn grad2(&self, a: Var, b: Var) -> bool {
        self.grad1(a) || self.grad1(b)
    }

    /// A differentiable input (network parameter).
    pub fn leaf(&mut self, t: Tensor) -> Result<Var> {
        self.live()?;
        self.push(t, Op::Leaf, true, "leaf")
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.live()?;
        self.push(t, Op::Constant, false, "constant")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.live()?;
        let v = self.value(a).matmul(self.value(b))?;
        let g = self.grad2(a, b);
        self.push(v, Op::MatMul(a, b), g, "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.live()?;
        let v = broadcast_binary(self.value(a), self.value(b), |x, y| x + y)?;
        let g = self.grad2(a, b);
        self.push(v, Op::Add(a, b), g, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.live()?;
        let v = broadcast_binary(self.value(a), self.value(b), |x, y| x - y)?;
        let g = self.grad2(a, b);
        self.push(v, Op::Sub(a, b), g, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.live()?;
        let v = broadcast_binary(self.value(a), self.value(b), |x, y| x * y)?;
        let g = self.grad2(a, b);
        self.push(v, Op::Mul(a, b), g, "mul")
    }

    /// Elementwise minimum; ties send the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.live()?;
        let v = broadcast_binary(self.value(a), self.value(b), f64::min)?;
        let g = self.grad2(a, b);
        self.push(v, Op::Minimum(a, b), g, "minimum")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.live()?;
        let v = self.value(a).relu();
        let g = self.grad1(a);
        self.push(v, Op::Relu(a), g, "relu")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.live()?;
        let v = self.value(a).tanh();
        let g = self.grad1(a);
        self.push(v, Op::Tanh(a), g, "tanh")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.live()?;
        let v = self.value(a).map(f64::exp);
        let g = self.grad1(a);
        self.push(v, Op::Exp(a), g, "exp")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.live()?;
        if let Some(bad) = self.value(a).data().iter().find(|&&x| x <= 0.0) {
            return Err(TensorError::Domain(format!("log of non-positive value {bad}")));
        }
        let v = self.value(a).map(f64::ln);
        let g = self.grad1(a);
        self.push(v, Op::Log(a), g, "log")
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.live()?;
        let v = self.value(a).map(|x| x * x);
        let g = self.grad1(a);
        self.push(v, Op::Square(a), g, "square")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.live()?;
        let v = self.value(a).map(|x| c * x);
        let g = self.grad1(a);
        self.push(v, Op::Scale(a, c), g, "scale")
    }

    /// Clamp into `[lo, hi]`; the gradient is passed only where the input is inside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.live()?;
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        let g = self.grad1(a);
        self.push(v, Op::Clamp(a, lo, hi), g, "clamp")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.live()?;
        let v = Tensor::scalar(self.value(a).sum());
        let g = self.grad1(a);
        self.push(v, Op::Sum(a), g, "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.live()?;
        let t = self.value(a);
        let v = Tensor::scalar(t.sum() / t.len() as f64);
        let g = self.grad1(a);
        self.push(v, Op::Mean(a), g, "mean")
    }

    /// Row sums of a matrix, as a `[rows, 1]` column.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        self.live()?;
        let t = self.value(a);
        let (r, c) = (t.rows(), t.cols());
        let data = (0..r).map(|i| t.data[i * c..(i + 1) * c].iter().sum()).collect();
        let v = Tensor { shape: vec![r, 1], data };
        let g = self.grad1(a);
        self.push(v, Op::SumCols(a), g, "sum_cols")
    }

    /// Gathers the listed rows (repeats allowed).
    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        self.live()?;
        let t = self.value(a);
        if rows.is_empty() {
            return Err(TensorError::Dimension("empty row selection".into()));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= t.rows()) {
            return Err(TensorError::Dimension(format!("row {bad} out of {}", t.rows())));
        }
        let c = t.cols();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            data.extend_from_slice(t.row(r));
        }
        let mut shape = t.shape.clone();
        shape[0] = rows.len();
        let g = self.grad1(a);
        self.push(Tensor { shape, data }, Op::SelectRows(a, rows.to_vec()), g, "select_rows")
    }

    /// Assembles a `[total_rows, cols]` matrix whose row `rows[j]` of each part is
    /// row `j` of that part. Every output row must be written exactly once.
    pub fn scatter_rows(&mut self, parts: &[(Var, Vec<usize>)], total_rows: usize) -> Result<Var> {
        self.live()?;
        let cols = parts.first().map(|(v, _)| self.value(*v).cols()).ok_or_else(|| TensorError::Dimension("no parts to scatter".into()))?;
        let mut data = vec![0.0; total_rows * cols];
        let mut written = vec![false; total_rows];
        for (v, rows) in parts {
            let t = self.value(*v);
            if t.cols() != cols || t.rows() != rows.len() {
                return Err(TensorError::Dimension("scatter part shape mismatch".into()));
            }
            for (j, &r) in rows.iter().enumerate() {
                if r >= total_rows || written[r] {
                    return Err(TensorError::Dimension(format!("scatter row {r} invalid or repeated")));
                }
                written[r] = true;
                data[r * cols..(r + 1) * cols].copy_from_slice(t.row(j));
            }
        }
        if written.iter().any(|w| !w) {
            return Err(TensorError::Dimension("scatter leaves rows unwritten".into()));
        }
        let g = parts.iter().any(|(v, _)| self.grad1(*v));
        let value = Tensor { shape: vec![total_rows, cols], data };
        self.push(value, Op::ScatterRows(parts.to_vec()), g, "scatter_rows")
    }

    /// Reverse sweep from a single-element `root`. The tape cannot be used afterwards.
    pub fn backward(&mut self, root: Var) -> Result<Gradients> {
        self.live()?;
        if self.value(root).len() != 1 {
            return Err(TensorError::Contract(format!("backward needs a scalar root, got shape {:?}", self.value(root).shape)));
        }
        self.consumed = true;
        let n = root.0 + 1;
        let shapes: Vec<Vec<usize>> = self.nodes.iter().map(|n| n.value.shape.clone()).collect();
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::full(&self.nodes[root.0].value.shape, 1.0));

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            let contributions = self.local_grads(i, &g)?;
            for (v, c) in contributions {
                if !self.nodes[v.0].needs_grad {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.data.iter_mut().zip(&c.data).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(c),
                }
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) {
                grads[i] = None;
            }
        }
        if grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(TensorError::NonFinite("backward"));
        }
        self.nodes.iter_mut().for_each(|n| n.value.data = Vec::new());
        Ok(Gradients { grads, shapes })
    }

    fn local_grads(&self, i: usize, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let val = |v: Var| &self.nodes[v.0].value;
        let out = &self.nodes[i].value;
        let unary = |a: Var, f: &dyn Fn(f64, f64, f64) -> f64| {
            let x = val(a);
            let data = g.data.iter().zip(&x.data).zip(&out.data).map(|((&g, &x), &y)| f(g, x, y)).collect();
            vec![(a, Tensor { shape: x.shape.clone(), data })]
        };
        let res = match &self.nodes[i].op {
            Op::Leaf | Op::Constant => vec![],
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.shape[0], av.shape[1], bv.shape[1]);
                let mut res = Vec::with_capacity(2);
                if self.grad1(*a) {
                    // dA = G·Bᵀ
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, &g.data, (n, 1), &bv.data, (1, n), &mut da, 0.0);
                    res.push((*a, Tensor { shape: vec![m, k], data: da }));
                }
                if self.grad1(*b) {
                    // dB = Aᵀ·G
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, &av.data, (1, k), &g.data, (n, 1), &mut db, 0.0);
                    res.push((*b, Tensor { shape: vec![k, n], data: db }));
                }
                res
            }
            Op::Add(a, b) => vec![(*a, reduce_to_shape(g, &val(*a).shape)), (*b, reduce_to_shape(g, &val(*b).shape))],
            Op::Sub(a, b) => vec![(*a, reduce_to_shape(g, &val(*a).shape)), (*b, reduce_to_shape(&g.map(|x| -x), &val(*b).shape))],
            Op::Mul(a, b) => {
                let ga = broadcast_binary(g, val(*b), |x, y| x * y)?;
                let gb = broadcast_binary(g, val(*a), |x, y| x * y)?;
                vec![(*a, reduce_to_shape(&ga, &val(*a).shape)), (*b, reduce_to_shape(&gb, &val(*b).shape))]
            }
            Op::Minimum(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let mask_a = broadcast_binary(av, bv, |x, y| if x <= y { 1.0 } else { 0.0 })?;
                let ga = g.mul(&mask_a)?;
                let gb = broadcast_binary(g, &mask_a, |x, m| x * (1.0 - m))?;
                vec![(*a, reduce_to_shape(&ga, &av.shape)), (*b, reduce_to_shape(&gb, &bv.shape))]
            }
            Op::Relu(a) => unary(*a, &|g, x, _| if x > 0.0 { g } else { 0.0 }),
            Op::Tanh(a) => unary(*a, &|g, _, y| g * (1.0 - y * y)),
            Op::Exp(a) => unary(*a, &|g, _, y| g * y),
            Op::Log(a) => unary(*a, &|g, x, _| g / x),
            Op::Square(a) => unary(*a, &|g, x, _| 2.0 * g * x),
            Op::Scale(a, c) => unary(*a, &|g, _, _| g * c),
            Op::Clamp(a, lo, hi) => unary(*a, &|g, x, _| if x >= *lo && x <= *hi { g } else { 0.0 }),
            Op::Sum(a) => {
                let s = &val(*a).shape;
                vec![(*a, Tensor::full(s, g.data[0]))]
            }
            Op::Mean(a) => {
                let x = val(*a);
                vec![(*a, Tensor::full(&x.shape, g.data[0] / x.len() as f64))]
            }
            Op::SumCols(a) => {
                let x = val(*a);
                let c = x.cols();
                let data = (0..x.len()).map(|j| g.data[j / c]).collect();
                vec![(*a, Tensor { shape: x.shape.clone(), data })]
            }
            Op::SelectRows(a, rows) => {
                let x = val(*a);
                let c = x.cols();
                let mut data = vec![0.0; x.len()];
                for (j, &r) in rows.iter().enumerate() {
                    for (d, s) in data[r * c..(r + 1) * c].iter_mut().zip(g.row(j)) {
                        *d += s;
                    }
                }
                vec![(*a, Tensor { shape: x.shape.clone(), data })]
            }
            Op::ScatterRows(parts) => parts
                .iter()
                .map(|(v, rows)| {
                    let c = g.cols();
                    let mut data = Vec::with_capacity(rows.len() * c);
                    for &r in rows {
                        data.extend_from_slice(g.row(r));
                    }
                    (*v, Tensor { shape: val(*v).shape.clone(), data })
                })
                .collect(),
        };
        Ok(res)
    }
}
