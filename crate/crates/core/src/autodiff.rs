//! Dense reverse-mode automatic differentiation over vectors and matrices.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its
//! forward value and the inputs it was computed from. [`Graph::backward`]
//! walks the tape once in reverse creation order and accumulates
//! `∂loss/∂leaf` into every leaf created with `requires_grad`.
//!
//! Shapes are explicit and never broadcast. A scalar is a length-1 vector.
//! Everything is `f64`.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between {left} and {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },
    #[error("log: non-positive input {value} at index {index}")]
    LogDomain { index: usize, value: f64 },
    #[error("backward: loss must be a scalar, got {0}")]
    NonScalarLoss(Shape),
    #[error("{0}: empty input list")]
    EmptyInput(&'static str),
    #[error("row: index {index} out of range for {shape}")]
    RowOutOfRange { index: usize, shape: Shape },
    #[error("tensor data length {len} does not match shape {shape}")]
    DataLength { len: usize, shape: Shape },
    #[error("gradcheck: non-finite value encountered at tensor {tensor}, index {index}")]
    NonFinite { tensor: usize, index: usize },
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Shape {
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn numel(self) -> usize {
        match self {
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    pub fn is_scalar(self) -> bool {
        self == Shape::Vector(1)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Vector(n) => write!(f, "[{n}]"),
            Shape::Matrix(r, c) => write!(f, "[{r}x{c}]"),
        }
    }
}

/// Row-major dense array of rank 1 or 2.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(AutodiffError::DataLength {
                len: data.len(),
                shape,
            });
        }
        Ok(Self { shape, data })
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: Shape::Vector(data.len()),
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(Shape::Matrix(rows, cols), data)
    }

    pub fn scalar(value: f64) -> Self {
        Self::vector(vec![value])
    }

    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.numel()],
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

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

    /// Value of a length-1 tensor.
    pub fn item(&self) -> Option<f64> {
        if self.shape.is_scalar() {
            Some(self.data[0])
        } else {
            None
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Reverse rule for [`Graph::custom`]: given the input values, the output
/// value and the output adjoint, returns one adjoint per input.
pub type CustomBackward = Box<dyn Fn(&[&Tensor], &Tensor, &[f64]) -> Vec<Vec<f64>>>;

enum Op {
    Leaf,
    MatVec(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Log(Var),
    Affine(Var, f64),
    Concat(Vec<Var>),
    SumVectors(Vec<Var>),
    MeanVectors(Vec<Var>),
    SumElements(Var),
    WeightedSum(Var, Vec<f64>),
    Row(Var, usize),
    Custom(Vec<Var>, CustomBackward),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Tape of operations, rebuilt for every example.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: requires_grad,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape
    }

    /// Accumulated gradient of a `requires_grad` leaf, if backward has reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad.as_ref().map(|g| Tensor {
            shape: node.value.shape,
            data: g.clone(),
        })
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            requires_grad: false,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn vector_len(&self, op: &'static str, v: Var) -> Result<usize> {
        match self.shape(v) {
            Shape::Vector(n) => Ok(n),
            s => Err(AutodiffError::ShapeMismatch {
                op,
                left: s,
                right: Shape::Vector(0),
            }),
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Shape> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(AutodiffError::ShapeMismatch {
                op,
                left: sa,
                right: sb,
            });
        }
        Ok(sa)
    }

    fn zip_map(&mut self, a: Var, b: Var, shape: Shape, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let data = self.nodes[a.0]
            .value
            .data
            .iter()
            .zip(&self.nodes[b.0].value.data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor { shape, data }
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let value = &self.nodes[a.0].value;
        Tensor {
            shape: value.shape,
            data: value.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Matrix `[r x c]` times vector `[c]`.
    pub fn matvec(&mut self, m: Var, v: Var) -> Result<Var> {
        let (sm, sv) = (self.shape(m), self.shape(v));
        let (rows, cols) = match (sm, sv) {
            (Shape::Matrix(r, c), Shape::Vector(n)) if c == n => (r, c),
            _ => {
                return Err(AutodiffError::ShapeMismatch {
                    op: "matvec",
                    left: sm,
                    right: sv,
                })
            }
        };
        let md = &self.nodes[m.0].value.data;
        let vd = &self.nodes[v.0].value.data;
        let data = (0..rows)
            .map(|r| {
                md[r * cols..(r + 1) * cols]
                    .iter()
                    .zip(vd)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        Ok(self.push(Tensor::vector(data), Op::MatVec(m, v), &[m, v]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("add", a, b)?;
        let value = self.zip_map(a, b, shape, |x, y| x + y);
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("sub", a, b)?;
        let value = self.zip_map(a, b, shape, |x, y| x - y);
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    /// Element-wise product.
    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("hadamard", a, b)?;
        let value = self.zip_map(a, b, shape, |x, y| x * y);
        Ok(self.push(value, Op::Hadamard(a, b), &[a, b]))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.map(a, sigmoid_scalar);
        self.push(value, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.map(a, f64::tanh);
        self.push(value, Op::Tanh(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some((index, &value)) = self.nodes[a.0]
            .value
            .data
            .iter()
            .enumerate()
            .find(|(_, &x)| x <= 0.0 || x.is_nan())
        {
            return Err(AutodiffError::LogDomain { index, value });
        }
        let value = self.map(a, f64::ln);
        Ok(self.push(value, Op::Log(a), &[a]))
    }

    /// `scale * a + shift`, element-wise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let value = self.map(a, |x| scale * x + shift);
        self.push(value, Op::Affine(a, scale), &[a])
    }

    /// Concatenation of vectors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(AutodiffError::EmptyInput("concat"));
        }
        let mut data = Vec::new();
        for &p in parts {
            self.vector_len("concat", p)?;
            data.extend_from_slice(&self.nodes[p.0].value.data);
        }
        Ok(self.push(Tensor::vector(data), Op::Concat(parts.to_vec()), parts))
    }

    fn accumulate(&self, op: &'static str, parts: &[Var]) -> Result<Tensor> {
        let first = *parts.first().ok_or(AutodiffError::EmptyInput(op))?;
        let mut acc = self.nodes[first.0].value.clone();
        for &p in &parts[1..] {
            self.same_shape(op, first, p)?;
            for (a, b) in acc.data.iter_mut().zip(&self.nodes[p.0].value.data) {
                *a += b;
            }
        }
        Ok(acc)
    }

    pub fn sum_vectors(&mut self, parts: &[Var]) -> Result<Var> {
        let value = self.accumulate("sum_vectors", parts)?;
        Ok(self.push(value, Op::SumVectors(parts.to_vec()), parts))
    }

    pub fn mean_vectors(&mut self, parts: &[Var]) -> Result<Var> {
        let mut value = self.accumulate("mean_vectors", parts)?;
        let n = parts.len() as f64;
        for x in &mut value.data {
            *x /= n;
        }
        Ok(self.push(value, Op::MeanVectors(parts.to_vec()), parts))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.nodes[a.0].value.data.iter().sum();
        self.push(Tensor::scalar(total), Op::SumElements(a), &[a])
    }

    /// `Σ weights[i] * a[i]` with constant weights, as a scalar.
    pub fn weighted_sum(&mut self, a: Var, weights: Vec<f64>) -> Result<Var> {
        let shape = self.shape(a);
        if weights.len() != shape.numel() {
            return Err(AutodiffError::ShapeMismatch {
                op: "weighted_sum",
                left: shape,
                right: Shape::Vector(weights.len()),
            });
        }
        let total = self.nodes[a.0]
            .value
            .data
            .iter()
            .zip(&weights)
            .map(|(x, w)| x * w)
            .sum();
        Ok(self.push(Tensor::scalar(total), Op::WeightedSum(a, weights), &[a]))
    }

    /// Row `index` of a matrix, as a vector (embedding lookup).
    pub fn row(&mut self, m: Var, index: usize) -> Result<Var> {
        let shape = self.shape(m);
        let Shape::Matrix(rows, cols) = shape else {
            return Err(AutodiffError::ShapeMismatch {
                op: "row",
                left: shape,
                right: Shape::Matrix(index + 1, 0),
            });
        };
        if index >= rows {
            return Err(AutodiffError::RowOutOfRange { index, shape });
        }
        let data = self.nodes[m.0].value.data[index * cols..(index + 1) * cols].to_vec();
        Ok(self.push(Tensor::vector(data), Op::Row(m, index), &[m]))
    }

    /// Operation with a caller-supplied forward value and reverse rule.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, backward: CustomBackward) -> Var {
        self.push(value, Op::Custom(inputs.to_vec(), backward), inputs)
    }

    /// Propagates `∂loss/∂node` back to every `requires_grad` leaf and adds
    /// it to that leaf's accumulator. Calling twice without
    /// [`Graph::zero_grad`] accumulates.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss);
        if !shape.is_scalar() {
            return Err(AutodiffError::NonScalarLoss(shape));
        }
        let mut adjoints: Vec<Option<Vec<f64>>> = Vec::with_capacity(loss.0 + 1);
        adjoints.resize_with(loss.0 + 1, || None);
        adjoints[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = adjoints[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                if node.requires_grad {
                    let node = &mut self.nodes[idx];
                    match &mut node.grad {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => node.grad = Some(g),
                    }
                }
                continue;
            }
            self.propagate(idx, &g, &mut adjoints);
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], adjoints: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let out = &nodes[idx].value.data;
        let mut send = |v: Var, contribution: Vec<f64>| {
            if !nodes[v.0].needs_grad {
                return;
            }
            match &mut adjoints[v.0] {
                Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(contribution),
            }
        };
        let wants = |v: Var| nodes[v.0].needs_grad;
        match &nodes[idx].op {
            Op::Leaf => {}
            Op::MatVec(m, v) => {
                let md = &nodes[m.0].value.data;
                let vd = &nodes[v.0].value.data;
                let cols = vd.len();
                if wants(*m) {
                    let mut gm = vec![0.0; md.len()];
                    for (r, gr) in g.iter().enumerate() {
                        if *gr != 0.0 {
                            for (dst, x) in gm[r * cols..(r + 1) * cols].iter_mut().zip(vd) {
                                *dst = gr * x;
                            }
                        }
                    }
                    send(*m, gm);
                }
                if wants(*v) {
                    let mut gv = vec![0.0; cols];
                    for (r, gr) in g.iter().enumerate() {
                        for (dst, w) in gv.iter_mut().zip(&md[r * cols..(r + 1) * cols]) {
                            *dst += gr * w;
                        }
                    }
                    send(*v, gv);
                }
            }
            Op::Add(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.iter().map(|x| -x).collect());
            }
            Op::Hadamard(a, b) => {
                let (ad, bd) = (&nodes[a.0].value.data, &nodes[b.0].value.data);
                if wants(*a) {
                    send(*a, g.iter().zip(bd).map(|(x, y)| x * y).collect());
                }
                if wants(*b) {
                    send(*b, g.iter().zip(ad).map(|(x, y)| x * y).collect());
                }
            }
            Op::Sigmoid(a) => {
                send(*a, g.iter().zip(out).map(|(x, s)| x * s * (1.0 - s)).collect());
            }
            Op::Tanh(a) => {
                send(*a, g.iter().zip(out).map(|(x, t)| x * (1.0 - t * t)).collect());
            }
            Op::Log(a) => {
                let ad = &nodes[a.0].value.data;
                send(*a, g.iter().zip(ad).map(|(x, y)| x / y).collect());
            }
            Op::Affine(a, scale) => {
                send(*a, g.iter().map(|x| x * scale).collect());
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = nodes[p.0].value.data.len();
                    send(*p, g[offset..offset + n].to_vec());
                    offset += n;
                }
            }
            Op::SumVectors(parts) => {
                for p in parts {
                    send(*p, g.to_vec());
                }
            }
            Op::MeanVectors(parts) => {
                let n = parts.len() as f64;
                let scaled: Vec<f64> = g.iter().map(|x| x / n).collect();
                for p in parts {
                    send(*p, scaled.clone());
                }
            }
            Op::SumElements(a) => {
                send(*a, vec![g[0]; nodes[a.0].value.data.len()]);
            }
            Op::WeightedSum(a, weights) => {
                send(*a, weights.iter().map(|w| w * g[0]).collect());
            }
            Op::Row(m, index) => {
                if let Shape::Matrix(_, cols) = nodes[m.0].value.shape {
                    let mut gm = vec![0.0; nodes[m.0].value.data.len()];
                    gm[index * cols..(index + 1) * cols].copy_from_slice(g);
                    send(*m, gm);
                }
            }
            Op::Custom(inputs, rule) => {
                let values: Vec<&Tensor> = inputs.iter().map(|v| &nodes[v.0].value).collect();
                let grads = rule(&values, &nodes[idx].value, g);
                for (v, gv) in inputs.iter().zip(grads) {
                    send(*v, gv);
                }
            }
        }
    }
}

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone)]
pub struct GradcheckReport {
    /// One entry per checked coordinate.
    pub entries: Vec<GradcheckEntry>,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct GradcheckEntry {
    pub tensor: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Denominator floor for relative errors. Central differences in double
/// precision carry roughly 1e-12 of absolute roundoff, so below this
/// magnitude a coordinate is judged on absolute error instead.
pub const GRADCHECK_DENOM_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(GRADCHECK_DENOM_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Single-tensor form of [`gradcheck_many`].
pub fn gradcheck<F>(f: F, x: &Tensor, eps: f64, tol: f64) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    gradcheck_many(|g, vars| f(g, vars[0]), std::slice::from_ref(x), eps, tol)
}

/// Checks `f`'s reverse-mode gradient with respect to every coordinate of
/// every input tensor against `(f(x+εe) − f(x−εe)) / 2ε`.
pub fn gradcheck_many<F>(f: F, inputs: &[Tensor], eps: f64, tol: f64) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |tensors: &[Tensor]| -> Result<f64> {
        let mut graph = Graph::new();
        let vars: Vec<Var> = tensors.iter().map(|t| graph.constant(t.clone())).collect();
        let out = f(&mut graph, &vars)?;
        let shape = graph.shape(out);
        graph
            .value(out)
            .item()
            .ok_or(AutodiffError::NonScalarLoss(shape))
    };

    let mut graph = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| graph.param(t.clone())).collect();
    let out = f(&mut graph, &vars)?;
    graph.backward(out)?;

    let mut entries = Vec::new();
    let mut probe = inputs.to_vec();
    for (t, var) in vars.iter().enumerate() {
        let analytic = graph
            .grad(*var)
            .unwrap_or_else(|| Tensor::zeros(inputs[t].shape()));
        for i in 0..inputs[t].len() {
            let orig = inputs[t].data[i];
            probe[t].data[i] = orig + eps;
            let plus = eval(&probe)?;
            probe[t].data[i] = orig - eps;
            let minus = eval(&probe)?;
            probe[t].data[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.data[i];
            if !(numeric.is_finite() && a.is_finite()) {
                return Err(AutodiffError::NonFinite {
                    tensor: t,
                    index: i,
                });
            }
            entries.push(GradcheckEntry {
                tensor: t,
                index: i,
                analytic: a,
                numeric,
                rel_err: relative_error(a, numeric),
            });
        }
    }
    let max_rel_err = entries.iter().map(|e| e.rel_err).fold(0.0, f64::max);
    let max_abs_err = entries
        .iter()
        .map(|e| (e.analytic - e.numeric).abs())
        .fold(0.0, f64::max);
    Ok(GradcheckReport {
        entries,
        max_rel_err,
        max_abs_err,
        tolerance: tol,
        passed: max_rel_err < tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor {
        let data = (0..shape.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![0.0; 5]));
        let s = g.sigmoid(x);
        assert_eq!(g.value(s).data(), &[0.5; 5]);
    }

    #[test]
    fn hadamard_with_ones_is_identity() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::vector(vec![1.5, -2.0, 0.25]));
        let ones = g.constant(Tensor::vector(vec![1.0; 3]));
        let h = g.hadamard(a, ones).unwrap();
        assert_eq!(g.value(h), g.value(a));
    }

    #[test]
    fn matvec_by_hand() {
        // [[1, 2], [3, 4]] · [1, 1] = [3, 7]
        let mut g = Graph::new();
        let m = g.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let v = g.constant(Tensor::vector(vec![1.0, 1.0]));
        let out = g.matvec(m, v).unwrap();
        assert_eq!(g.value(out).data(), &[3.0, 7.0]);
    }

    #[test]
    fn shape_errors_name_the_primitive() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::vector(vec![1.0; 3]));
        let b = g.constant(Tensor::vector(vec![1.0; 2]));
        let err = g.add(a, b).unwrap_err();
        assert_eq!(err.to_string(), "add: shape mismatch between [3] and [2]");
        let m = g.constant(Tensor::matrix(2, 2, vec![0.0; 4]).unwrap());
        let err = g.matvec(m, a).unwrap_err();
        assert!(err.to_string().starts_with("matvec"));
        assert!(matches!(g.hadamard(a, b), Err(AutodiffError::ShapeMismatch { op: "hadamard", .. })));
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::vector(vec![1.0, 0.0]));
        assert_eq!(
            g.log(a).unwrap_err(),
            AutodiffError::LogDomain {
                index: 1,
                value: 0.0
            }
        );
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut g = Graph::new();
        let v = g.param(Tensor::vector(vec![0.3, -1.0, 2.0]));
        let s = g.sum(v);
        g.backward(s).unwrap();
        assert_eq!(g.grad(v).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_sigmoid_at_zero() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(0.0));
        let s = g.sigmoid(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), Some(0.25));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let v = g.param(Tensor::vector(vec![1.0, 2.0]));
        assert_eq!(
            g.backward(v).unwrap_err(),
            AutodiffError::NonScalarLoss(Shape::Vector(2))
        );
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut g = Graph::new();
        let v = g.param(Tensor::vector(vec![1.0, 2.0]));
        let s = g.sum(v);
        g.backward(s).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(v).unwrap().data(), &[2.0, 2.0]);
        g.zero_grad();
        assert!(g.grad(v).is_none());
    }

    #[test]
    fn reused_tensor_sums_both_paths() {
        let x = vec![0.5, -1.25, 3.0];
        let mut g = Graph::new();
        let v = g.param(Tensor::vector(x.clone()));
        let sq = g.hadamard(v, v).unwrap();
        let s = g.sum(sq);
        g.backward(s).unwrap();
        let expected: Vec<f64> = x.iter().map(|a| 2.0 * a).collect();
        assert_eq!(g.grad(v).unwrap().data(), expected.as_slice());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let m = g.param(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let v = g.constant(Tensor::vector(vec![3.0, 4.0]));
        let out = g.matvec(m, v).unwrap();
        let s = g.sum(out);
        g.backward(s).unwrap();
        assert!(g.grad(v).is_none());
        assert_eq!(g.grad(m).unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn gradcheck_of_sum_is_exact() {
        // Dyadic inputs and step keep every probe exactly representable.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = (0..8)
            .map(|_| (rng.gen_range(-256..256) as f64) / 256.0)
            .collect();
        let x = Tensor::vector(data);
        let report = gradcheck(|g, v| Ok(g.sum(v)), &x, 1.0 / 1024.0, 1e-12).unwrap();
        assert_eq!(report.max_rel_err, 0.0);
        assert!(report.passed);
    }

    fn bce_of_sigmoid(g: &mut Graph, x: Var, y: &[f64]) -> Result<Var> {
        let n = y.len() as f64;
        let r = g.sigmoid(x);
        let log_r = g.log(r)?;
        let one_minus = g.affine(r, -1.0, 1.0);
        let log_1m = g.log(one_minus)?;
        let pos = g.weighted_sum(log_r, y.iter().map(|v| -v / n).collect())?;
        let neg = g.weighted_sum(log_1m, y.iter().map(|v| -(1.0 - v) / n).collect())?;
        g.add(pos, neg)
    }

    #[test]
    fn gradcheck_bce_sigmoid_14() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let x = random_tensor(&mut rng, Shape::Vector(14));
            let y: Vec<f64> = (0..14).map(|_| rng.gen_range(0..2) as f64).collect();
            let report = gradcheck(|g, v| bce_of_sigmoid(g, v, &y), &x, 1e-5, 1e-6).unwrap();
            assert!(report.passed, "max rel err {}", report.max_rel_err);
        }
    }

    #[test]
    fn gradcheck_catches_wrong_rule() {
        let x = Tensor::vector(vec![0.3, -0.7, 1.1]);
        let report = gradcheck(
            |g, v| {
                let value = g.value(v).clone();
                let sin = Tensor::vector(value.data().iter().map(|a| a.sin()).collect());
                // Deliberately wrong: derivative of sin taken as sin.
                let s = g.custom(
                    &[v],
                    sin,
                    Box::new(|inputs, _, g| {
                        vec![inputs[0].data().iter().zip(g).map(|(x, g)| g * x.sin()).collect()]
                    }),
                );
                Ok(g.sum(s))
            },
            &x,
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(!report.passed);
    }

    #[test]
    fn gradcheck_reports_non_finite() {
        let x = Tensor::vector(vec![1e-6]);
        let err = gradcheck(
            |g, v| {
                let inv = g.custom(
                    &[v],
                    Tensor::scalar(1.0 / g.value(v).data()[0].abs().min(0.0)),
                    Box::new(|_, _, g| vec![g.to_vec()]),
                );
                Ok(inv)
            },
            &x,
            1e-5,
            1e-6,
        )
        .unwrap_err();
        assert!(matches!(err, AutodiffError::NonFinite { .. }));
    }

    type Prim = fn(&mut Graph, Var, Var) -> Result<Var>;

    fn primitives() -> Vec<(&'static str, Shape, Shape, Prim)> {
        vec![
            ("matvec", Shape::Matrix(3, 4), Shape::Vector(4), |g, a, b| {
                let o = g.matvec(a, b)?;
                let t = g.tanh(o);
                Ok(g.sum(t))
            }),
            ("add", Shape::Vector(5), Shape::Vector(5), |g, a, b| {
                let o = g.add(a, b)?;
                let t = g.sigmoid(o);
                g.weighted_sum(t, vec![0.3, -1.0, 2.0, 0.5, 1.5])
            }),
            ("sub", Shape::Vector(4), Shape::Vector(4), |g, a, b| {
                let o = g.sub(a, b)?;
                let t = g.tanh(o);
                g.weighted_sum(t, vec![1.0, -0.5, 0.25, 2.0])
            }),
            ("hadamard", Shape::Vector(5), Shape::Vector(5), |g, a, b| {
                let o = g.hadamard(a, b)?;
                let t = g.tanh(o);
                Ok(g.sum(t))
            }),
            ("sigmoid_tanh", Shape::Vector(3), Shape::Vector(3), |g, a, b| {
                let s = g.sigmoid(a);
                let t = g.tanh(b);
                let p = g.hadamard(s, t)?;
                Ok(g.sum(p))
            }),
            ("log_affine", Shape::Vector(4), Shape::Vector(4), |g, a, b| {
                let s = g.sigmoid(a);
                let one_minus = g.affine(s, -1.0, 1.0);
                let l = g.log(one_minus)?;
                let m = g.hadamard(l, b)?;
                Ok(g.sum(m))
            }),
            ("concat", Shape::Vector(2), Shape::Vector(3), |g, a, b| {
                let c = g.concat(&[a, b, a])?;
                let t = g.tanh(c);
                g.weighted_sum(t, vec![1.0, 2.0, 3.0, -1.0, -2.0, 0.5, 0.7])
            }),
            ("sum_mean", Shape::Vector(3), Shape::Vector(3), |g, a, b| {
                let s = g.sum_vectors(&[a, b, a])?;
                let m = g.mean_vectors(&[s, b])?;
                let t = g.sigmoid(m);
                g.weighted_sum(t, vec![1.0, -3.0, 0.5])
            }),
            ("row", Shape::Matrix(4, 3), Shape::Vector(3), |g, a, b| {
                let r = g.row(a, 2)?;
                let h = g.hadamard(r, b)?;
                let t = g.tanh(h);
                Ok(g.sum(t))
            }),
        ]
    }

    #[test]
    fn every_primitive_passes_gradcheck_over_seeds() {
        for (name, sa, sb, f) in primitives() {
            for seed in 0..100 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let inputs = [random_tensor(&mut rng, sa), random_tensor(&mut rng, sb)];
                let report =
                    gradcheck_many(|g, v| f(g, v[0], v[1]), &inputs, 1e-5, 1e-6).unwrap();
                assert!(
                    report.passed,
                    "{name} seed {seed}: max rel err {}",
                    report.max_rel_err
                );
            }
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let mut g = Graph::new();
            let m = g.param(random_tensor(&mut rng, Shape::Matrix(6, 5)));
            let v = g.constant(random_tensor(&mut rng, Shape::Vector(5)));
            let o = g.matvec(m, v).unwrap();
            let s = g.sigmoid(o);
            g.value(s).clone()
        };
        let (a, b) = (run(), run());
        let bits = |t: &Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }
}
