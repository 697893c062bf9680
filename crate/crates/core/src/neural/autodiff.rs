//! Tape-based reverse-mode automatic differentiation over small dense tensors.
//!
//! A [`Graph`] records every operation as a node. [`Graph::backward`] walks
//! the tape in reverse from a single-element output. Elementwise binary ops
//! accept equal shapes or broadcast a single-element operand.

use thiserror::Error;

use crate::distributions::special::{ln_norm_interval, ln_norm_pdf, norm_cdf, norm_pdf};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("tensor rank {0} exceeds 3")]
    RankTooHigh(usize),
    #[error("{0}")]
    Invalid(String),
}

fn mismatch(op: &'static str, l: &[usize], r: &[usize]) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        left: l.to_vec(),
        right: r.to_vec(),
    }
}

/// Dense row-major tensor of rank 0 to 3.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, AutodiffError> {
        if shape.len() > 3 {
            return Err(AutodiffError::RankTooHigh(shape.len()));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(AutodiffError::Invalid(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(x: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![x],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on a tensor of {} elements", self.data.len());
        self.data[0]
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Gather(Var, Vec<usize>),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LogSumExp(Var),
    Sum(Var),
    NormalCdf(Var),
    LnNormPdf(Var),
    LnNormInterval(Var, Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients of one output with respect to every node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient with respect to `v`, or `None` when the output does not depend on it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0)?.as_deref()
    }

    /// `(parameter id, gradient)` for every parameter the output depends on.
    pub fn params(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.params
            .iter()
            .filter_map(|&(id, node)| self.grads[node].as_deref().map(|g| (id, g)))
    }
}

/// A tape of tensor operations.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
    params: Vec<(usize, usize)>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn lse(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    fn data(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value.data
    }

    /// A constant input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.constant(Tensor::scalar(x))
    }

    /// A trainable parameter identified by `id`; repeated calls with the same
    /// id return the same node.
    pub fn param(&mut self, id: usize, value: &Tensor) -> Var {
        if let Some(Some(v)) = self.param_nodes.get(id) {
            return *v;
        }
        let v = self.push(value.clone(), Op::Param);
        if self.param_nodes.len() <= id {
            self.param_nodes.resize(id + 1, None);
        }
        self.param_nodes[id] = Some(v);
        self.params.push((id, v.0));
        v
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (da, db) = (self.data(a), self.data(b));
        let (shape, data): (Vec<usize>, Vec<f64>) = if sa == sb {
            (sa, da.iter().zip(db).map(|(x, y)| f(*x, *y)).collect())
        } else if db.len() == 1 {
            (sa, da.iter().map(|x| f(*x, db[0])).collect())
        } else if da.len() == 1 {
            (sb, db.iter().map(|y| f(da[0], *y)).collect())
        } else {
            return Err(mismatch(name, &sa, &sb));
        };
        Ok(self.push(Tensor { shape, data }, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// `ln(Φ(b) − Φ(a))` elementwise.
    pub fn ln_norm_interval(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary("ln_norm_interval", a, b, ln_norm_interval, Op::LnNormInterval(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let value = Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().map(|x| f(*x)).collect(),
        };
        self.push(value, op)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, |x| -x, Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn normal_cdf(&mut self, a: Var) -> Var {
        self.unary(a, norm_cdf, Op::NormalCdf(a))
    }

    /// Standard normal log density elementwise.
    pub fn ln_norm_pdf(&mut self, a: Var) -> Var {
        self.unary(a, ln_norm_pdf, Op::LnNormPdf(a))
    }

    /// `[m, k] × [k, n] → [m, n]` or `[m, k] × [k] → [m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || !(sb.len() == 1 || sb.len() == 2) || sa[1] != sb[0] {
            return Err(mismatch("matmul", &sa, &sb));
        }
        let (m, k) = (sa[0], sa[1]);
        let n = if sb.len() == 2 { sb[1] } else { 1 };
        let (da, db) = (self.data(a), self.data(b));
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &da[i * k..(i + 1) * k];
            for (p, &aip) in row.iter().enumerate() {
                if aip == 0.0 {
                    continue;
                }
                let brow = &db[p * n..(p + 1) * n];
                for (o, &bpj) in out[i * n..(i + 1) * n].iter_mut().zip(brow) {
                    *o += aip * bpj;
                }
            }
        }
        let shape = if sb.len() == 2 { vec![m, n] } else { vec![m] };
        Ok(self.push(Tensor { shape, data: out }, Op::MatMul(a, b)))
    }

    fn require_vector(&self, op: &'static str, a: Var) -> Result<usize, AutodiffError> {
        let s = self.shape(a);
        match s.len() {
            0 => Ok(1),
            1 => Ok(s[0]),
            _ => Err(mismatch(op, s, &[])),
        }
    }

    /// Concatenates rank-0 or rank-1 operands into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let mut data = Vec::new();
        for &p in parts {
            self.require_vector("concat", p)?;
            data.extend_from_slice(self.data(p));
        }
        Ok(self.push(Tensor::vector(data), Op::Concat(parts.to_vec())))
    }

    /// Elements `start..start + len` of a vector.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let n = self.require_vector("slice", a)?;
        if start + len > n {
            return Err(mismatch("slice", &[n], &[start, len]));
        }
        let data = self.data(a)[start..start + len].to_vec();
        Ok(self.push(Tensor::vector(data), Op::Slice(a, start)))
    }

    /// Elements at `indices` of a vector, in order.
    pub fn gather(&mut self, a: Var, indices: &[usize]) -> Result<Var, AutodiffError> {
        let n = self.require_vector("gather", a)?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(mismatch("gather", &[n], &[bad]));
        }
        let d = self.data(a);
        let data = indices.iter().map(|&i| d[i]).collect();
        Ok(self.push(Tensor::vector(data), Op::Gather(a, indices.to_vec())))
    }

    /// Element `i` as a scalar.
    pub fn index(&mut self, a: Var, i: usize) -> Result<Var, AutodiffError> {
        let n = self.value(a).len();
        if i >= n {
            return Err(mismatch("index", &[n], &[i]));
        }
        let g = self.gather_flat(a, i);
        Ok(g)
    }

    fn gather_flat(&mut self, a: Var, i: usize) -> Var {
        let x = self.data(a)[i];
        self.push(Tensor::scalar(x), Op::Gather(a, vec![i]))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.require_vector("softmax", a)?;
        let d = self.data(a);
        let l = lse(d);
        let data = d.iter().map(|x| (x - l).exp()).collect();
        Ok(self.push(Tensor::vector(data), Op::Softmax(a)))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.require_vector("log_softmax", a)?;
        let d = self.data(a);
        let l = lse(d);
        let data = d.iter().map(|x| x - l).collect();
        Ok(self.push(Tensor::vector(data), Op::LogSoftmax(a)))
    }

    pub fn log_sum_exp(&mut self, a: Var) -> Var {
        let l = lse(self.data(a));
        self.push(Tensor::scalar(l), Op::LogSumExp(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Reverse pass from a single-element `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients, AutodiffError> {
        if self.value(output).len() != 1 {
            return Err(AutodiffError::Invalid(format!(
                "backward needs a single-element output, got shape {:?}",
                self.shape(output)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![1.0]);
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = &node.value.data;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let n = self.nodes[v.0].value.len();
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
            f(slot);
        };
        // Broadcast-aware accumulation of an elementwise partial.
        let elementwise = |v: Var, d: &dyn Fn(usize) -> f64, acc: &mut dyn FnMut(Var, &mut dyn FnMut(&mut [f64]))| {
            let n = self.nodes[v.0].value.len();
            acc(v, &mut |s: &mut [f64]| {
                if n == g.len() {
                    for (k, sk) in s.iter_mut().enumerate() {
                        *sk += g[k] * d(k);
                    }
                } else {
                    s[0] += (0..g.len()).map(|k| g[k] * d(k)).sum::<f64>();
                }
            });
        };
        let at = |v: Var, k: usize| {
            let d = &self.nodes[v.0].value.data;
            if d.len() == 1 {
                d[0]
            } else {
                d[k]
            }
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            &Op::Add(a, b) => {
                elementwise(a, &|_| 1.0, &mut acc);
                elementwise(b, &|_| 1.0, &mut acc);
            }
            &Op::Sub(a, b) => {
                elementwise(a, &|_| 1.0, &mut acc);
                elementwise(b, &|_| -1.0, &mut acc);
            }
            &Op::Mul(a, b) => {
                elementwise(a, &|k| at(b, k), &mut acc);
                elementwise(b, &|k| at(a, k), &mut acc);
            }
            &Op::Div(a, b) => {
                elementwise(a, &|k| 1.0 / at(b, k), &mut acc);
                elementwise(b, &|k| -at(a, k) / (at(b, k) * at(b, k)), &mut acc);
            }
            &Op::LnNormInterval(a, b) => {
                // d/da = −φ(a)/Z, d/db = φ(b)/Z with Z = exp(y).
                elementwise(a, &|k| -(ln_norm_pdf(at(a, k)) - y[k]).exp(), &mut acc);
                elementwise(b, &|k| (ln_norm_pdf(at(b, k)) - y[k]).exp(), &mut acc);
            }
            &Op::Neg(a) => elementwise(a, &|_| -1.0, &mut acc),
            &Op::Scale(a, c) => elementwise(a, &|_| c, &mut acc),
            &Op::AddScalar(a) => elementwise(a, &|_| 1.0, &mut acc),
            &Op::Tanh(a) => elementwise(a, &|k| 1.0 - y[k] * y[k], &mut acc),
            &Op::Sigmoid(a) => elementwise(a, &|k| y[k] * (1.0 - y[k]), &mut acc),
            &Op::Softplus(a) => elementwise(a, &|k| sigmoid(at(a, k)), &mut acc),
            &Op::Relu(a) => elementwise(a, &|k| (at(a, k) > 0.0) as u8 as f64, &mut acc),
            &Op::Exp(a) => elementwise(a, &|k| y[k], &mut acc),
            &Op::Log(a) => elementwise(a, &|k| 1.0 / at(a, k), &mut acc),
            &Op::Square(a) => elementwise(a, &|k| 2.0 * at(a, k), &mut acc),
            &Op::NormalCdf(a) => elementwise(a, &|k| norm_pdf(at(a, k)), &mut acc),
            &Op::LnNormPdf(a) => elementwise(a, &|k| -at(a, k), &mut acc),
            &Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(a), self.shape(b));
                let (m, k) = (sa[0], sa[1]);
                let n = if sb.len() == 2 { sb[1] } else { 1 };
                let (da, db) = (self.data(a), self.data(b));
                acc(a, &mut |ga: &mut [f64]| {
                    for r in 0..m {
                        let gr = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let brow = &db[p * n..(p + 1) * n];
                            ga[r * k + p] += gr.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                acc(b, &mut |gb: &mut [f64]| {
                    for r in 0..m {
                        let gr = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let arp = da[r * k + p];
                            if arp == 0.0 {
                                continue;
                            }
                            for (o, gv) in gb[p * n..(p + 1) * n].iter_mut().zip(gr) {
                                *o += arp * gv;
                            }
                        }
                    }
                });
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.nodes[p.0].value.len();
                    let seg = &g[off..off + n];
                    acc(p, &mut |s: &mut [f64]| {
                        for (x, y) in s.iter_mut().zip(seg) {
                            *x += y;
                        }
                    });
                    off += n;
                }
            }
            &Op::Slice(a, start) => acc(a, &mut |s: &mut [f64]| {
                for (x, y) in s[start..start + g.len()].iter_mut().zip(g) {
                    *x += y;
                }
            }),
            Op::Gather(a, idx) => acc(*a, &mut |s: &mut [f64]| {
                for (&i, y) in idx.iter().zip(g) {
                    s[i] += y;
                }
            }),
            &Op::Softmax(a) => {
                let dot: f64 = g.iter().zip(y).map(|(x, y)| x * y).sum();
                acc(a, &mut |s: &mut [f64]| {
                    for (k, sk) in s.iter_mut().enumerate() {
                        *sk += y[k] * (g[k] - dot);
                    }
                });
            }
            &Op::LogSoftmax(a) => {
                let total: f64 = g.iter().sum();
                acc(a, &mut |s: &mut [f64]| {
                    for (k, sk) in s.iter_mut().enumerate() {
                        *sk += g[k] - y[k].exp() * total;
                    }
                });
            }
            &Op::LogSumExp(a) => {
                let l = y[0];
                if l == f64::NEG_INFINITY {
                    return;
                }
                let d = self.data(a);
                acc(a, &mut |s: &mut [f64]| {
                    for (sk, x) in s.iter_mut().zip(d) {
                        *sk += g[0] * (x - l).exp();
                    }
                });
            }
            &Op::Sum(a) => acc(a, &mut |s: &mut [f64]| {
                for sk in s.iter_mut() {
                    *sk += g[0];
                }
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let x = g.scalar(3.0);
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[6.0]);
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![1000.0, -3.0, 2.5, 999.0]));
        let s = g.softmax(x).unwrap();
        let total: f64 = g.value(s).data().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::vector(vec![1.0, 2.0]));
        let b = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        assert!(matches!(g.add(a, b), Err(AutodiffError::ShapeMismatch { .. })));
        assert!(g.matmul(a, b).is_err());
        assert!(g.slice(a, 1, 2).is_err());
        assert!(Tensor::new(vec![1, 1, 1, 1], vec![0.0]).is_err());
    }

    #[test]
    fn broadcast_gradient_sums() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let c = g.scalar(2.0);
        let m = g.mul(a, c).unwrap();
        let s = g.sum(m);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(c).unwrap(), &[6.0]);
        assert_eq!(grads.get(a).unwrap(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn params_are_shared() {
        let mut g = Graph::new();
        let w = Tensor::scalar(1.5);
        let a = g.param(4, &w);
        let b = g.param(4, &w);
        assert_eq!(a, b);
        let y = g.mul(a, b).unwrap();
        let grads = g.backward(y).unwrap();
        let p: Vec<_> = grads.params().collect();
        assert_eq!(p, vec![(4, &[3.0][..])]);
    }
}
