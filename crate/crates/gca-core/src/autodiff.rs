//! Reverse-mode automatic differentiation over a fixed primitive set.
//!
//! The tape covers exactly the operations the training objectives need:
//! affine maps, ReLU / leaky ReLU, elementwise product, exp, log, row/full
//! reductions, a stabilized log-mean-exp and row gathering for per-sample
//! parameter lookup. There is no general graph compiler.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    /// x (m×d) + broadcast row b (1×d)
    AddRowBroadcast(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Scale(NodeId, f64),
    Hadamard(NodeId, NodeId),
    Relu(NodeId),
    LeakyRelu(NodeId, f64),
    Exp(NodeId),
    Log(NodeId),
    /// m×d -> m×1
    RowSum(NodeId),
    /// -> 1×1
    Sum(NodeId),
    /// -> 1×1
    Mean(NodeId),
    /// -> 1×1, max-subtraction stabilized
    LogMeanExp(NodeId),
    /// src (K×d), indices of length m -> m×d
    GatherRows(NodeId, Vec<usize>),
}

struct Node {
    op: Op,
    value: Matrix,
    requires_grad: bool,
    name: String,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        debug_assert_eq!(v.len(), 1, "scalar() on non-scalar node");
        v.data()[0]
    }

    pub fn leaf(&mut self, value: Matrix, name: &str, requires_grad: bool) -> Result<NodeId> {
        self.push(Op::Leaf, value, requires_grad, name)
    }

    pub fn constant(&mut self, value: Matrix, name: &str) -> Result<NodeId> {
        self.leaf(value, name, false)
    }

    fn push(&mut self, op: Op, value: Matrix, requires_grad: bool, name: &str) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite { name: name.into() });
        }
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
            name: name.into(),
        });
        Ok(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id].requires_grad
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(self.shape_err("matmul", a, b));
        }
        let v = va.matmul(vb);
        self.push(Op::MatMul(a, b), v, self.rg(a) || self.rg(b), "matmul")
    }

    pub fn add_row_broadcast(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (vx, vb) = (self.value(x), self.value(bias));
        if vb.rows() != 1 || vb.cols() != vx.cols() {
            return Err(self.shape_err("add_row_broadcast", x, bias));
        }
        let mut v = vx.clone();
        let b = vb.row(0).to_vec();
        for i in 0..v.rows() {
            for (o, bv) in v.row_mut(i).iter_mut().zip(&b) {
                *o += bv;
            }
        }
        self.push(
            Op::AddRowBroadcast(x, bias),
            v,
            self.rg(x) || self.rg(bias),
            "add_row_broadcast",
        )
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if !self.value(a).same_shape(self.value(b)) {
            return Err(self.shape_err("add", a, b));
        }
        let v = self.value(a).add(self.value(b));
        self.push(Op::Add(a, b), v, self.rg(a) || self.rg(b), "add")
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if !self.value(a).same_shape(self.value(b)) {
            return Err(self.shape_err("sub", a, b));
        }
        let v = self.value(a).sub(self.value(b));
        self.push(Op::Sub(a, b), v, self.rg(a) || self.rg(b), "sub")
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let v = self.value(a).scale(c);
        self.push(Op::Scale(a, c), v, self.rg(a), "scale")
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if !self.value(a).same_shape(self.value(b)) {
            return Err(self.shape_err("hadamard", a, b));
        }
        let v = self.value(a).hadamard(self.value(b));
        self.push(Op::Hadamard(a, b), v, self.rg(a) || self.rg(b), "hadamard")
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), v, self.rg(a), "relu")
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> Result<NodeId> {
        let v = self.value(a).map(|x| if x >= 0.0 { x } else { slope * x });
        self.push(Op::LeakyRelu(a, slope), v, self.rg(a), "leaky_relu")
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), v, self.rg(a), "exp")
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(f64::ln);
        self.push(Op::Log(a), v, self.rg(a), "log")
    }

    pub fn row_sum(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        let mut v = Matrix::zeros(va.rows(), 1);
        for i in 0..va.rows() {
            v[(i, 0)] = va.row(i).iter().sum();
        }
        self.push(Op::RowSum(a), v, self.rg(a), "row_sum")
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let v = Matrix::from_vec(1, 1, vec![self.value(a).sum()]).unwrap();
        self.push(Op::Sum(a), v, self.rg(a), "sum")
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(Error::InvalidConfig("mean of empty matrix".into()));
        }
        let v = Matrix::from_vec(1, 1, vec![self.value(a).sum() / n as f64]).unwrap();
        self.push(Op::Mean(a), v, self.rg(a), "mean")
    }

    pub fn log_mean_exp(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        if va.is_empty() {
            return Err(Error::InvalidConfig("log_mean_exp of empty matrix".into()));
        }
        let v = Matrix::from_vec(1, 1, vec![log_mean_exp(va.data())]).unwrap();
        self.push(Op::LogMeanExp(a), v, self.rg(a), "log_mean_exp")
    }

    pub fn gather_rows(&mut self, src: NodeId, indices: &[usize]) -> Result<NodeId> {
        let vs = self.value(src);
        if let Some(&bad) = indices.iter().find(|&&i| i >= vs.rows()) {
            return Err(Error::StateOutOfSupport {
                state: bad,
                max: vs.rows(),
            });
        }
        let v = vs.select_rows(indices);
        self.push(Op::GatherRows(src, indices.to_vec()), v, self.rg(src), "gather_rows")
    }

    fn shape_err(&self, op: &str, a: NodeId, b: NodeId) -> Error {
        let (va, vb) = (self.value(a), self.value(b));
        Error::ShapeMismatch {
            context: format!("{op}({}, {})", self.nodes[a].name, self.nodes[b].name),
            expected: format!("compatible with {}x{}", va.rows(), va.cols()),
            got: format!("{}x{}", vb.rows(), vb.cols()),
        }
    }

    /// Adjoints of every grad-requiring node with respect to the 1×1 `root`.
    /// Entry `i` of the result is the gradient of node `i`, or `None` if the
    /// node does not require gradients or is unreachable from `root`.
    pub fn backward(&self, root: NodeId) -> Result<Vec<Option<Matrix>>> {
        let rv = self.value(root);
        if rv.len() != 1 {
            return Err(Error::ShapeMismatch {
                context: "backward root".into(),
                expected: "1x1 scalar".into(),
                got: format!("{}x{}", rv.rows(), rv.cols()),
            });
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[root] = Some(Matrix::from_vec(1, 1, vec![1.0]).unwrap());

        for id in (0..=root).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            if !self.nodes[id].requires_grad {
                continue;
            }
            self.accumulate_parents(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        // Drop adjoints of non-leaf scratch to keep only meaningful outputs.
        for (id, slot) in grads.iter_mut().enumerate() {
            if !self.nodes[id].requires_grad {
                *slot = None;
            }
        }
        Ok(grads)
    }

    fn accumulate_parents(&self, id: NodeId, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let add_to = |grads: &mut [Option<Matrix>], target: NodeId, inc: Matrix| {
            if !self.nodes[target].requires_grad {
                return;
            }
            match &mut grads[target] {
                Some(acc) => *acc = acc.add(&inc),
                slot @ None => *slot = Some(inc),
            }
        };
        let val = |n: NodeId| self.value(n);
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                add_to(grads, *a, g.matmul(&val(*b).transpose()));
                add_to(grads, *b, val(*a).transpose().matmul(g));
            }
            Op::AddRowBroadcast(x, bias) => {
                add_to(grads, *x, g.clone());
                let mut gb = Matrix::zeros(1, g.cols());
                for i in 0..g.rows() {
                    for (acc, &v) in gb.row_mut(0).iter_mut().zip(g.row(i)) {
                        *acc += v;
                    }
                }
                add_to(grads, *bias, gb);
            }
            Op::Add(a, b) => {
                add_to(grads, *a, g.clone());
                add_to(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                add_to(grads, *a, g.clone());
                add_to(grads, *b, g.scale(-1.0));
            }
            Op::Scale(a, c) => add_to(grads, *a, g.scale(*c)),
            Op::Hadamard(a, b) => {
                add_to(grads, *a, g.hadamard(val(*b)));
                add_to(grads, *b, g.hadamard(val(*a)));
            }
            Op::Relu(a) => {
                let mask = val(*a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                add_to(grads, *a, g.hadamard(&mask));
            }
            Op::LeakyRelu(a, slope) => {
                let s = *slope;
                let mask = val(*a).map(|x| if x >= 0.0 { 1.0 } else { s });
                add_to(grads, *a, g.hadamard(&mask));
            }
            Op::Exp(a) => add_to(grads, *a, g.hadamard(val(id))),
            Op::Log(a) => {
                let inv = val(*a).map(|x| 1.0 / x);
                add_to(grads, *a, g.hadamard(&inv));
            }
            Op::RowSum(a) => {
                let va = val(*a);
                let mut ga = Matrix::zeros(va.rows(), va.cols());
                for i in 0..va.rows() {
                    let gv = g[(i, 0)];
                    for o in ga.row_mut(i) {
                        *o = gv;
                    }
                }
                add_to(grads, *a, ga);
            }
            Op::Sum(a) => {
                let va = val(*a);
                let gv = g.data()[0];
                add_to(grads, *a, Matrix::zeros(va.rows(), va.cols()).map(|_| gv));
            }
            Op::Mean(a) => {
                let va = val(*a);
                let gv = g.data()[0] / va.len() as f64;
                add_to(grads, *a, Matrix::zeros(va.rows(), va.cols()).map(|_| gv));
            }
            Op::LogMeanExp(a) => {
                let va = val(*a);
                let max = va.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let denom: f64 = va.data().iter().map(|&x| (x - max).exp()).sum();
                let gv = g.data()[0];
                let ga = va.map(|x| gv * (x - max).exp() / denom);
                add_to(grads, *a, ga);
            }
            Op::GatherRows(src, indices) => {
                let vs = val(*src);
                let mut gs = Matrix::zeros(vs.rows(), vs.cols());
                for (r, &idx) in indices.iter().enumerate() {
                    for (acc, &v) in gs.row_mut(idx).iter_mut().zip(g.row(r)) {
                        *acc += v;
                    }
                }
                add_to(grads, *src, gs);
            }
        }
    }
}

/// `log((1/n) Σ exp(x_i))` with max subtraction.
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + (sum / xs.len() as f64).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Matrix {
        Matrix::from_vec(1, 1, vec![v]).unwrap()
    }

    #[test]
    fn constant_has_zero_grad() {
        let mut t = Tape::new();
        let p = t.leaf(scalar(3.0), "p", true).unwrap();
        let c = t.constant(scalar(5.0), "c").unwrap();
        let prod = t.hadamard(p, c).unwrap();
        let zero = t.scale(prod, 0.0).unwrap();
        let grads = t.backward(zero).unwrap();
        assert_eq!(grads[p].as_ref().unwrap().data(), &[0.0]);
    }

    #[test]
    fn linear_grad_is_coefficient() {
        let mut t = Tape::new();
        let p = t
            .leaf(Matrix::from_vec(1, 3, vec![1.0, -2.0, 0.5]).unwrap(), "p", true)
            .unwrap();
        let c = t
            .constant(Matrix::from_vec(1, 3, vec![2.0, 3.0, -4.0]).unwrap(), "c")
            .unwrap();
        let prod = t.hadamard(p, c).unwrap();
        let s = t.sum(prod).unwrap();
        let grads = t.backward(s).unwrap();
        assert_eq!(grads[p].as_ref().unwrap().data(), &[2.0, 3.0, -4.0]);
    }

    #[test]
    fn log_mean_exp_stable_for_large_inputs() {
        let v = log_mean_exp(&[1000.0, 1000.0]);
        assert!((v - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn log_mean_exp_grad_is_softmax() {
        let mut t = Tape::new();
        let p = t
            .leaf(Matrix::from_vec(1, 2, vec![1.0, 2.0]).unwrap(), "p", true)
            .unwrap();
        let l = t.log_mean_exp(p).unwrap();
        let grads = t.backward(l).unwrap();
        let g = grads[p].as_ref().unwrap();
        let z = 1.0f64.exp() + 2.0f64.exp();
        assert!((g.data()[0] - 1.0f64.exp() / z).abs() < 1e-12);
        assert!((g.data()[1] - 2.0f64.exp() / z).abs() < 1e-12);
    }

    #[test]
    fn non_finite_intermediate_is_reported() {
        let mut t = Tape::new();
        let p = t.leaf(scalar(-1.0), "p", true).unwrap();
        let err = t.log(p).unwrap_err();
        match err {
            Error::NonFinite { name } => assert_eq!(name, "log"),
            other => panic!("unexpected error {other:?}"),
        }
    }
}
