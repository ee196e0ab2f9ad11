//! Scalar reverse-mode tape (a Wengert list).
//!
//! Every node stores its value and the partial derivatives with respect
//! to its parents. Fused operations (dot products, softmax, the mixture
//! losses) record one node with many parents and hand-derived partials,
//! so a full training step stays at a few million edges.

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation tag, kept for error reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale,
    Exp,
    Ln,
    Sqrt,
    Relu,
    Elu,
    Tanh,
    Sigmoid,
    Sum,
    Dot,
    Custom(&'static str),
}

#[derive(Debug, Clone, Copy)]
struct Node {
    value: f64,
    start: usize,
    len: usize,
    op: Op,
}

/// Recorded computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    edges: Vec<(usize, f64)>,
}

/// Adjoints of every node after a backward sweep.
#[derive(Debug, Clone)]
pub struct Gradients {
    adjoints: Vec<f64>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> f64 {
        self.adjoints[v.0]
    }

    pub fn collect(&self, vars: &[Var]) -> Vec<f64> {
        vars.iter().map(|v| self.adjoints[v.0]).collect()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drops all nodes but keeps the allocations.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.edges.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn value(&self, v: Var) -> f64 {
        self.nodes[v.0].value
    }

    pub fn values(&self, vs: &[Var]) -> Vec<f64> {
        vs.iter().map(|v| self.value(*v)).collect()
    }

    fn push(&mut self, value: f64, op: Op, parents: impl IntoIterator<Item = (usize, f64)>) -> Var {
        let start = self.edges.len();
        self.edges.extend(parents);
        let len = self.edges.len() - start;
        self.nodes.push(Node { value, start, len, op });
        Var(self.nodes.len() - 1)
    }

    /// Independent variable (or constant, if its gradient is never read).
    pub fn leaf(&mut self, value: f64) -> Var {
        self.push(value, Op::Leaf, [])
    }

    pub fn leaves(&mut self, values: &[f64]) -> Vec<Var> {
        values.iter().map(|x| self.leaf(*x)).collect()
    }

    /// Node with caller-supplied value and partials `∂value/∂parent`.
    pub fn custom(&mut self, name: &'static str, value: f64, partials: &[(Var, f64)]) -> Var {
        self.push(value, Op::Custom(name), partials.iter().map(|(v, d)| (v.0, *d)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add, [(a.0, 1.0), (b.0, 1.0)])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub, [(a.0, 1.0), (b.0, -1.0)])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        self.push(x * y, Op::Mul, [(a.0, y), (b.0, x)])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        self.push(x / y, Op::Div, [(a.0, 1.0 / y), (b.0, -x / (y * y))])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let x = self.value(a);
        self.push(-x, Op::Neg, [(a.0, -1.0)])
    }

    /// `c · a` for a constant `c`.
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let x = self.value(a);
        self.push(c * x, Op::Scale, [(a.0, c)])
    }

    /// `a + c` for a constant `c`.
    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let x = self.value(a);
        self.push(x + c, Op::Add, [(a.0, 1.0)])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let y = self.value(a).exp();
        self.push(y, Op::Exp, [(a.0, y)])
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let x = self.value(a);
        self.push(x.ln(), Op::Ln, [(a.0, 1.0 / x)])
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let y = self.value(a).sqrt();
        self.push(y, Op::Sqrt, [(a.0, 0.5 / y)])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        if x > 0.0 {
            self.push(x, Op::Relu, [(a.0, 1.0)])
        } else {
            self.push(0.0, Op::Relu, [(a.0, 0.0)])
        }
    }

    /// ELU with unit scale.
    pub fn elu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        if x > 0.0 {
            self.push(x, Op::Elu, [(a.0, 1.0)])
        } else {
            let e = x.exp();
            self.push(e - 1.0, Op::Elu, [(a.0, e)])
        }
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let y = self.value(a).tanh();
        self.push(y, Op::Tanh, [(a.0, 1.0 - y * y)])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let y = sigmoid(self.value(a));
        self.push(y, Op::Sigmoid, [(a.0, y * (1.0 - y))])
    }

    pub fn sum(&mut self, xs: &[Var]) -> Var {
        let v = xs.iter().map(|x| self.value(*x)).sum();
        self.push(v, Op::Sum, xs.iter().map(|x| (x.0, 1.0)))
    }

    /// `Σ w_i x_i + b` with both operands on the tape.
    pub fn dot(&mut self, w: &[Var], x: &[Var], b: Var) -> Var {
        debug_assert_eq!(w.len(), x.len());
        let mut v = 0.0;
        for (wi, xi) in w.iter().zip(x) {
            v += self.value(*wi) * self.value(*xi);
        }
        v += self.value(b);
        let start = self.edges.len();
        for (wi, xi) in w.iter().zip(x) {
            let (wv, xv) = (self.nodes[wi.0].value, self.nodes[xi.0].value);
            self.edges.push((wi.0, xv));
            self.edges.push((xi.0, wv));
        }
        self.edges.push((b.0, 1.0));
        let len = self.edges.len() - start;
        self.nodes.push(Node { value: v, start, len, op: Op::Dot });
        Var(self.nodes.len() - 1)
    }

    /// `Σ w_i x_i + b` where the inputs `x` are constants.
    pub fn dot_const(&mut self, w: &[Var], x: &[f64], b: Var) -> Var {
        debug_assert_eq!(w.len(), x.len());
        let mut v = 0.0;
        for (wi, xi) in w.iter().zip(x) {
            v += self.value(*wi) * xi;
        }
        v += self.value(b);
        self.push(v, Op::Dot, w.iter().zip(x).map(|(wi, xi)| (wi.0, *xi)).chain([(b.0, 1.0)]))
    }

    /// Reverse sweep from `output`.
    ///
    /// Fails if any node that contributes to the output carries a
    /// non-finite value or partial; the error names the operation.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let mut adjoints = vec![0.0f64; self.nodes.len()];
        adjoints[output.0] = 1.0;
        for i in (0..=output.0).rev() {
            let adj = adjoints[i];
            if adj == 0.0 {
                continue;
            }
            let node = self.nodes[i];
            if !node.value.is_finite() || !adj.is_finite() {
                return Err(non_finite(node.op, i));
            }
            for &(p, d) in &self.edges[node.start..node.start + node.len] {
                if !d.is_finite() {
                    return Err(non_finite(node.op, i));
                }
                adjoints[p] += adj * d;
            }
        }
        Ok(Gradients { adjoints })
    }
}

fn non_finite(op: Op, node: usize) -> Error {
    Error::Numeric(format!("non-finite value in {op:?} at tape node {node}"))
}

/// Logistic function, stable for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule() {
        let mut t = Tape::new();
        let x = t.leaf(3.0);
        let y = t.leaf(-2.0);
        let xy = t.mul(x, y);
        let out = t.add(xy, x);
        let g = t.backward(out).unwrap();
        assert_eq!(t.value(out), -3.0);
        assert_eq!(g.get(x), -1.0);
        assert_eq!(g.get(y), 3.0);
    }

    #[test]
    fn half_squared_norm_gradient_is_identity() {
        let theta = [0.5, -1.25, 3.0, 1e-3];
        let mut t = Tape::new();
        let vars = t.leaves(&theta);
        let sq: Vec<Var> = vars.iter().map(|v| t.mul(*v, *v)).collect();
        let s = t.sum(&sq);
        let loss = t.scale(s, 0.5);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.collect(&vars), theta.to_vec());
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut t = Tape::new();
        let vars = t.leaves(&[1.0, 2.0]);
        let c = t.leaf(7.0);
        let g = t.backward(c).unwrap();
        assert_eq!(g.collect(&vars), vec![0.0, 0.0]);
    }

    #[test]
    fn dot_matches_elementwise() {
        let mut t = Tape::new();
        let w = t.leaves(&[0.1, -0.2, 0.3]);
        let x = t.leaves(&[1.0, 2.0, -1.0]);
        let b = t.leaf(0.5);
        let d = t.dot(&w, &x, b);
        assert!((t.value(d) - (0.1 - 0.4 - 0.3 + 0.5)).abs() < 1e-15);
        let g = t.backward(d).unwrap();
        assert_eq!(g.collect(&w), vec![1.0, 2.0, -1.0]);
        assert_eq!(g.collect(&x), vec![0.1, -0.2, 0.3]);
        assert_eq!(g.get(b), 1.0);
    }

    #[test]
    fn unary_derivatives() {
        let mut t = Tape::new();
        let x = t.leaf(0.7);
        for (f, expect) in [
            (Tape::exp as fn(&mut Tape, Var) -> Var, 0.7f64.exp()),
            (Tape::ln, 1.0 / 0.7),
            (Tape::sqrt, 0.5 / 0.7f64.sqrt()),
            (Tape::tanh, 1.0 - 0.7f64.tanh().powi(2)),
            (Tape::sigmoid, sigmoid(0.7) * (1.0 - sigmoid(0.7))),
            (Tape::elu, 1.0),
        ] {
            let y = f(&mut t, x);
            let g = t.backward(y).unwrap();
            assert!((g.get(x) - expect).abs() < 1e-15);
        }
        let neg = t.leaf(-0.5);
        let e = t.elu(neg);
        assert!((t.value(e) - ((-0.5f64).exp() - 1.0)).abs() < 1e-15);
        assert!((t.backward(e).unwrap().get(neg) - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn non_finite_reports_operation() {
        let mut t = Tape::new();
        let x = t.leaf(0.0);
        let y = t.ln(x);
        let err = t.backward(y).unwrap_err();
        assert!(err.to_string().contains("Ln"), "{err}");
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(800.0) == 1.0);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!(sigmoid(-30.0) > 0.0);
    }
}
