//! Reverse-mode automatic differentiation over dense real arrays.
//!
//! A `Tape` records a forward computation as a flat list of nodes in
//! creation order; `backward` replays it in reverse, accumulating adjoints.
//! The op set is exactly what a small MLP and its losses need, plus a
//! first-class `stop_gradient` whose value is the identity but which blocks
//! all derivative flow into its ancestors.
//!
//! One tape lives per loss evaluation and is dropped after `backward`.
//! Shape errors are programming errors and panic with both shapes named.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::kernels;

/// Dense array shapes supported by the tape. No broadcasting.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Scalar,
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Scalar => 1,
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            Shape::Scalar => write!(f, "Scalar"),
            Shape::Vector(n) => write!(f, "Vector({n})"),
            Shape::Matrix(r, c) => write!(f, "Matrix({r}, {c})"),
        }
    }
}

/// A value with a shape: the payload of every tape node.
#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    data: Vec<f64>,
    shape: Shape,
}

impl Array {
    pub fn scalar(v: f64) -> Self {
        Array {
            data: vec![v],
            shape: Shape::Scalar,
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        let shape = Shape::Vector(data.len());
        Array { data, shape }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "matrix data length {} does not match {rows}x{cols}",
            data.len()
        );
        Array {
            data,
            shape: Shape::Matrix(rows, cols),
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Array {
            data: vec![0.0; shape.len()],
            shape,
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Extract the single element of a scalar array.
    pub fn as_scalar(&self) -> f64 {
        assert_eq!(self.shape, Shape::Scalar, "as_scalar on {}", self.shape);
        self.data[0]
    }
}

pub type NodeId = usize;

#[derive(Clone, Debug)]
enum Op {
    Param,
    Constant,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    MatVec(NodeId, NodeId),
    Tanh(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    SqL2(NodeId),
    Concat(Vec<NodeId>),
    Row(NodeId, usize),
    StopGrad(NodeId),
}

struct Node {
    value: Array,
    op: Op,
    grad_blocked: bool,
}

/// Gradient of a scalar root with respect to every `param` leaf.
pub struct Gradients {
    grads: HashMap<NodeId, Array>,
}

impl Gradients {
    /// Gradient w.r.t. a param leaf. Panics if `id` is not a param of the tape.
    pub fn wrt(&self, id: NodeId) -> &Array {
        self.grads
            .get(&id)
            .unwrap_or_else(|| panic!("node {id} is not a param leaf of this tape"))
    }
}

/// Records a forward computation; replay in reverse with [`Tape::backward`].
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<NodeId>,
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

    pub fn value(&self, id: NodeId) -> &Array {
        &self.nodes[id].value
    }

    pub fn is_grad_blocked(&self, id: NodeId) -> bool {
        self.nodes[id].grad_blocked
    }

    /// Parent node ids of `id` in the recorded graph (empty for leaves).
    pub fn parents(&self, id: NodeId) -> Vec<NodeId> {
        match &self.nodes[id].op {
            Op::Param | Op::Constant => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatVec(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Tanh(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SqL2(a)
            | Op::Row(a, _)
            | Op::StopGrad(a) => vec![*a],
            Op::Concat(parts) => parts.clone(),
        }
    }

    fn push(&mut self, value: Array, op: Op) -> NodeId {
        self.push_flagged(value, op, false)
    }

    fn push_flagged(&mut self, value: Array, op: Op, grad_blocked: bool) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            grad_blocked,
        });
        id
    }

    /// Leaf that receives a gradient entry from `backward`.
    pub fn param(&mut self, value: Array) -> NodeId {
        let id = self.push(value, Op::Param);
        self.params.push(id);
        id
    }

    /// Leaf treated as a constant: no gradient is reported for it.
    pub fn constant(&mut self, value: Array) -> NodeId {
        self.push(value, Op::Constant)
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.constant(Array::scalar(v))
    }

    pub fn vector(&mut self, data: &[f64]) -> NodeId {
        self.constant(Array::vector(data.to_vec()))
    }

    fn binary_same_shape(&self, name: &str, a: NodeId, b: NodeId) -> Shape {
        let (sa, sb) = (self.nodes[a].value.shape, self.nodes[b].value.shape);
        assert!(sa == sb, "{name}: shape mismatch: {sa} vs {sb}");
        sa
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let shape = self.binary_same_shape("add", a, b);
        let mut out = vec![0.0; shape.len()];
        kernels::add(self.nodes[a].value.data(), self.nodes[b].value.data(), &mut out);
        self.push(Array { data: out, shape }, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let shape = self.binary_same_shape("sub", a, b);
        let (da, db) = (self.nodes[a].value.data(), self.nodes[b].value.data());
        let out: Vec<f64> = da.iter().zip(db).map(|(x, y)| x - y).collect();
        self.push(Array { data: out, shape }, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let shape = self.binary_same_shape("mul", a, b);
        let (da, db) = (self.nodes[a].value.data(), self.nodes[b].value.data());
        let out: Vec<f64> = da.iter().zip(db).map(|(x, y)| x * y).collect();
        self.push(Array { data: out, shape }, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let shape = self.nodes[a].value.shape;
        let out: Vec<f64> = self.nodes[a].value.data().iter().map(|x| x * c).collect();
        self.push(Array { data: out, shape }, Op::Scale(a, c))
    }

    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> NodeId {
        let (sw, sx) = (self.nodes[w].value.shape, self.nodes[x].value.shape);
        let (rows, cols) = match sw {
            Shape::Matrix(r, c) => (r, c),
            other => panic!("matvec: left operand must be a matrix, got {other}"),
        };
        match sx {
            Shape::Vector(n) if n == cols => {}
            other => panic!("matvec: shape mismatch: {sw} x {other}"),
        }
        let mut out = vec![0.0; rows];
        kernels::matvec(
            self.nodes[w].value.data(),
            rows,
            cols,
            self.nodes[x].value.data(),
            &mut out,
        );
        self.push(Array::vector(out), Op::MatVec(w, x))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let shape = self.nodes[a].value.shape;
        let mut out = vec![0.0; shape.len()];
        kernels::tanh(self.nodes[a].value.data(), &mut out);
        self.push(Array { data: out, shape }, Op::Tanh(a))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.nodes[a].value.data().iter().sum();
        self.push(Array::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let data = self.nodes[a].value.data();
        assert!(!data.is_empty(), "mean of empty array");
        let m = data.iter().sum::<f64>() / data.len() as f64;
        self.push(Array::scalar(m), Op::Mean(a))
    }

    /// Sum of squares of all elements.
    pub fn sq_l2(&mut self, a: NodeId) -> NodeId {
        let s = kernels::sq_l2(self.nodes[a].value.data());
        self.push(Array::scalar(s), Op::SqL2(a))
    }

    /// Concatenate vectors into one vector.
    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat of zero parts");
        let mut data = Vec::new();
        for &p in parts {
            match self.nodes[p].value.shape {
                Shape::Vector(_) => data.extend_from_slice(self.nodes[p].value.data()),
                other => panic!("concat: expected Vector, got {other}"),
            }
        }
        self.push(Array::vector(data), Op::Concat(parts.to_vec()))
    }

    /// Select row `i` of a matrix; the backward pass scatter-adds into that row.
    pub fn row(&mut self, m: NodeId, i: usize) -> NodeId {
        let (rows, cols) = match self.nodes[m].value.shape {
            Shape::Matrix(r, c) => (r, c),
            other => panic!("row: expected Matrix, got {other}"),
        };
        assert!(i < rows, "row: index {i} out of range for Matrix({rows}, {cols})");
        let data = self.nodes[m].value.data()[i * cols..(i + 1) * cols].to_vec();
        self.push(Array::vector(data), Op::Row(m, i))
    }

    /// Identity on values; blocks all derivative flow into `a`'s ancestors.
    pub fn stop_gradient(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.clone();
        self.push_flagged(value, Op::StopGrad(a), true)
    }

    /// Reverse sweep from a scalar root. Returns the gradient of the root
    /// with respect to every param leaf (zero for params the root does not
    /// depend on). Panics if `root` is not scalar-valued.
    pub fn backward(&self, root: NodeId) -> Gradients {
        let shape = self.nodes[root].value.shape;
        assert!(
            shape == Shape::Scalar,
            "backward: root must be scalar, got {shape}"
        );

        let mut adjoints: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adjoints[root] = Some(vec![1.0]);

        let mut grads = HashMap::new();
        for id in (0..=root).rev() {
            let adj = match adjoints[id].take() {
                Some(a) => a,
                None => continue,
            };
            match &self.nodes[id].op {
                Op::Param => {
                    let shape = self.nodes[id].value.shape;
                    grads.insert(id, Array { data: adj, shape });
                }
                Op::Constant => {}
                Op::StopGrad(_) => {} // adjoint stops here
                Op::Add(a, b) => {
                    acc(&mut adjoints, &self.nodes, *a, |buf| {
                        for (o, v) in buf.iter_mut().zip(&adj) {
                            *o += v;
                        }
                    });
                    acc(&mut adjoints, &self.nodes, *b, |buf| {
                        for (o, v) in buf.iter_mut().zip(&adj) {
                            *o += v;
                        }
                    });
                }
                Op::Sub(a, b) => {
                    acc(&mut adjoints, &self.nodes, *a, |buf| {
                        for (o, v) in buf.iter_mut().zip(&adj) {
                            *o += v;
                        }
                    });
                    acc(&mut adjoints, &self.nodes, *b, |buf| {
                        for (o, v) in buf.iter_mut().zip(&adj) {
                            *o -= v;
                        }
                    });
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.nodes[*a].value.data(), self.nodes[*b].value.data());
                    acc(&mut adjoints, &self.nodes, *a, |buf| {
                        for i in 0..buf.len() {
                            buf[i] += adj[i] * vb[i];
                        }
                    });
                    acc(&mut adjoints, &self.nodes, *b, |buf| {
                        for i in 0..buf.len() {
                            buf[i] += adj[i] * va[i];
                        }
                    });
                }
                Op::Scale(a, c) => {
                    acc(&mut adjoints, &self.nodes, *a, |buf| {
                        for i in 0..buf.len() {
                            buf[i] += adj[i] * c;
                        }
                    });
                }
                Op::MatVec(w, x) => {
                    let (rows, cols) = match self.nodes[*w].value.shape {
                        Shape::Matrix(r, c) => (r, c),
                        _ => unreachable!(),
                    };
                    let wv = self.nodes[*w].value.data();
                    let xv = self.nodes[*x].value.data();
                    acc(&mut adjoints, &self.nodes, *w, |buf| {
                        for r in 0..rows {
                            let a_r = adj[r];
                            let row = &mut buf[r * cols..(r + 1) * cols];
                            for c in 0..cols {
                                row[c] += a_r * xv[c];
                            }
                        }
                    });
                    acc(&mut adjoints, &self.nodes, *x, |buf| {
                        for r in 0..rows {
                            let a_r = adj[r];
                            let row = &wv[r * cols..(r + 1) * cols];
                            for c in 0..cols {
                                buf[c] += a_r * row[c];
                            }
                        }
                    });
                }
                Op::Tanh(a) => {
                    let y = self.nodes[id].value.data();
                    acc(&mut adjoints, &self.nodes, *a, |buf| {
                        for i in 0..buf.len() {
                            buf[i] += adj[i] * (1.0 - y[i] * y[i]);
                        }
                    });
                }
                Op::Sum(a) => {
                    let g = adj[0];
                    acc(&mut adjoints, &self.nodes, *a, |buf| {
                        for o in buf.iter_mut() {
                            *o += g;
                        }
                    });
                }
                Op::Mean(a) => {
                    let n = self.nodes[*a].value.data().len() as f64;
                    let g = adj[0] / n;
                    acc(&mut adjoints, &self.nodes, *a, |buf| {
                        for o in buf.iter_mut() {
                            *o += g;
                        }
                    });
                }
                Op::SqL2(a) => {
                    let v = self.nodes[*a].value.data();
                    let g = adj[0];
                    acc(&mut adjoints, &self.nodes, *a, |buf| {
                        for i in 0..buf.len() {
                            buf[i] += 2.0 * v[i] * g;
                        }
                    });
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.nodes[p].value.data().len();
                        let piece = &adj[offset..offset + len];
                        acc(&mut adjoints, &self.nodes, p, |buf| {
                            for (o, v) in buf.iter_mut().zip(piece) {
                                *o += v;
                            }
                        });
                        offset += len;
                    }
                }
                Op::Row(m, i) => {
                    let cols = adj.len();
                    acc(&mut adjoints, &self.nodes, *m, |buf| {
                        let row = &mut buf[i * cols..(i + 1) * cols];
                        for (o, v) in row.iter_mut().zip(&adj) {
                            *o += v;
                        }
                    });
                }
            }
        }

        // Params never reached by the sweep get explicit zeros.
        for &p in &self.params {
            grads
                .entry(p)
                .or_insert_with(|| Array::zeros(self.nodes[p].value.shape));
        }
        Gradients { grads }
    }
}

fn acc<F: FnOnce(&mut [f64])>(
    adjoints: &mut [Option<Vec<f64>>],
    nodes: &[Node],
    id: NodeId,
    f: F,
) {
    // Constants still accumulate (cheap, keeps the sweep uniform); their
    // adjoints are simply dropped when popped.
    let buf = adjoints[id].get_or_insert_with(|| vec![0.0; nodes[id].value.data().len()]);
    f(buf);
}

/// Max relative error between analytic gradients (via `backward`) and
/// central finite differences, over every coordinate of every input:
/// `|analytic - numeric| / max(1, |analytic|)`.
///
/// `build` must construct the same deterministic graph for any input
/// values; it receives one param leaf per entry of `inputs` and returns
/// the scalar root.
#[allow(clippy::needless_range_loop)] // j indexes parallel input/gradient pairs
pub fn grad_check<F>(build: F, inputs: &[Array], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[NodeId]) -> NodeId,
{
    if eps <= 0.0 {
        return Err(Error::BadEps { eps });
    }

    let eval = |arrays: &[Array]| -> Result<(f64, Option<Gradients>, Vec<NodeId>)> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = arrays.iter().map(|a| tape.param(a.clone())).collect();
        let root = build(&mut tape, &ids);
        let v = tape.value(root).as_scalar();
        if !v.is_finite() {
            return Err(Error::NonFinite {
                context: "grad_check function value".into(),
            });
        }
        Ok((v, Some(tape.backward(root)), ids))
    };

    let (_, grads, ids) = eval(inputs)?;
    let grads = grads.unwrap();

    let mut max_rel = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.wrt(ids[k]).data().to_vec();
        for j in 0..input.data().len() {
            let mut plus = inputs.to_vec();
            plus[k].data[j] += eps;
            let mut minus = inputs.to_vec();
            minus[k].data[j] -= eps;

            let eval_value = |arrays: &[Array]| -> Result<f64> {
                let mut tape = Tape::new();
                let ids: Vec<NodeId> = arrays.iter().map(|a| tape.param(a.clone())).collect();
                let root = build(&mut tape, &ids);
                let v = tape.value(root).as_scalar();
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::NonFinite {
                        context: "grad_check function value".into(),
                    })
                }
            };
            let numeric = (eval_value(&plus)? - eval_value(&minus)?) / (2.0 * eps);
            if !numeric.is_finite() {
                return Err(Error::NonFinite {
                    context: "grad_check finite difference".into(),
                });
            }
            let a = analytic[j];
            let rel = (a - numeric).abs() / a.abs().max(1.0);
            max_rel = max_rel.max(rel);
        }
    }
    Ok(max_rel)
}
