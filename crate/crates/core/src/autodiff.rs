//! Reverse-mode differentiation on an eagerly evaluated tape.
//!
//! Values are dense matrices; vectors are single columns and mini-batches are
//! stored one sample per column. Every operation computes its value when it is
//! recorded and remembers just enough to push adjoints back to its inputs.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub type Tensor = DMatrix<f64>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Scale(NodeId, f64),
    /// A 1x1 node times a tensor.
    ScaleBy { scalar: NodeId, x: NodeId },
    MatMul(NodeId, NodeId),
    Relu(NodeId),
    Tanh(NodeId),
    /// `w * x + b`, with the column `b` broadcast over the columns of `x`.
    Affine { w: NodeId, x: NodeId, b: NodeId },
    ElemMul(NodeId, NodeId),
    Sum(NodeId),
    /// Rows `start..start + value.nrows()` of the input.
    Rows { x: NodeId, start: usize },
    VStack(NodeId, NodeId),
    /// Mean softmax cross-entropy over columns; `probs` are the softmax values.
    SoftmaxCe { logits: NodeId, labels: Vec<usize>, probs: Tensor },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// A single-threaded recording of one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<String, NodeId>,
    adjoints: Option<Vec<Tensor>>,
}

fn shape(t: &Tensor) -> (usize, usize) {
    (t.nrows(), t.ncols())
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

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Value of a 1x1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value[(0, 0)]
    }

    /// A value that receives no gradient bookkeeping by name.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Leaf bound to parameter `name` of `store`. Repeated requests for the
    /// same name return the same node, so gradients of shared uses add up.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.params.get(name) {
            return Ok(id);
        }
        let value = store
            .get(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter `{name}`")))?
            .clone();
        let id = self.push(value, Op::Leaf);
        self.params.insert(name.to_string(), id);
        Ok(id)
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        let (sa, sb) = (shape(self.value(a)), shape(self.value(b)));
        if sa != sb {
            return Err(Error::dim(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "add")?;
        let v = self.value(a) + self.value(b);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "sub")?;
        let v = self.value(a) - self.value(b);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, c: f64, x: NodeId) -> NodeId {
        let v = self.value(x) * c;
        self.push(v, Op::Scale(x, c))
    }

    /// Multiplies `x` by the 1x1 node `scalar` (trainable gains such as `k_n`).
    pub fn scale_by(&mut self, scalar: NodeId, x: NodeId) -> Result<NodeId> {
        if shape(self.value(scalar)) != (1, 1) {
            return Err(Error::dim("scale_by expects a 1x1 scalar node"));
        }
        let v = self.value(x) * self.scalar(scalar);
        Ok(self.push(v, Op::ScaleBy { scalar, x }))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (shape(self.value(a)), shape(self.value(b)));
        if sa.1 != sb.0 {
            return Err(Error::dim(format!("matmul: {sa:?} x {sb:?}")));
        }
        let v = self.value(a) * self.value(b);
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// Matrix times column vector.
    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> Result<NodeId> {
        if self.value(x).ncols() != 1 {
            return Err(Error::dim("matvec expects a column vector"));
        }
        self.matmul(w, x)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|z| if z > 0.0 { z } else { 0.0 });
        self.push(v, Op::Relu(x))
    }

    /// Smallest `|z|` over every relu input recorded so far; `None` without
    /// relu nodes. A central difference with step below this distance (times
    /// the local sensitivity) cannot straddle a kink.
    pub fn relu_margin(&self) -> Option<f64> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(x) => Some(self.value(x).amin()),
                _ => None,
            })
            .reduce(f64::min)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(f64::tanh);
        self.push(v, Op::Tanh(x))
    }

    /// `w * x + b` with `b` a column broadcast across the columns of `x`.
    pub fn affine(&mut self, w: NodeId, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (sw, sx, sb) = (shape(self.value(w)), shape(self.value(x)), shape(self.value(b)));
        if sw.1 != sx.0 || sb != (sw.0, 1) {
            return Err(Error::dim(format!("affine: w {sw:?}, x {sx:?}, b {sb:?}")));
        }
        let mut v = self.value(w) * self.value(x);
        let bias = self.value(b).column(0).into_owned();
        for mut col in v.column_iter_mut() {
            col += &bias;
        }
        Ok(self.push(v, Op::Affine { w, x, b }))
    }

    pub fn elementwise_mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "elementwise_mul")?;
        let v = self.value(a).component_mul(self.value(b));
        Ok(self.push(v, Op::ElemMul(a, b)))
    }

    /// Sum of all entries, as a 1x1 node.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let v = Tensor::from_element(1, 1, self.value(x).sum());
        self.push(v, Op::Sum(x))
    }

    /// Rows `start..start + len` of `x`.
    pub fn rows(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let n = self.value(x).nrows();
        if start + len > n {
            return Err(Error::dim(format!("rows {start}..{} of a {n}-row tensor", start + len)));
        }
        let v = self.value(x).rows(start, len).into_owned();
        Ok(self.push(v, Op::Rows { x, start }))
    }

    /// `a` stacked on top of `b`.
    pub fn vstack(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.ncols() {
            return Err(Error::dim(format!("vstack: {:?} over {:?}", shape(va), shape(vb))));
        }
        let (ra, rb) = (va.nrows(), vb.nrows());
        let mut v = Tensor::zeros(ra + rb, va.ncols());
        v.rows_mut(0, ra).copy_from(va);
        v.rows_mut(ra, rb).copy_from(vb);
        Ok(self.push(v, Op::VStack(a, b)))
    }

    /// Mean cross-entropy of `softmax(logits[:, j])` against `labels[j]`.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let z = self.value(logits);
        let (classes, n) = shape(z);
        if labels.len() != n || n == 0 {
            return Err(Error::dim(format!(
                "softmax_cross_entropy: {n} logit columns, {} labels",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::dim(format!("label {bad} out of range for {classes} classes")));
        }
        let mut probs = Tensor::zeros(classes, n);
        let mut loss = 0.0;
        for (j, &label) in labels.iter().enumerate() {
            let col = z.column(j);
            let m = col.max();
            let mut denom = 0.0;
            for i in 0..classes {
                let e = (col[i] - m).exp();
                probs[(i, j)] = e;
                denom += e;
            }
            for i in 0..classes {
                probs[(i, j)] /= denom;
            }
            loss += denom.ln() + m - col[label];
        }
        let v = Tensor::from_element(1, 1, loss / n as f64);
        Ok(self.push(v, Op::SoftmaxCe { logits, labels: labels.to_vec(), probs }))
    }

    /// Propagates adjoints from the scalar `root`. A tape can be
    /// differentiated once; call [`Tape::reset_adjoints`] to do it again.
    pub fn backward(&mut self, root: NodeId) -> Result<Gradients> {
        if self.adjoints.is_some() {
            return Err(Error::contract("backward already ran on this tape; reset adjoints first"));
        }
        if shape(self.value(root)) != (1, 1) {
            return Err(Error::contract(format!(
                "backward root must be scalar, got {:?}",
                shape(self.value(root))
            )));
        }
        let mut adj: Vec<Tensor> = self
            .nodes
            .iter()
            .map(|n| Tensor::zeros(n.value.nrows(), n.value.ncols()))
            .collect();
        adj[root.0][(0, 0)] = 1.0;

        for i in (0..=root.0).rev() {
            if adj[i].iter().all(|&g| g == 0.0) {
                continue;
            }
            let g = std::mem::replace(&mut adj[i], Tensor::zeros(0, 0));
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    adj[a.0] += &g;
                    adj[b.0] += &g;
                }
                Op::Sub(a, b) => {
                    adj[a.0] += &g;
                    adj[b.0] -= &g;
                }
                Op::Scale(x, c) => adj[x.0] += &g * *c,
                Op::ScaleBy { scalar, x } => {
                    let s = self.nodes[scalar.0].value[(0, 0)];
                    adj[scalar.0][(0, 0)] += g.dot(&self.nodes[x.0].value);
                    adj[x.0] += &g * s;
                }
                Op::MatMul(a, b) => {
                    adj[a.0] += &g * self.nodes[b.0].value.transpose();
                    adj[b.0] += self.nodes[a.0].value.transpose() * &g;
                }
                Op::Relu(x) => {
                    let xv = &self.nodes[x.0].value;
                    adj[x.0] += g.zip_map(xv, |gi, xi| if xi > 0.0 { gi } else { 0.0 });
                }
                Op::Tanh(x) => {
                    adj[x.0] += g.zip_map(&node.value, |gi, yi| gi * (1.0 - yi * yi));
                }
                Op::Affine { w, x, b } => {
                    adj[w.0] += &g * self.nodes[x.0].value.transpose();
                    adj[x.0] += self.nodes[w.0].value.transpose() * &g;
                    adj[b.0] += g.column_sum();
                }
                Op::ElemMul(a, b) => {
                    adj[a.0] += g.component_mul(&self.nodes[b.0].value);
                    adj[b.0] += g.component_mul(&self.nodes[a.0].value);
                }
                Op::Sum(x) => adj[x.0].add_scalar_mut(g[(0, 0)]),
                Op::Rows { x, start } => {
                    let mut r = adj[x.0].rows_mut(*start, g.nrows());
                    r += &g;
                }
                Op::VStack(a, b) => {
                    let ra = self.nodes[a.0].value.nrows();
                    adj[a.0] += g.rows(0, ra);
                    adj[b.0] += g.rows(ra, g.nrows() - ra);
                }
                Op::SoftmaxCe { logits, labels, probs } => {
                    let scale = g[(0, 0)] / labels.len() as f64;
                    let mut d = probs.clone();
                    for (j, &l) in labels.iter().enumerate() {
                        d[(l, j)] -= 1.0;
                    }
                    adj[logits.0] += d * scale;
                }
            }
            adj[i] = g;
        }

        let grads = self
            .params
            .iter()
            .map(|(name, id)| (name.clone(), adj[id.0].clone()))
            .collect();
        self.adjoints = Some(adj);
        Ok(Gradients { grads })
    }

    /// Adjoint of `id` from the last backward pass.
    pub fn adjoint(&self, id: NodeId) -> Option<&Tensor> {
        self.adjoints.as_ref().map(|a| &a[id.0])
    }

    pub fn reset_adjoints(&mut self) {
        self.adjoints = None;
    }
}

/// Parameter gradients from one backward pass, keyed by parameter name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    grads: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Tensor) {
        self.grads.insert(name.into(), grad);
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// Named trainable tensors plus their momentum buffers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    velocity: BTreeMap<String, Tensor>,
    no_decay: BTreeSet<String>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        self.velocity
            .insert(name.clone(), Tensor::zeros(value.nrows(), value.ncols()));
        self.params.insert(name, value);
    }

    /// Inserts a parameter that weight decay must leave alone.
    pub fn insert_no_decay(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        self.no_decay.insert(name.clone());
        self.insert(name, value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn velocity(&self, name: &str) -> Option<&Tensor> {
        self.velocity.get(name)
    }

    pub fn is_decayed(&self, name: &str) -> bool {
        !self.no_decay.contains(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar entries.
    pub fn numel(&self) -> usize {
        self.params.values().map(|t| t.len()).sum()
    }

    pub(crate) fn param_and_velocity_mut(&mut self, name: &str) -> Option<(&mut Tensor, &mut Tensor)> {
        let p = self.params.get_mut(name)?;
        let v = self.velocity.get_mut(name)?;
        Some((p, v))
    }
}

/// Per-parameter worst relative error between reverse-mode gradients and
/// central differences, `|analytic - fd| / max(1, |analytic|)`.
pub fn gradcheck_by_param<F>(f: F, params: &ParamStore, eps: f64) -> Result<BTreeMap<String, f64>>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<NodeId>,
{
    if eps <= 0.0 {
        return Err(Error::contract("gradcheck step must be positive"));
    }
    let mut tape = Tape::new();
    let root = f(&mut tape, params)?;
    let grads = tape.backward(root)?;

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let r = f(&mut t, store)?;
        Ok(t.scalar(r))
    };

    let mut worst = BTreeMap::new();
    let mut probe = params.clone();
    for (name, value) in params.iter() {
        let zero = Tensor::zeros(value.nrows(), value.ncols());
        let analytic = grads.get(name).unwrap_or(&zero);
        let mut err: f64 = 0.0;
        for idx in 0..value.len() {
            let orig = value[idx];
            probe.get_mut(name).expect("cloned store")[idx] = orig + eps;
            let up = eval(&probe)?;
            probe.get_mut(name).expect("cloned store")[idx] = orig - eps;
            let down = eval(&probe)?;
            probe.get_mut(name).expect("cloned store")[idx] = orig;
            let fd = (up - down) / (2.0 * eps);
            let a = analytic[idx];
            err = err.max((a - fd).abs() / a.abs().max(1.0));
        }
        worst.insert(name.to_string(), err);
    }
    Ok(worst)
}

/// Largest relative gradient error over all parameters (see
/// [`gradcheck_by_param`]).
pub fn gradcheck<F>(f: F, params: &ParamStore, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<NodeId>,
{
    Ok(gradcheck_by_param(f, params, eps)?.into_values().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(x: &[f64]) -> Tensor {
        Tensor::from_column_slice(x.len(), 1, x)
    }

    #[test]
    fn relu_margin_is_the_closest_input_to_the_kink() {
        let mut t = Tape::new();
        assert_eq!(t.relu_margin(), None);
        let a = t.constant(col(&[-0.5, 2.0]));
        t.relu(a);
        let b = t.constant(col(&[0.25, -3.0]));
        t.relu(b);
        assert_eq!(t.relu_margin(), Some(0.25));
    }

    #[test]
    fn op_values() {
        let mut t = Tape::new();
        let x = t.constant(col(&[2.0]));
        let y = t.scale(3.0, x);
        assert_eq!(t.value(y), &col(&[6.0]));

        let z = t.constant(col(&[-1.0, 2.0]));
        let r = t.relu(z);
        assert_eq!(t.value(r), &col(&[0.0, 2.0]));

        let logits = t.constant(col(&[0.0, 0.0]));
        let l = t.softmax_cross_entropy(logits, &[0]).unwrap();
        assert!((t.scalar(l) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let mut t = Tape::new();
        let a = t.constant(col(&[1.0, 2.0]));
        let b = t.constant(col(&[1.0]));
        assert!(matches!(t.add(a, b), Err(Error::Dimension(_))));
        let w = t.constant(Tensor::zeros(2, 3));
        assert!(matches!(t.matvec(w, a), Err(Error::Dimension(_))));
        assert!(matches!(t.softmax_cross_entropy(a, &[5]), Err(Error::Dimension(_))));
    }

    #[test]
    fn square_gradient() {
        let mut store = ParamStore::new();
        store.insert("x", col(&[3.0]));
        let mut t = Tape::new();
        let x = t.param(&store, "x").unwrap();
        let y = t.elementwise_mul(x, x).unwrap();
        let root = t.sum(y);
        let g = t.backward(root).unwrap();
        assert_eq!(g.get("x").unwrap(), &col(&[6.0]));
    }

    #[test]
    fn softmax_gradient() {
        let mut store = ParamStore::new();
        store.insert("z", col(&[0.0, 0.0]));
        let mut t = Tape::new();
        let z = t.param(&store, "z").unwrap();
        let l = t.softmax_cross_entropy(z, &[0]).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get("z").unwrap(), &col(&[-0.5, 0.5]));
    }

    #[test]
    fn quadratic_form_gradient() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::identity(2, 2));
        let mut t = Tape::new();
        let w = t.param(&store, "w").unwrap();
        let x = t.constant(col(&[1.0, 2.0]));
        let wx = t.matvec(w, x).unwrap();
        let sq = t.elementwise_mul(wx, wx).unwrap();
        let s = t.sum(sq);
        let root = t.scale(0.5, s);
        let g = t.backward(root).unwrap();
        assert_eq!(g.get("w").unwrap(), &Tensor::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]));
    }

    #[test]
    fn backward_contract() {
        let mut t = Tape::new();
        let v = t.constant(col(&[1.0, 2.0]));
        assert!(matches!(t.backward(v), Err(Error::Contract(_))));
        let s = t.sum(v);
        t.backward(s).unwrap();
        assert!(matches!(t.backward(s), Err(Error::Contract(_))));
        t.reset_adjoints();
        t.backward(s).unwrap();
        assert_eq!(t.adjoint(v).unwrap(), &col(&[1.0, 1.0]));
    }

    #[test]
    fn shared_parameter_gradients_accumulate() {
        let mut store = ParamStore::new();
        store.insert("a", col(&[1.5, -0.5]));
        let mut t = Tape::new();
        let a1 = t.param(&store, "a").unwrap();
        let a2 = t.param(&store, "a").unwrap();
        assert_eq!(a1, a2);
        let s = t.add(a1, a2).unwrap();
        let root = t.sum(s);
        let g = t.backward(root).unwrap();
        assert_eq!(g.get("a").unwrap(), &col(&[2.0, 2.0]));
    }

    #[test]
    fn relu_derivative_at_zero_is_zero() {
        let mut store = ParamStore::new();
        store.insert("x", col(&[0.0, 1.0, -1.0]));
        let mut t = Tape::new();
        let x = t.param(&store, "x").unwrap();
        let r = t.relu(x);
        let root = t.sum(r);
        let g = t.backward(root).unwrap();
        assert_eq!(g.get("x").unwrap(), &col(&[0.0, 1.0, 0.0]));
    }

    #[test]
    fn sum_of_squares_gradcheck() {
        let mut store = ParamStore::new();
        store.insert("a", Tensor::from_row_slice(2, 2, &[0.3, -1.2, 2.0, 0.1]));
        store.insert("b", col(&[4.0, -3.0]));
        let err = gradcheck(
            |t, s| {
                let mut acc = None;
                for name in ["a", "b"] {
                    let p = t.param(s, name)?;
                    let sq = t.elementwise_mul(p, p)?;
                    let term = t.sum(sq);
                    acc = Some(match acc {
                        None => term,
                        Some(prev) => t.add(prev, term)?,
                    });
                }
                Ok(acc.unwrap())
            },
            &store,
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-7, "{err}");
    }

    #[test]
    fn lm_coefficient_gradient_closed_form() {
        // L = sum(c * u_next) with u_next = (1 - k) u + k u_prev + f.
        let mut store = ParamStore::new();
        store.insert("k", Tensor::from_element(1, 1, -0.3));
        let u = col(&[1.0, -2.0, 0.5]);
        let u_prev = col(&[0.2, 0.7, -1.0]);
        let f = col(&[0.1, 0.1, 0.3]);
        let c = col(&[2.0, -1.0, 0.5]);
        let mut t = Tape::new();
        let k = t.param(&store, "k").unwrap();
        let un = t.constant(u.clone());
        let up = t.constant(u_prev.clone());
        let fv = t.constant(f);
        let diff = t.sub(up, un).unwrap();
        let kd = t.scale_by(k, diff).unwrap();
        let a = t.add(un, kd).unwrap();
        let next = t.add(a, fv).unwrap();
        let cn = t.constant(c.clone());
        let weighted = t.elementwise_mul(cn, next).unwrap();
        let root = t.sum(weighted);
        let g = t.backward(root).unwrap();
        // dL/dk = (u_prev - u) . dL/du_next, and dL/du_next = c.
        let expected = (u_prev - u).dot(&c);
        assert!((g.get("k").unwrap()[(0, 0)] - expected).abs() < 1e-14);
    }

    #[test]
    fn split_and_stack_gradients() {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::from_row_slice(4, 2, &[0.5, -1.0, 2.0, 0.3, -0.7, 1.1, 0.9, -0.2]));
        store.insert("w", Tensor::from_row_slice(2, 2, &[1.5, -0.4, 0.2, 0.8]));
        let err = gradcheck(
            |t, s| {
                let x = t.param(s, "x")?;
                let w = t.param(s, "w")?;
                let top = t.rows(x, 0, 2)?;
                let bottom = t.rows(x, 2, 2)?;
                let mixed = t.matmul(w, bottom)?;
                let act = t.tanh(mixed);
                let y = t.vstack(act, top)?;
                let sq = t.elementwise_mul(y, y)?;
                Ok(t.sum(sq))
            },
            &store,
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-7, "{err}");
        let mut t = Tape::new();
        let x = t.param(&store, "x").unwrap();
        assert!(t.rows(x, 3, 2).is_err());
    }
}
