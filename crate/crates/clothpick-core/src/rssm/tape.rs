//! Minimal reverse-mode automatic differentiation over f64 vectors.
//!
//! Parameters live outside the tape in a named [`ParamSet`]; tape nodes hold
//! forward values and enough op metadata to push gradients backward into a
//! [`Grads`] buffer aligned with the parameter set. Stop-gradients are a
//! first-class op (`detach`), which is what the KL-balancing objective needs.

/// Dense row-major matrix (cols = 1 for vectors).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Tensor {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn vector(data: Vec<f64>) -> Tensor {
        Tensor {
            rows: data.len(),
            cols: 1,
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Ordered, named parameter tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

pub type ParamId = usize;

impl ParamSet {
    pub fn new() -> ParamSet {
        ParamSet::default()
    }

    pub fn add(&mut self, name: &str, tensor: Tensor) -> ParamId {
        assert!(
            self.id_of(name).is_none(),
            "duplicate parameter name {name}"
        );
        self.entries.push((name.to_string(), tensor));
        self.entries.len() - 1
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id].1
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id].1
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id].0
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn total_elements(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Flatten all parameters into one vector (gradient-check order).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_elements());
        for (_, t) in &self.entries {
            out.extend_from_slice(&t.data);
        }
        out
    }

    pub fn set_from_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for (_, t) in &mut self.entries {
            let len = t.data.len();
            t.data.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        assert_eq!(offset, flat.len());
    }
}

/// Per-parameter gradient buffers, aligned with a `ParamSet`.
#[derive(Debug, Clone)]
pub struct Grads {
    pub tensors: Vec<Tensor>,
}

impl Grads {
    pub fn zeros_like(params: &ParamSet) -> Grads {
        Grads {
            tensors: params
                .iter()
                .map(|(_, t)| Tensor::zeros(t.rows, t.cols))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for t in &mut self.tensors {
            for x in &mut t.data {
                *x *= k;
            }
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for t in &self.tensors {
            out.extend_from_slice(&t.data);
        }
        out
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }
}

/// y = W·x (shared by the tape and the plain inference path so both compute
/// bit-identical forward values).
pub fn matvec_into(w: &Tensor, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.cols, x.len());
    debug_assert_eq!(w.rows, out.len());
    for r in 0..w.rows {
        let row = &w.data[r * w.cols..(r + 1) * w.cols];
        let mut acc = 0.0;
        for (wi, xi) in row.iter().zip(x) {
            acc += wi * xi;
        }
        out[r] = acc;
    }
}

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

pub fn elu_deriv(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Numerically stable softplus.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn softplus_deriv(x: f64) -> f64 {
    sigmoid(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
#[allow(dead_code)] // op payloads are kept for forward-pass readability and Debug
enum Op {
    /// External data; no gradient flows into it.
    Input,
    MatVec { w: ParamId, x: NodeId },
    AddBias { b: ParamId, x: NodeId },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Scale(NodeId, f64),
    AddConst(NodeId, f64),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Elu(NodeId),
    /// softplus(x) + floor
    SoftplusFloor(NodeId, f64),
    Ln(NodeId),
    Concat(Vec<NodeId>),
    Slice { x: NodeId, start: usize },
    Detach(NodeId),
    /// Σ_i x_i → scalar node
    SumAll(NodeId),
    /// Σ_i (x_i - d_i)² against constant data → scalar node
    SumSqDiffData { x: NodeId, data: Vec<f64> },
}

struct Node {
    value: Vec<f64>,
    op: Op,
}

/// A single forward computation over a fixed parameter set.
pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Tape<'p> {
        Tape {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].value.len(), 1);
        self.nodes[id.0].value[0]
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, data: &[f64]) -> NodeId {
        self.push(data.to_vec(), Op::Input)
    }

    pub fn zeros(&mut self, len: usize) -> NodeId {
        self.push(vec![0.0; len], Op::Input)
    }

    pub fn matvec(&mut self, w: ParamId, x: NodeId) -> NodeId {
        let wt = self.params.get(w);
        let mut out = vec![0.0; wt.rows];
        matvec_into(wt, &self.nodes[x.0].value, &mut out);
        self.push(out, Op::MatVec { w, x })
    }

    pub fn add_bias(&mut self, b: ParamId, x: NodeId) -> NodeId {
        let bt = self.params.get(b);
        let out: Vec<f64> = self.nodes[x.0]
            .value
            .iter()
            .zip(&bt.data)
            .map(|(a, b)| a + b)
            .collect();
        self.push(out, Op::AddBias { b, x })
    }

    /// W·x + b in one call.
    pub fn linear(&mut self, w: ParamId, b: ParamId, x: NodeId) -> NodeId {
        let y = self.matvec(w, x);
        self.add_bias(b, y)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x + y)
            .collect();
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x - y)
            .collect();
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x * y)
            .collect();
        self.push(out, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x / y)
            .collect();
        self.push(out, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let out: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x * k).collect();
        self.push(out, Op::Scale(a, k))
    }

    pub fn add_const(&mut self, a: NodeId, k: f64) -> NodeId {
        let out: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x + k).collect();
        self.push(out, Op::AddConst(a, k))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let out: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x.tanh()).collect();
        self.push(out, Op::Tanh(a))
    }

    pub fn sigmoid_node(&mut self, a: NodeId) -> NodeId {
        let out: Vec<f64> = self.nodes[a.0].value.iter().map(|x| sigmoid(*x)).collect();
        self.push(out, Op::Sigmoid(a))
    }

    pub fn elu_node(&mut self, a: NodeId) -> NodeId {
        let out: Vec<f64> = self.nodes[a.0].value.iter().map(|x| elu(*x)).collect();
        self.push(out, Op::Elu(a))
    }

    pub fn softplus_floor(&mut self, a: NodeId, floor: f64) -> NodeId {
        let out: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .map(|x| softplus(*x) + floor)
            .collect();
        self.push(out, Op::SoftplusFloor(a, floor))
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let out: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x.ln()).collect();
        self.push(out, Op::Ln(a))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let mut out = Vec::new();
        for p in parts {
            out.extend_from_slice(&self.nodes[p.0].value);
        }
        self.push(out, Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let out = self.nodes[x.0].value[start..start + len].to_vec();
        self.push(out, Op::Slice { x, start })
    }

    /// Stop-gradient: forwards the value, blocks the backward pass.
    pub fn detach(&mut self, x: NodeId) -> NodeId {
        let out = self.nodes[x.0].value.clone();
        self.push(out, Op::Detach(x))
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.nodes[x.0].value.iter().sum();
        self.push(vec![s], Op::SumAll(x))
    }

    /// Σ (x_i - target_i)² as a fused scalar node.
    pub fn sum_sq_diff(&mut self, x: NodeId, target: &[f64]) -> NodeId {
        let s: f64 = self.nodes[x.0]
            .value
            .iter()
            .zip(target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        self.push(
            vec![s],
            Op::SumSqDiffData {
                x,
                data: target.to_vec(),
            },
        )
    }

    /// Backward pass. `seeds` assigns an output gradient to chosen (scalar or
    /// vector) nodes; gradients w.r.t. parameters accumulate into `grads`.
    pub fn backward(&self, seeds: &[(NodeId, f64)], grads: &mut Grads) {
        let mut node_grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        for (id, seed) in seeds {
            let len = self.nodes[id.0].value.len();
            let slot = node_grads[id.0].get_or_insert_with(|| vec![0.0; len]);
            for g in slot.iter_mut() {
                *g += seed;
            }
        }

        for i in (0..self.nodes.len()).rev() {
            let Some(grad) = node_grads[i].take() else {
                continue;
            };
            let send = |id: NodeId, contribution: Vec<f64>, node_grads: &mut Vec<Option<Vec<f64>>>| {
                let slot =
                    node_grads[id.0].get_or_insert_with(|| vec![0.0; contribution.len()]);
                for (g, c) in slot.iter_mut().zip(&contribution) {
                    *g += c;
                }
            };
            match &self.nodes[i].op {
                Op::Input => {}
                Op::Detach(_) => {}
                Op::MatVec { w, x } => {
                    let wt = self.params.get(*w);
                    let xv = &self.nodes[x.0].value;
                    // dL/dW += g ⊗ x
                    let gw = &mut grads.tensors[*w];
                    for r in 0..wt.rows {
                        let gr = grad[r];
                        if gr != 0.0 {
                            let row = &mut gw.data[r * wt.cols..(r + 1) * wt.cols];
                            for (slot, xi) in row.iter_mut().zip(xv) {
                                *slot += gr * xi;
                            }
                        }
                    }
                    // dL/dx += Wᵀ·g
                    let mut gx = vec![0.0; wt.cols];
                    for r in 0..wt.rows {
                        let gr = grad[r];
                        if gr != 0.0 {
                            let row = &wt.data[r * wt.cols..(r + 1) * wt.cols];
                            for (slot, wi) in gx.iter_mut().zip(row) {
                                *slot += gr * wi;
                            }
                        }
                    }
                    send(*x, gx, &mut node_grads);
                }
                Op::AddBias { b, x } => {
                    let gb = &mut grads.tensors[*b];
                    for (slot, g) in gb.data.iter_mut().zip(&grad) {
                        *slot += g;
                    }
                    send(*x, grad.clone(), &mut node_grads);
                }
                Op::Add(a, b) => {
                    send(*a, grad.clone(), &mut node_grads);
                    send(*b, grad.clone(), &mut node_grads);
                }
                Op::Sub(a, b) => {
                    send(*a, grad.clone(), &mut node_grads);
                    send(*b, grad.iter().map(|g| -g).collect(), &mut node_grads);
                }
                Op::Mul(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    send(
                        *a,
                        grad.iter().zip(bv).map(|(g, y)| g * y).collect(),
                        &mut node_grads,
                    );
                    send(
                        *b,
                        grad.iter().zip(av).map(|(g, x)| g * x).collect(),
                        &mut node_grads,
                    );
                }
                Op::Div(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    send(
                        *a,
                        grad.iter().zip(bv).map(|(g, y)| g / y).collect(),
                        &mut node_grads,
                    );
                    send(
                        *b,
                        grad.iter()
                            .zip(av.iter().zip(bv))
                            .map(|(g, (x, y))| -g * x / (y * y))
                            .collect(),
                        &mut node_grads,
                    );
                }
                Op::Scale(a, k) => {
                    send(*a, grad.iter().map(|g| g * k).collect(), &mut node_grads);
                }
                Op::AddConst(a, _) => {
                    send(*a, grad.clone(), &mut node_grads);
                }
                Op::Tanh(a) => {
                    let yv = &self.nodes[i].value;
                    send(
                        *a,
                        grad.iter().zip(yv).map(|(g, y)| g * (1.0 - y * y)).collect(),
                        &mut node_grads,
                    );
                }
                Op::Sigmoid(a) => {
                    let yv = &self.nodes[i].value;
                    send(
                        *a,
                        grad.iter()
                            .zip(yv)
                            .map(|(g, y)| g * y * (1.0 - y))
                            .collect(),
                        &mut node_grads,
                    );
                }
                Op::Elu(a) => {
                    let xv = &self.nodes[a.0].value;
                    send(
                        *a,
                        grad.iter()
                            .zip(xv)
                            .map(|(g, x)| g * elu_deriv(*x))
                            .collect(),
                        &mut node_grads,
                    );
                }
                Op::SoftplusFloor(a, _) => {
                    let xv = &self.nodes[a.0].value;
                    send(
                        *a,
                        grad.iter()
                            .zip(xv)
                            .map(|(g, x)| g * softplus_deriv(*x))
                            .collect(),
                        &mut node_grads,
                    );
                }
                Op::Ln(a) => {
                    let xv = &self.nodes[a.0].value;
                    send(
                        *a,
                        grad.iter().zip(xv).map(|(g, x)| g / x).collect(),
                        &mut node_grads,
                    );
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = self.nodes[p.0].value.len();
                        send(*p, grad[offset..offset + len].to_vec(), &mut node_grads);
                        offset += len;
                    }
                }
                Op::Slice { x, start } => {
                    let mut gx = vec![0.0; self.nodes[x.0].value.len()];
                    gx[*start..*start + grad.len()].copy_from_slice(&grad);
                    send(*x, gx, &mut node_grads);
                }
                Op::SumAll(x) => {
                    let len = self.nodes[x.0].value.len();
                    send(*x, vec![grad[0]; len], &mut node_grads);
                }
                Op::SumSqDiffData { x, data } => {
                    let xv = &self.nodes[x.0].value;
                    send(
                        *x,
                        xv.iter()
                            .zip(data)
                            .map(|(a, b)| grad[0] * 2.0 * (a - b))
                            .collect(),
                        &mut node_grads,
                    );
                }
            }
        }
    }
}
