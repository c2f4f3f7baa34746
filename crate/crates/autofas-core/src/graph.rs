//! Minimal reverse-mode differentiation over dense f64 tensors.
//!
//! Operations are recorded on a flat tape as they are built; [`Graph::backward`]
//! replays the tape in reverse and accumulates gradients into per-node buffers.
//! One graph instance per training step, single-threaded.

use crate::error::{Error, Result};

/// Dense row-major tensor of f64 values.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data length must equal product of shape"
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() requires a single-element tensor");
        self.data[0]
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() > 1 {
            self.shape[1]
        } else {
            1
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul(NodeId, NodeId),
    /// [m,n] plus a bias row broadcast over rows.
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Sigmoid(NodeId),
    /// 1-D softmax, max-subtraction stabilized.
    Softmax(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    /// Single element of a flat tensor, as a scalar node.
    Index(NodeId, usize),
    /// tensor * scalar-node broadcast.
    ScalarMul(NodeId, NodeId),
    /// Concatenate [m, n_i] blocks along dim 1.
    Concat(Vec<NodeId>),
    /// Row gather from a [vocab, dim] table.
    Embed(NodeId, Vec<usize>),
    /// Mean of stable binary cross entropy on logits; labels are constants.
    BceWithLogitsMean(NodeId, Vec<f64>),
    SqDiffMean(NodeId, NodeId),
    /// max of two scalars; ties route the gradient to the first argument.
    MaxPair(NodeId, NodeId),
    /// Straight-through Bernoulli gate: forward is the sampled 0/1 value,
    /// backward passes the gradient to the probability node unchanged.
    StGate(NodeId),
    Detach,
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Tape of recorded operations. Node ids index into creation order, which is
/// a valid topological order for the backward sweep.
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.grads.push(None);
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient accumulated by the last [`Graph::backward`] call. Zero tensor
    /// for nodes the loss does not depend on.
    pub fn grad(&self, id: NodeId) -> Tensor {
        self.grads[id.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.nodes[id.0].value.shape))
    }

    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf)
    }

    pub fn constant(&mut self, t: Tensor) -> NodeId {
        // Constants are leaves too; they simply never have their grads read.
        self.push(t, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape.len() != 2 || tb.shape.len() != 2 || ta.shape[1] != tb.shape[0] {
            return Err(Error::DimensionMismatch {
                op: "matmul",
                lhs: ta.shape.clone(),
                rhs: tb.shape.clone(),
            });
        }
        let out = matmul_raw(ta, tb);
        Ok(self.push(out, Op::Matmul(a, b)))
    }

    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[bias.0].value);
        let n = ta.cols();
        if tb.numel() != n {
            return Err(Error::DimensionMismatch {
                op: "add_bias",
                lhs: ta.shape.clone(),
                rhs: tb.shape.clone(),
            });
        }
        let mut data = ta.data.clone();
        for (i, v) in data.iter_mut().enumerate() {
            *v += tb.data[i % n];
        }
        let out = Tensor::new(ta.shape.clone(), data);
        Ok(self.push(out, Op::AddBias(a, bias)))
    }

    fn elementwise(
        &mut self,
        a: NodeId,
        b: NodeId,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape != tb.shape {
            return Err(Error::DimensionMismatch {
                op: name,
                lhs: ta.shape.clone(),
                rhs: tb.shape.clone(),
            });
        }
        let data = ta
            .data
            .iter()
            .zip(&tb.data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::new(ta.shape.clone(), data);
        Ok(self.push(out, op))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let t = &self.nodes[a.0].value;
        let out = Tensor::new(t.shape.clone(), t.data.iter().map(|v| v * c).collect());
        self.push(out, Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let t = &self.nodes[a.0].value;
        let out = Tensor::new(t.shape.clone(), t.data.iter().map(|v| v.max(0.0)).collect());
        self.push(out, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let t = &self.nodes[a.0].value;
        let out = Tensor::new(t.shape.clone(), t.data.iter().map(|&v| sigmoid(v)).collect());
        self.push(out, Op::Sigmoid(a))
    }

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let t = &self.nodes[a.0].value;
        if t.numel() == 0 {
            return Err(Error::InvalidParameter("softmax of empty tensor".into()));
        }
        if !t.is_finite() {
            return Err(Error::Numeric("softmax input is not finite".into()));
        }
        let max = t.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = t.data.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let out = Tensor::new(t.shape.clone(), exps.iter().map(|e| e / sum).collect());
        Ok(self.push(out, Op::Softmax(a)))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.nodes[a.0].value.data.iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let t = &self.nodes[a.0].value;
        let s: f64 = t.data.iter().sum::<f64>() / t.numel() as f64;
        self.push(Tensor::scalar(s), Op::MeanAll(a))
    }

    pub fn index(&mut self, a: NodeId, i: usize) -> NodeId {
        let v = self.nodes[a.0].value.data[i];
        self.push(Tensor::scalar(v), Op::Index(a, i))
    }

    pub fn scalar_mul(&mut self, tensor: NodeId, scalar: NodeId) -> NodeId {
        let s = self.nodes[scalar.0].value.item();
        let t = &self.nodes[tensor.0].value;
        let out = Tensor::new(t.shape.clone(), t.data.iter().map(|v| v * s).collect());
        self.push(out, Op::ScalarMul(tensor, scalar))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        assert!(!parts.is_empty());
        let rows = self.nodes[parts[0].0].value.rows();
        for &p in parts {
            if self.nodes[p.0].value.rows() != rows {
                return Err(Error::DimensionMismatch {
                    op: "concat_cols",
                    lhs: self.nodes[parts[0].0].value.shape.clone(),
                    rhs: self.nodes[p.0].value.shape.clone(),
                });
            }
        }
        let total: usize = parts.iter().map(|&p| self.nodes[p.0].value.cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let t = &self.nodes[p.0].value;
                let c = t.cols();
                data.extend_from_slice(&t.data[r * c..(r + 1) * c]);
            }
        }
        let out = Tensor::new(vec![rows, total], data);
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    pub fn embed(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId> {
        let t = &self.nodes[table.0].value;
        let (vocab, dim) = (t.shape[0], t.shape[1]);
        let mut data = Vec::with_capacity(indices.len() * dim);
        for (pos, &ix) in indices.iter().enumerate() {
            if ix >= vocab {
                return Err(Error::Lookup {
                    feature: pos,
                    value: ix,
                    vocab,
                });
            }
            data.extend_from_slice(&t.data[ix * dim..(ix + 1) * dim]);
        }
        let out = Tensor::new(vec![indices.len(), dim], data);
        Ok(self.push(out, Op::Embed(table, indices.to_vec())))
    }

    pub fn bce_with_logits_mean(&mut self, logits: NodeId, labels: &[f64]) -> Result<NodeId> {
        let t = &self.nodes[logits.0].value;
        if t.numel() != labels.len() {
            return Err(Error::DimensionMismatch {
                op: "bce_with_logits_mean",
                lhs: t.shape.clone(),
                rhs: vec![labels.len()],
            });
        }
        let mut total = 0.0;
        for (&z, &y) in t.data.iter().zip(labels) {
            // max(z,0) - z*y + ln(1 + exp(-|z|))
            total += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        }
        let out = Tensor::scalar(total / labels.len() as f64);
        Ok(self.push(out, Op::BceWithLogitsMean(logits, labels.to_vec())))
    }

    pub fn sq_diff_mean(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape != tb.shape {
            return Err(Error::DimensionMismatch {
                op: "sq_diff_mean",
                lhs: ta.shape.clone(),
                rhs: tb.shape.clone(),
            });
        }
        let n = ta.numel() as f64;
        let s: f64 = ta
            .data
            .iter()
            .zip(&tb.data)
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        let out = Tensor::scalar(s / n);
        Ok(self.push(out, Op::SqDiffMean(a, b)))
    }

    pub fn max_pair(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.nodes[a.0].value.item(), self.nodes[b.0].value.item());
        let out = Tensor::scalar(if va >= vb { va } else { vb });
        self.push(out, Op::MaxPair(a, b))
    }

    pub fn st_gate(&mut self, theta: NodeId, sampled: f64) -> NodeId {
        self.push(Tensor::scalar(sampled), Op::StGate(theta))
    }

    pub fn detach(&mut self, a: NodeId) -> NodeId {
        let t = self.nodes[a.0].value.clone();
        self.push(t, Op::Detach)
    }

    pub fn zero_scalar(&mut self) -> NodeId {
        self.constant(Tensor::scalar(0.0))
    }

    /// Reverse sweep from a scalar output node. Gradients from previous calls
    /// on the same graph accumulate; use a fresh graph per step.
    pub fn backward(&mut self, out: NodeId) {
        assert_eq!(
            self.nodes[out.0].value.numel(),
            1,
            "backward requires a scalar output"
        );
        if self.grads[out.0].is_none() {
            self.grads[out.0] = Some(Tensor::zeros(&self.nodes[out.0].value.shape));
        }
        self.grads[out.0].as_mut().unwrap().data[0] += 1.0;

        for i in (0..=out.0).rev() {
            let g = match self.grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.apply_backward(i, &g);
            self.grads[i] = Some(g);
        }
    }

    fn accumulate(&mut self, id: NodeId, delta: &Tensor) {
        let slot = &mut self.grads[id.0];
        match slot {
            Some(g) => {
                for (a, b) in g.data.iter_mut().zip(&delta.data) {
                    *a += b;
                }
            }
            None => *slot = Some(delta.clone()),
        }
    }

    fn apply_backward(&mut self, i: usize, g: &Tensor) {
        // Ops moved out by reference patterns; clone small aux data.
        enum Back {
            None,
            One(NodeId, Tensor),
            Two(NodeId, Tensor, NodeId, Tensor),
            Many(Vec<(NodeId, Tensor)>),
        }
        let back = match &self.nodes[i].op {
            Op::Leaf | Op::Detach => Back::None,
            Op::Matmul(a, b) => {
                let (a, b) = (*a, *b);
                let ta = &self.nodes[a.0].value;
                let tb = &self.nodes[b.0].value;
                let da = matmul_nt(g, tb);
                let db = matmul_tn(ta, g);
                Back::Two(a, da, b, db)
            }
            Op::AddBias(a, bias) => {
                let (a, bias) = (*a, *bias);
                let n = self.nodes[bias.0].value.numel();
                let mut db = vec![0.0; n];
                for (k, v) in g.data.iter().enumerate() {
                    db[k % n] += v;
                }
                let bshape = self.nodes[bias.0].value.shape.clone();
                Back::Two(a, g.clone(), bias, Tensor::new(bshape, db))
            }
            Op::Add(a, b) => Back::Two(*a, g.clone(), *b, g.clone()),
            Op::Sub(a, b) => {
                let neg = Tensor::new(g.shape.clone(), g.data.iter().map(|v| -v).collect());
                Back::Two(*a, g.clone(), *b, neg)
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                let ta = &self.nodes[a.0].value;
                let tb = &self.nodes[b.0].value;
                let da = Tensor::new(
                    g.shape.clone(),
                    g.data.iter().zip(&tb.data).map(|(&x, &y)| x * y).collect(),
                );
                let db = Tensor::new(
                    g.shape.clone(),
                    g.data.iter().zip(&ta.data).map(|(&x, &y)| x * y).collect(),
                );
                Back::Two(a, da, b, db)
            }
            Op::Scale(a, c) => {
                let c = *c;
                let da = Tensor::new(g.shape.clone(), g.data.iter().map(|v| v * c).collect());
                Back::One(*a, da)
            }
            Op::Relu(a) => {
                let a = *a;
                let ta = &self.nodes[a.0].value;
                let da = Tensor::new(
                    g.shape.clone(),
                    g.data
                        .iter()
                        .zip(&ta.data)
                        .map(|(&gv, &x)| if x > 0.0 { gv } else { 0.0 })
                        .collect(),
                );
                Back::One(a, da)
            }
            Op::Sigmoid(a) => {
                let a = *a;
                let s = &self.nodes[i].value;
                let da = Tensor::new(
                    g.shape.clone(),
                    g.data
                        .iter()
                        .zip(&s.data)
                        .map(|(&gv, &sv)| gv * sv * (1.0 - sv))
                        .collect(),
                );
                Back::One(a, da)
            }
            Op::Softmax(a) => {
                let a = *a;
                let p = &self.nodes[i].value;
                let dot: f64 = g.data.iter().zip(&p.data).map(|(&gv, &pv)| gv * pv).sum();
                let da = Tensor::new(
                    g.shape.clone(),
                    g.data
                        .iter()
                        .zip(&p.data)
                        .map(|(&gv, &pv)| pv * (gv - dot))
                        .collect(),
                );
                Back::One(a, da)
            }
            Op::SumAll(a) => {
                let a = *a;
                let shape = self.nodes[a.0].value.shape.clone();
                let n = self.nodes[a.0].value.numel();
                Back::One(a, Tensor::new(shape, vec![g.item(); n]))
            }
            Op::MeanAll(a) => {
                let a = *a;
                let shape = self.nodes[a.0].value.shape.clone();
                let n = self.nodes[a.0].value.numel();
                Back::One(a, Tensor::new(shape, vec![g.item() / n as f64; n]))
            }
            Op::Index(a, ix) => {
                let (a, ix) = (*a, *ix);
                let mut da = Tensor::zeros(&self.nodes[a.0].value.shape);
                da.data[ix] = g.item();
                Back::One(a, da)
            }
            Op::ScalarMul(t, s) => {
                let (t, s) = (*t, *s);
                let sv = self.nodes[s.0].value.item();
                let tv = &self.nodes[t.0].value;
                let dt = Tensor::new(g.shape.clone(), g.data.iter().map(|v| v * sv).collect());
                let ds: f64 = g.data.iter().zip(&tv.data).map(|(&gv, &x)| gv * x).sum();
                Back::Two(t, dt, s, Tensor::scalar(ds))
            }
            Op::Concat(parts) => {
                let parts = parts.clone();
                let rows = self.nodes[parts[0].0].value.rows();
                let total: usize = parts.iter().map(|&p| self.nodes[p.0].value.cols()).sum();
                let mut out = Vec::with_capacity(parts.len());
                let mut offset = 0;
                for &p in &parts {
                    let c = self.nodes[p.0].value.cols();
                    let mut dp = Tensor::zeros(&self.nodes[p.0].value.shape);
                    for r in 0..rows {
                        dp.data[r * c..(r + 1) * c]
                            .copy_from_slice(&g.data[r * total + offset..r * total + offset + c]);
                    }
                    offset += c;
                    out.push((p, dp));
                }
                Back::Many(out)
            }
            Op::Embed(table, indices) => {
                let (table, indices) = (*table, indices.clone());
                let dim = self.nodes[table.0].value.shape[1];
                let mut dt = Tensor::zeros(&self.nodes[table.0].value.shape);
                for (pos, &ix) in indices.iter().enumerate() {
                    for d in 0..dim {
                        dt.data[ix * dim + d] += g.data[pos * dim + d];
                    }
                }
                Back::One(table, dt)
            }
            Op::BceWithLogitsMean(logits, labels) => {
                let (logits, labels) = (*logits, labels.clone());
                let t = &self.nodes[logits.0].value;
                let scale = g.item() / labels.len() as f64;
                let da = Tensor::new(
                    t.shape.clone(),
                    t.data
                        .iter()
                        .zip(&labels)
                        .map(|(&z, &y)| scale * (sigmoid(z) - y))
                        .collect(),
                );
                Back::One(logits, da)
            }
            Op::SqDiffMean(a, b) => {
                let (a, b) = (*a, *b);
                let ta = &self.nodes[a.0].value;
                let tb = &self.nodes[b.0].value;
                let scale = 2.0 * g.item() / ta.numel() as f64;
                let da = Tensor::new(
                    ta.shape.clone(),
                    ta.data
                        .iter()
                        .zip(&tb.data)
                        .map(|(&x, &y)| scale * (x - y))
                        .collect(),
                );
                let db = Tensor::new(
                    ta.shape.clone(),
                    da.data.iter().map(|v| -v).collect(),
                );
                Back::Two(a, da, b, db)
            }
            Op::MaxPair(a, b) => {
                let (a, b) = (*a, *b);
                let va = self.nodes[a.0].value.item();
                let vb = self.nodes[b.0].value.item();
                if va >= vb {
                    Back::One(a, g.clone())
                } else {
                    Back::One(b, g.clone())
                }
            }
            Op::StGate(theta) => Back::One(*theta, g.clone()),
        };
        match back {
            Back::None => {}
            Back::One(a, da) => self.accumulate(a, &da),
            Back::Two(a, da, b, db) => {
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }
            Back::Many(v) => {
                for (p, dp) in v {
                    self.accumulate(p, &dp);
                }
            }
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn matmul_raw(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// g [m,n] * b^T [n,k] -> [m,k]
fn matmul_nt(g: &Tensor, b: &Tensor) -> Tensor {
    let (m, n) = (g.shape[0], g.shape[1]);
    let k = b.shape[0];
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        for p in 0..k {
            let brow = &b.data[p * n..(p + 1) * n];
            let grow = &g.data[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for (&gv, &bv) in grow.iter().zip(brow) {
                acc += gv * bv;
            }
            out[i * k + p] = acc;
        }
    }
    Tensor::new(vec![m, k], out)
}

/// a^T [k,m] * g [m,n] -> [k,n]
fn matmul_tn(a: &Tensor, g: &Tensor) -> Tensor {
    let (m, k) = (a.shape[0], a.shape[1]);
    let n = g.shape[1];
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let grow = &g.data[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
    Tensor::new(vec![k, n], out)
}

/// Max relative error between analytic gradients and central differences for a
/// scalar-valued function built from leaf tensors.
pub fn grad_check<F>(f: F, points: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::InvalidParameter(format!(
            "grad_check eps must be in (0, 1e-2], got {eps}"
        )));
    }
    let eval = |pts: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let leaves: Vec<NodeId> = pts.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&mut g, &leaves)?;
        let v = g.value(out).item();
        if !v.is_finite() {
            return Err(Error::Numeric("non-finite function value".into()));
        }
        Ok(v)
    };

    // Analytic gradients.
    let mut graph = Graph::new();
    let leaves: Vec<NodeId> = points.iter().map(|t| graph.leaf(t.clone())).collect();
    let out = f(&mut graph, &leaves)?;
    if !graph.value(out).is_finite() {
        return Err(Error::Numeric("non-finite function value".into()));
    }
    graph.backward(out);
    let analytic: Vec<Tensor> = leaves.iter().map(|&l| graph.grad(l)).collect();

    let mut max_err = 0.0_f64;
    let mut work: Vec<Tensor> = points.to_vec();
    for (ti, t) in points.iter().enumerate() {
        for ci in 0..t.numel() {
            let orig = t.data[ci];
            work[ti].data[ci] = orig + eps;
            let hi = eval(&work)?;
            work[ti].data[ci] = orig - eps;
            let lo = eval(&work)?;
            work[ti].data[ci] = orig;
            let numeric = (hi - lo) / (2.0 * eps);
            let a = analytic[ti].data[ci];
            let err = (a - numeric).abs() / 1.0_f64.max(a.abs());
            max_err = max_err.max(err);
        }
    }
    Ok(max_err)
}
