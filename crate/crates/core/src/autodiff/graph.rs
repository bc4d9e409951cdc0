use std::collections::HashMap;
use std::sync::Arc;

use super::array::{axpy, dot, log_sum_exp, matvec_into, sigmoid, softmax_in_place, Array};
use super::AutodiffError;

/// Index of a node inside a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

/// Values supplied for input leaves at evaluation time.
pub type Bindings = HashMap<NodeId, Array>;

#[derive(Clone, Debug)]
pub enum Op {
    /// Leaf whose value is supplied through [`Bindings`].
    Input,
    /// Non-trainable leaf with a stored value.
    Constant(Array),
    /// Trainable leaf.
    Param { name: String, value: Arc<Array> },
    /// `[m×k] · [k] -> [m]`
    MatVec(NodeId, NodeId),
    /// `[m] · [m×k] -> [k]`, i.e. `wᵀx`.
    VecMat(NodeId, NodeId),
    /// `[m×k] · [n×k]ᵀ -> [m×n]`
    MatMulT(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// Adds a `[c]` vector to every row of an `[r×c]` matrix.
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId, f64),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Log(NodeId),
    Softmax(NodeId),
    Concat(Vec<NodeId>),
    /// Stacks equal-length vectors as the rows of a matrix.
    Stack(Vec<NodeId>),
    Slice {
        input: NodeId,
        start: usize,
        len: usize,
    },
    /// Row `index` of a `[V×E]` table.
    Gather { table: NodeId, index: usize },
    /// `-log softmax(logits)[target]`
    CrossEntropy { logits: NodeId, target: usize },
    Sum(NodeId),
    AddN(Vec<NodeId>),
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        use Op::*;
        match self {
            Input | Constant(_) | Param { .. } => Vec::new(),
            MatVec(a, b) | VecMat(a, b) | MatMulT(a, b) | Add(a, b) | AddRow(a, b) | Mul(a, b) => {
                vec![*a, *b]
            }
            Scale(a, _) | AddScalar(a, _) | Tanh(a) | Sigmoid(a) | Log(a) | Softmax(a) | Sum(a) => {
                vec![*a]
            }
            Slice { input, .. } => vec![*input],
            Gather { table, .. } => vec![*table],
            CrossEntropy { logits, .. } => vec![*logits],
            Concat(v) | Stack(v) | AddN(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    requires_grad: bool,
}

/// A computation graph recorded in topological order.
///
/// Nodes are appended by the builder methods; every input of a node is
/// created before the node itself, so the graph is acyclic by construction.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    /// Ids of every trainable leaf, in creation order.
    pub fn parameters(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.op, Op::Param { .. }))
            .map(|(i, _)| NodeId(i))
            .collect()
    }

    fn push(&mut self, op: Op) -> NodeId {
        let requires_grad = match &op {
            Op::Param { .. } => true,
            Op::Input | Op::Constant(_) => false,
            other => other.inputs().iter().any(|i| self.nodes[i.0].requires_grad),
        };
        for input in op.inputs() {
            assert!(input.0 < self.nodes.len(), "node input {input:?} does not exist yet");
        }
        self.nodes.push(Node { op, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self) -> NodeId {
        self.push(Op::Input)
    }

    pub fn constant(&mut self, value: Array) -> NodeId {
        self.push(Op::Constant(value))
    }

    pub fn param(&mut self, name: &str, value: Arc<Array>) -> NodeId {
        self.push(Op::Param {
            name: name.to_string(),
            value,
        })
    }

    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> NodeId {
        self.push(Op::MatVec(w, x))
    }

    pub fn vecmat(&mut self, x: NodeId, w: NodeId) -> NodeId {
        self.push(Op::VecMat(x, w))
    }

    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    pub fn add_row(&mut self, m: NodeId, v: NodeId) -> NodeId {
        self.push(Op::AddRow(m, v))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        self.push(Op::Scale(a, factor))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        self.push(Op::AddScalar(a, c))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sigmoid(a))
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Log(a))
    }

    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Softmax(a))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        self.push(Op::Concat(parts.to_vec()))
    }

    pub fn stack(&mut self, rows: &[NodeId]) -> NodeId {
        self.push(Op::Stack(rows.to_vec()))
    }

    pub fn slice(&mut self, input: NodeId, start: usize, len: usize) -> NodeId {
        self.push(Op::Slice { input, start, len })
    }

    pub fn gather(&mut self, table: NodeId, index: usize) -> NodeId {
        self.push(Op::Gather { table, index })
    }

    pub fn cross_entropy(&mut self, logits: NodeId, target: usize) -> NodeId {
        self.push(Op::CrossEntropy { logits, target })
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum(a))
    }

    pub fn add_n(&mut self, terms: &[NodeId]) -> NodeId {
        self.push(Op::AddN(terms.to_vec()))
    }

    /// Computes every node once, in order.
    pub fn evaluate(&self, bindings: Bindings) -> Result<Values<'_>, AutodiffError> {
        let mut values = Values {
            graph: self,
            bound: bindings,
            computed: Vec::with_capacity(self.nodes.len()),
        };
        for (i, node) in self.nodes.iter().enumerate() {
            let id = NodeId(i);
            let out = match &node.op {
                Op::Input => {
                    let v = values.bound.get(&id).ok_or(AutodiffError::Unbound { node: i })?;
                    if !v.all_finite() {
                        return Err(AutodiffError::NonFinite { node: i });
                    }
                    None
                }
                Op::Constant(_) | Op::Param { .. } => None,
                op => {
                    let out = forward(op, &values).map_err(|detail| AutodiffError::ShapeMismatch {
                        node: i,
                        detail,
                    })?;
                    if !out.all_finite() {
                        return Err(AutodiffError::NonFinite { node: i });
                    }
                    Some(out)
                }
            };
            values.computed.push(out);
        }
        Ok(values)
    }

    /// Reverse-mode pass from a scalar `seed`.
    ///
    /// Returns the derivative of the seed with respect to every parameter
    /// leaf; parameters the seed does not depend on receive exact zeros.
    pub fn backward(&self, values: &Values<'_>, seed: NodeId) -> Result<Gradients, AutodiffError> {
        let seed_val = values.get(seed);
        if seed_val.len() != 1 {
            return Err(AutodiffError::NonScalarSeed {
                node: seed.0,
                len: seed_val.len(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[seed.0] = Some(vec![1.0]);
        let mut params = HashMap::new();

        for i in (0..=seed.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                if let Op::Param { value, .. } = &node.op {
                    params.insert(NodeId(i), Array::zeros(value.shape()));
                }
                continue;
            };
            if let Op::Param { value, .. } = &node.op {
                params.insert(
                    NodeId(i),
                    Array::from_parts_unchecked(value.shape().to_vec(), g),
                );
                continue;
            }
            backprop(&self.nodes, i, &g, values, &mut grads);
        }
        // Parameters created after the seed cannot influence it.
        for (i, node) in self.nodes.iter().enumerate().skip(seed.0 + 1) {
            if let Op::Param { value, .. } = &node.op {
                params.insert(NodeId(i), Array::zeros(value.shape()));
            }
        }
        Ok(Gradients { by_node: params })
    }
}

/// Node outputs produced by [`Graph::evaluate`].
pub struct Values<'g> {
    graph: &'g Graph,
    bound: Bindings,
    computed: Vec<Option<Array>>,
}

impl<'g> Values<'g> {
    pub fn get(&self, id: NodeId) -> &Array {
        if let Some(Some(v)) = self.computed.get(id.0) {
            return v;
        }
        match &self.graph.nodes[id.0].op {
            Op::Constant(a) => a,
            Op::Param { value, .. } => value,
            Op::Input => &self.bound[&id],
            _ => panic!("node {} has not been evaluated", id.0),
        }
    }

    /// Owned copy of every node output, keyed by node id.
    pub fn to_map(&self) -> HashMap<NodeId, Array> {
        (0..self.computed.len())
            .map(|i| (NodeId(i), self.get(NodeId(i)).clone()))
            .collect()
    }
}

/// Parameter gradients keyed by parameter node.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    by_node: HashMap<NodeId, Array>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Array> {
        self.by_node.get(&id)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Array> {
        self.by_node.remove(&id)
    }

    pub fn len(&self) -> usize {
        self.by_node.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_node.is_empty()
    }
}

fn expect_rank(a: &Array, rank: usize, what: &str) -> Result<(), String> {
    if a.rank() != rank {
        return Err(format!("{what}: expected rank {rank}, got shape {:?}", a.shape()));
    }
    Ok(())
}

fn forward(op: &Op, vals: &Values<'_>) -> Result<Array, String> {
    use Op::*;
    let out = match op {
        Input | Constant(_) | Param { .. } => unreachable!("leaves are not computed"),
        MatVec(w, x) => {
            let (w, x) = (vals.get(*w), vals.get(*x));
            expect_rank(w, 2, "matvec weight")?;
            expect_rank(x, 1, "matvec vector")?;
            if w.cols() != x.len() {
                return Err(format!("matvec {:?} · {:?}", w.shape(), x.shape()));
            }
            let mut out = vec![0.0; w.rows()];
            matvec_into(w.data(), x.data(), &mut out);
            Array::from_parts_unchecked(vec![w.rows()], out)
        }
        VecMat(x, w) => {
            let (x, w) = (vals.get(*x), vals.get(*w));
            expect_rank(w, 2, "vecmat weight")?;
            expect_rank(x, 1, "vecmat vector")?;
            if w.rows() != x.len() {
                return Err(format!("vecmat {:?} · {:?}", x.shape(), w.shape()));
            }
            let mut out = vec![0.0; w.cols()];
            for (r, &xr) in x.data().iter().enumerate() {
                axpy(xr, w.row(r), &mut out);
            }
            Array::from_parts_unchecked(vec![w.cols()], out)
        }
        MatMulT(a, b) => {
            let (a, b) = (vals.get(*a), vals.get(*b));
            expect_rank(a, 2, "matmul_t left")?;
            expect_rank(b, 2, "matmul_t right")?;
            if a.cols() != b.cols() {
                return Err(format!("matmul_t {:?} · {:?}ᵀ", a.shape(), b.shape()));
            }
            let (m, n) = (a.rows(), b.rows());
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    out[i * n + j] = dot(a.row(i), b.row(j));
                }
            }
            Array::from_parts_unchecked(vec![m, n], out)
        }
        Add(a, b) | Mul(a, b) => {
            let (x, y) = (vals.get(*a), vals.get(*b));
            if x.shape() != y.shape() {
                return Err(format!("elementwise {:?} vs {:?}", x.shape(), y.shape()));
            }
            let data = if matches!(op, Add(..)) {
                x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect()
            } else {
                x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect()
            };
            Array::from_parts_unchecked(x.shape().to_vec(), data)
        }
        AddRow(m, v) => {
            let (m, v) = (vals.get(*m), vals.get(*v));
            expect_rank(m, 2, "add_row matrix")?;
            expect_rank(v, 1, "add_row vector")?;
            if m.cols() != v.len() {
                return Err(format!("add_row {:?} + {:?}", m.shape(), v.shape()));
            }
            let mut out = m.clone();
            for r in 0..out.rows() {
                axpy(1.0, v.data(), out.row_mut(r));
            }
            out
        }
        Scale(a, c) => map(vals.get(*a), |x| x * c),
        AddScalar(a, c) => map(vals.get(*a), |x| x + c),
        Tanh(a) => map(vals.get(*a), f64::tanh),
        Sigmoid(a) => map(vals.get(*a), sigmoid),
        Log(a) => map(vals.get(*a), f64::ln),
        Softmax(a) => {
            let a = vals.get(*a);
            expect_rank(a, 1, "softmax")?;
            let mut out = a.clone();
            softmax_in_place(out.data_mut());
            out
        }
        Concat(parts) => {
            let mut data = Vec::new();
            for p in parts {
                let v = vals.get(*p);
                expect_rank(v, 1, "concat part")?;
                data.extend_from_slice(v.data());
            }
            if data.is_empty() {
                return Err("concat of nothing".into());
            }
            Array::from_parts_unchecked(vec![data.len()], data)
        }
        Stack(rows) => {
            let width = rows.first().map(|r| vals.get(*r).len()).ok_or("stack of nothing")?;
            let mut data = Vec::with_capacity(width * rows.len());
            for r in rows {
                let v = vals.get(*r);
                expect_rank(v, 1, "stack row")?;
                if v.len() != width {
                    return Err(format!("stack row of length {} vs {width}", v.len()));
                }
                data.extend_from_slice(v.data());
            }
            Array::from_parts_unchecked(vec![rows.len(), width], data)
        }
        Slice { input, start, len } => {
            let v = vals.get(*input);
            expect_rank(v, 1, "slice")?;
            if *len == 0 || start + len > v.len() {
                return Err(format!("slice {start}..{} of length {}", start + len, v.len()));
            }
            Array::from_parts_unchecked(vec![*len], v.data()[*start..start + len].to_vec())
        }
        Gather { table, index } => {
            let t = vals.get(*table);
            expect_rank(t, 2, "gather table")?;
            if *index >= t.rows() {
                return Err(format!("gather row {index} of {} rows", t.rows()));
            }
            Array::from_parts_unchecked(vec![t.cols()], t.row(*index).to_vec())
        }
        CrossEntropy { logits, target } => {
            let l = vals.get(*logits);
            expect_rank(l, 1, "cross_entropy logits")?;
            if *target >= l.len() {
                return Err(format!("cross_entropy target {target} of {}", l.len()));
            }
            Array::scalar(log_sum_exp(l.data()) - l.data()[*target])
        }
        Sum(a) => Array::scalar(vals.get(*a).data().iter().sum()),
        AddN(terms) => {
            let first = vals.get(*terms.first().ok_or("add_n of nothing")?);
            let mut out = first.clone();
            for t in &terms[1..] {
                let v = vals.get(*t);
                if v.shape() != out.shape() {
                    return Err(format!("add_n {:?} vs {:?}", v.shape(), out.shape()));
                }
                axpy(1.0, v.data(), out.data_mut());
            }
            out
        }
    };
    Ok(out)
}

fn map(a: &Array, f: impl Fn(f64) -> f64) -> Array {
    Array::from_parts_unchecked(a.shape().to_vec(), a.data().iter().map(|&x| f(x)).collect())
}

fn slot<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], vals: &Values<'_>, id: NodeId) -> Option<&'a mut Vec<f64>> {
    if !nodes[id.0].requires_grad {
        return None;
    }
    let len = vals.get(id).len();
    Some(grads[id.0].get_or_insert_with(|| vec![0.0; len]))
}

fn backprop(nodes: &[Node], i: usize, g: &[f64], vals: &Values<'_>, grads: &mut [Option<Vec<f64>>]) {
    use Op::*;
    let out = vals.get(NodeId(i));
    match &nodes[i].op {
        Input | Constant(_) | Param { .. } => {}
        MatVec(w, x) => {
            let (wv, xv) = (vals.get(*w), vals.get(*x));
            let k = xv.len();
            if let Some(gw) = slot(nodes, grads, vals, *w) {
                for (r, &gr) in g.iter().enumerate() {
                    if gr != 0.0 {
                        axpy(gr, xv.data(), &mut gw[r * k..(r + 1) * k]);
                    }
                }
            }
            if let Some(gx) = slot(nodes, grads, vals, *x) {
                for (r, &gr) in g.iter().enumerate() {
                    if gr != 0.0 {
                        axpy(gr, wv.row(r), gx);
                    }
                }
            }
        }
        VecMat(x, w) => {
            let (xv, wv) = (vals.get(*x), vals.get(*w));
            let k = wv.cols();
            if let Some(gx) = slot(nodes, grads, vals, *x) {
                for (r, gxr) in gx.iter_mut().enumerate() {
                    *gxr += dot(wv.row(r), g);
                }
            }
            if let Some(gw) = slot(nodes, grads, vals, *w) {
                for (r, &xr) in xv.data().iter().enumerate() {
                    axpy(xr, g, &mut gw[r * k..(r + 1) * k]);
                }
            }
        }
        MatMulT(a, b) => {
            let (av, bv) = (vals.get(*a), vals.get(*b));
            let (m, n, k) = (av.rows(), bv.rows(), av.cols());
            if let Some(ga) = slot(nodes, grads, vals, *a) {
                for ii in 0..m {
                    for j in 0..n {
                        axpy(g[ii * n + j], bv.row(j), &mut ga[ii * k..(ii + 1) * k]);
                    }
                }
            }
            if let Some(gb) = slot(nodes, grads, vals, *b) {
                for ii in 0..m {
                    for j in 0..n {
                        axpy(g[ii * n + j], av.row(ii), &mut gb[j * k..(j + 1) * k]);
                    }
                }
            }
        }
        Add(a, b) => {
            for id in [a, b] {
                if let Some(ga) = slot(nodes, grads, vals, *id) {
                    axpy(1.0, g, ga);
                }
            }
        }
        AddRow(m, v) => {
            if let Some(gm) = slot(nodes, grads, vals, *m) {
                axpy(1.0, g, gm);
            }
            if let Some(gv) = slot(nodes, grads, vals, *v) {
                let c = gv.len();
                for row in g.chunks(c) {
                    axpy(1.0, row, gv);
                }
            }
        }
        Mul(a, b) => {
            let (av, bv) = (vals.get(*a), vals.get(*b));
            if let Some(ga) = slot(nodes, grads, vals, *a) {
                for ((d, gi), bi) in ga.iter_mut().zip(g).zip(bv.data()) {
                    *d += gi * bi;
                }
            }
            if let Some(gb) = slot(nodes, grads, vals, *b) {
                for ((d, gi), ai) in gb.iter_mut().zip(g).zip(av.data()) {
                    *d += gi * ai;
                }
            }
        }
        Scale(a, c) => {
            if let Some(ga) = slot(nodes, grads, vals, *a) {
                axpy(*c, g, ga);
            }
        }
        AddScalar(a, _) => {
            if let Some(ga) = slot(nodes, grads, vals, *a) {
                axpy(1.0, g, ga);
            }
        }
        Tanh(a) => {
            if let Some(ga) = slot(nodes, grads, vals, *a) {
                for ((d, gi), y) in ga.iter_mut().zip(g).zip(out.data()) {
                    *d += gi * (1.0 - y * y);
                }
            }
        }
        Sigmoid(a) => {
            if let Some(ga) = slot(nodes, grads, vals, *a) {
                for ((d, gi), y) in ga.iter_mut().zip(g).zip(out.data()) {
                    *d += gi * y * (1.0 - y);
                }
            }
        }
        Log(a) => {
            let av = vals.get(*a);
            if let Some(ga) = slot(nodes, grads, vals, *a) {
                for ((d, gi), x) in ga.iter_mut().zip(g).zip(av.data()) {
                    *d += gi / x;
                }
            }
        }
        Softmax(a) => {
            if let Some(ga) = slot(nodes, grads, vals, *a) {
                let gy = dot(g, out.data());
                for ((d, gi), y) in ga.iter_mut().zip(g).zip(out.data()) {
                    *d += y * (gi - gy);
                }
            }
        }
        Concat(parts) => {
            let mut offset = 0;
            for p in parts {
                let len = vals.get(*p).len();
                if let Some(gp) = slot(nodes, grads, vals, *p) {
                    axpy(1.0, &g[offset..offset + len], gp);
                }
                offset += len;
            }
        }
        Stack(rows) => {
            let width = out.cols();
            for (r, p) in rows.iter().enumerate() {
                if let Some(gp) = slot(nodes, grads, vals, *p) {
                    axpy(1.0, &g[r * width..(r + 1) * width], gp);
                }
            }
        }
        Slice { input, start, len } => {
            if let Some(gi) = slot(nodes, grads, vals, *input) {
                axpy(1.0, g, &mut gi[*start..start + len]);
            }
        }
        Gather { table, index } => {
            let e = out.len();
            if let Some(gt) = slot(nodes, grads, vals, *table) {
                axpy(1.0, g, &mut gt[index * e..(index + 1) * e]);
            }
        }
        CrossEntropy { logits, target } => {
            let mut p = vals.get(*logits).data().to_vec();
            softmax_in_place(&mut p);
            p[*target] -= 1.0;
            if let Some(gl) = slot(nodes, grads, vals, *logits) {
                axpy(g[0], &p, gl);
            }
        }
        Sum(a) => {
            if let Some(ga) = slot(nodes, grads, vals, *a) {
                for d in ga.iter_mut() {
                    *d += g[0];
                }
            }
        }
        AddN(terms) => {
            for t in terms {
                if let Some(gt) = slot(nodes, grads, vals, *t) {
                    axpy(1.0, g, gt);
                }
            }
        }
    }
}
