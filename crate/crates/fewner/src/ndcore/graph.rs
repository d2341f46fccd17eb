use super::rng::Rng;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Train mode records dropout masks; eval mode turns dropout into identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Handle into a tape. Only valid for the tape that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

enum Op {
    Leaf { trainable: bool },
    Add(NodeId, NodeId),
    /// m [r, c] + v [1, c] broadcast over rows.
    AddRowVec(NodeId, NodeId),
    /// m [r, c] + v [1, r] broadcast over columns.
    AddColVec(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Matmul(NodeId, NodeId),
    ConcatCols(Vec<NodeId>),
    StackRows(Vec<NodeId>),
    MeanNodes(Vec<NodeId>),
    Row(NodeId, usize),
    SliceCols(NodeId, usize, usize),
    Elem(NodeId, usize, usize),
    Sum(NodeId),
    Mean(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Log(NodeId),
    SoftmaxRows(NodeId),
    /// Saved mask already includes the 1/keep scaling.
    Dropout(NodeId, Tensor),
    SqDist(NodeId, NodeId),
    /// Row lookup into a table; repeated indices accumulate gradient.
    Gather(NodeId, Vec<usize>),
    LogSumExpAll(NodeId),
    /// Reduce over rows: out[0][j] = logsumexp_i(m[i][j]).
    LogSumExpCols(NodeId),
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
}

/// Wengert-list reverse-mode tape. Nodes are appended in evaluation order,
/// so walking the list backwards is a valid reverse topological order.
pub struct Tape {
    nodes: Vec<Node>,
    mode: Mode,
}

impl Tape {
    pub fn new(mode: Mode) -> Self {
        Tape {
            nodes: Vec::new(),
            mode,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient accumulated by `backward`, if any reached this node.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn clear_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Records a non-trainable input. Gradients are not accumulated for it.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf { trainable: false })
    }

    /// Records a trainable parameter; `grad` is populated by `backward`.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf { trainable: true })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let mut out = ta.clone();
        out.add_scaled(tb, 1.0);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn add_row_vec(&mut self, m: NodeId, v: NodeId) -> Result<NodeId> {
        let (tm, tv) = (self.value(m), self.value(v));
        if tv.rows() != 1 || tv.cols() != tm.cols() {
            return Err(Error::shape(
                "add_row_vec",
                format!("{:?} + {:?}", tm.shape(), tv.shape()),
            ));
        }
        let mut out = tm.clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            for (x, v) in row.iter_mut().zip(tv.data()) {
                *x += v;
            }
        }
        Ok(self.push(out, Op::AddRowVec(m, v)))
    }

    pub fn add_col_vec(&mut self, m: NodeId, v: NodeId) -> Result<NodeId> {
        let (tm, tv) = (self.value(m), self.value(v));
        if tv.rows() != 1 || tv.cols() != tm.rows() {
            return Err(Error::shape(
                "add_col_vec",
                format!("{:?} + {:?}", tm.shape(), tv.shape()),
            ));
        }
        let mut out = tm.clone();
        for i in 0..out.rows() {
            let shift = tv.get(0, i);
            for x in out.row_mut(i) {
                *x += shift;
            }
        }
        Ok(self.push(out, Op::AddColVec(m, v)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(
                "mul",
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let out = Tensor::from_fn(ta.rows(), ta.cols(), |i, j| ta.get(i, j) * tb.get(i, j));
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> Result<NodeId> {
        if !k.is_finite() {
            return Err(Error::non_finite(format!("scale factor {k}")));
        }
        let out = self.value(a).map(|v| v * k);
        Ok(self.push(out, Op::Scale(a, k)))
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        self.scale(a, -1.0)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let nb = self.neg(b)?;
        self.add(a, nb)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::Matmul(a, b)))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::shape("concat_cols", "no parts"));
        }
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(Error::shape(
                    "concat_cols",
                    format!("row counts differ: {} vs {}", rows, t.rows()),
                ));
            }
            cols += t.cols();
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let t = self.value(p);
            for i in 0..rows {
                out.row_mut(i)[offset..offset + t.cols()].copy_from_slice(t.row(i));
            }
            offset += t.cols();
        }
        let op = Op::ConcatCols(parts.to_vec());
        Ok(self.push(out, op))
    }

    pub fn stack_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::shape("stack_rows", "no parts"));
        }
        let cols = self.value(parts[0]).cols();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(Error::shape(
                    "stack_rows",
                    format!("col counts differ: {} vs {}", cols, t.cols()),
                ));
            }
            rows += t.rows();
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut r = 0;
        for &p in parts {
            let t = self.value(p);
            for i in 0..t.rows() {
                out.row_mut(r).copy_from_slice(t.row(i));
                r += 1;
            }
        }
        let op = Op::StackRows(parts.to_vec());
        Ok(self.push(out, op))
    }

    /// Elementwise mean over same-shaped nodes.
    pub fn mean_nodes(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::shape("mean_nodes", "no parts"));
        }
        let shape = self.value(parts[0]).shape();
        let mut out = Tensor::zeros(shape.0, shape.1);
        for &p in parts {
            let t = self.value(p);
            if t.shape() != shape {
                return Err(Error::shape(
                    "mean_nodes",
                    format!("{:?} vs {:?}", shape, t.shape()),
                ));
            }
            out.add_scaled(t, 1.0);
        }
        let inv = 1.0 / parts.len() as f64;
        out = out.map(|v| v * inv);
        Ok(self.push(out, Op::MeanNodes(parts.to_vec())))
    }

    pub fn row(&mut self, m: NodeId, i: usize) -> Result<NodeId> {
        let t = self.value(m);
        if i >= t.rows() {
            return Err(Error::shape(
                "row",
                format!("row {i} of {:?}", t.shape()),
            ));
        }
        let out = t.row_tensor(i);
        Ok(self.push(out, Op::Row(m, i)))
    }

    pub fn slice_cols(&mut self, m: NodeId, lo: usize, hi: usize) -> Result<NodeId> {
        let t = self.value(m);
        if lo >= hi || hi > t.cols() {
            return Err(Error::shape(
                "slice_cols",
                format!("[{lo}, {hi}) of {:?}", t.shape()),
            ));
        }
        let mut out = Tensor::zeros(t.rows(), hi - lo);
        for i in 0..t.rows() {
            out.row_mut(i).copy_from_slice(&t.row(i)[lo..hi]);
        }
        Ok(self.push(out, Op::SliceCols(m, lo, hi)))
    }

    pub fn elem(&mut self, m: NodeId, i: usize, j: usize) -> Result<NodeId> {
        let t = self.value(m);
        if i >= t.rows() || j >= t.cols() {
            return Err(Error::shape(
                "elem",
                format!("({i}, {j}) of {:?}", t.shape()),
            ));
        }
        let out = Tensor::scalar(t.get(i, j));
        Ok(self.push(out, Op::Elem(m, i, j)))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let total: f64 = self.value(a).data().iter().sum();
        Ok(self.push(Tensor::scalar(total), Op::Sum(a)))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a);
        let total: f64 = t.data().iter().sum();
        let out = Tensor::scalar(total / t.numel() as f64);
        Ok(self.push(out, Op::Mean(a)))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let out = self.value(a).map(f64::tanh);
        Ok(self.push(out, Op::Tanh(a)))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let out = self.value(a).map(|v| 1.0 / (1.0 + (-v).exp()));
        Ok(self.push(out, Op::Sigmoid(a)))
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        let out = self.value(a).map(f64::exp);
        if !out.is_all_finite() {
            return Err(Error::non_finite("exp output"));
        }
        Ok(self.push(out, Op::Exp(a)))
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        let out = self.value(a).map(f64::ln);
        if !out.is_all_finite() {
            return Err(Error::non_finite("log output"));
        }
        Ok(self.push(out, Op::Log(a)))
    }

    /// Row-wise softmax with max-shift stabilization.
    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a);
        let mut out = Tensor::zeros(t.rows(), t.cols());
        for i in 0..t.rows() {
            let row = t.row(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let o = out.row_mut(i);
            let mut z = 0.0;
            for (j, &x) in row.iter().enumerate() {
                let e = (x - m).exp();
                o[j] = e;
                z += e;
            }
            for v in o.iter_mut() {
                *v /= z;
            }
        }
        Ok(self.push(out, Op::SoftmaxRows(a)))
    }

    /// Inverted dropout. In eval mode or at rate 0 this is the identity and
    /// no node is recorded.
    pub fn dropout(&mut self, a: NodeId, rate: f64, rng: &mut Rng) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Contract(format!("dropout rate {rate} outside [0, 1)")));
        }
        if self.mode == Mode::Eval || rate == 0.0 {
            return Ok(a);
        }
        let t = self.value(a);
        let keep = 1.0 - rate;
        let mask = Tensor::from_fn(t.rows(), t.cols(), |_, _| {
            if rng.uniform() < rate {
                0.0
            } else {
                1.0 / keep
            }
        });
        let out = Tensor::from_fn(t.rows(), t.cols(), |i, j| t.get(i, j) * mask.get(i, j));
        Ok(self.push(out, Op::Dropout(a, mask)))
    }

    /// Squared euclidean distance between same-shaped tensors, as a scalar.
    pub fn sq_dist(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(
                "sq_dist",
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let d: f64 = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        Ok(self.push(Tensor::scalar(d), Op::SqDist(a, b)))
    }

    /// Stacks the given rows of a table into a new matrix. Repeated indices
    /// are allowed and accumulate gradient into the same table row.
    pub fn gather_rows(&mut self, table: NodeId, idx: &[usize]) -> Result<NodeId> {
        if idx.is_empty() {
            return Err(Error::shape("gather_rows", "no indices"));
        }
        let t = self.value(table);
        if let Some(&bad) = idx.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::shape(
                "gather_rows",
                format!("index {bad} of {:?}", t.shape()),
            ));
        }
        let mut out = Tensor::zeros(idx.len(), t.cols());
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(i));
        }
        Ok(self.push(out, Op::Gather(table, idx.to_vec())))
    }

    /// log(sum(exp(x))) over every element, computed with a detached
    /// max-shift so the result is stable and the gradient is exact softmax.
    pub fn logsumexp_all(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a);
        let m = t.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = t.data().iter().map(|&x| (x - m).exp()).sum();
        Ok(self.push(Tensor::scalar(m + z.ln()), Op::LogSumExpAll(a)))
    }

    /// Column-wise logsumexp reducing over rows: [r, c] -> [1, c].
    pub fn logsumexp_cols(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a);
        let mut out = Tensor::zeros(1, t.cols());
        for j in 0..t.cols() {
            let mut m = f64::NEG_INFINITY;
            for i in 0..t.rows() {
                m = m.max(t.get(i, j));
            }
            let mut z = 0.0;
            for i in 0..t.rows() {
                z += (t.get(i, j) - m).exp();
            }
            out.set(0, j, m + z.ln());
        }
        Ok(self.push(out, Op::LogSumExpCols(a)))
    }

    /// Reverse sweep from a scalar root. Leaf gradients accumulate across
    /// repeated calls until `clear_grads`; interior gradients are consumed
    /// by each sweep.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if self.value(root).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got {:?}",
                self.value(root).shape()
            )));
        }
        {
            let node = &mut self.nodes[root.0];
            let shape = node.value.shape();
            node.grad
                .get_or_insert_with(|| Tensor::zeros(shape.0, shape.1))
                .data_mut()[0] += 1.0;
        }
        for i in (0..=root.0).rev() {
            let (head, tail) = self.nodes.split_at_mut(i);
            let node = &mut tail[0];
            if matches!(node.op, Op::Leaf { .. }) {
                continue;
            }
            let Some(g) = node.grad.take() else {
                continue;
            };
            let g = &g;
            let value = &node.value;
            match &node.op {
                Op::Leaf { .. } => unreachable!(),
                Op::Add(a, b) => {
                    acc(head, *a, |d, _| d.add_scaled(g, 1.0));
                    acc(head, *b, |d, _| d.add_scaled(g, 1.0));
                }
                Op::AddRowVec(m, v) => {
                    acc(head, *m, |d, _| d.add_scaled(g, 1.0));
                    acc(head, *v, |d, _| {
                        for i in 0..g.rows() {
                            for (dv, gv) in d.data_mut().iter_mut().zip(g.row(i)) {
                                *dv += gv;
                            }
                        }
                    });
                }
                Op::AddColVec(m, v) => {
                    acc(head, *m, |d, _| d.add_scaled(g, 1.0));
                    acc(head, *v, |d, _| {
                        for i in 0..g.rows() {
                            let s: f64 = g.row(i).iter().sum();
                            d.data_mut()[i] += s;
                        }
                    });
                }
                Op::Mul(a, b) => {
                    let (a_id, b_id) = (*a, *b);
                    let a_val = head[a_id.0].value.clone();
                    let b_val = head[b_id.0].value.clone();
                    acc(head, a_id, |d, _| {
                        for ((dv, gv), bv) in
                            d.data_mut().iter_mut().zip(g.data()).zip(b_val.data())
                        {
                            *dv += gv * bv;
                        }
                    });
                    acc(head, b_id, |d, _| {
                        for ((dv, gv), av) in
                            d.data_mut().iter_mut().zip(g.data()).zip(a_val.data())
                        {
                            *dv += gv * av;
                        }
                    });
                }
                Op::Scale(a, k) => {
                    let k = *k;
                    acc(head, *a, |d, _| d.add_scaled(g, k));
                }
                Op::Matmul(a, b) => {
                    let (a_id, b_id) = (*a, *b);
                    if needs_grad(head, a_id) {
                        let b_val = head[b_id.0].value.clone();
                        acc(head, a_id, |d, _| d.add_matmul_nt(g, &b_val));
                    }
                    if needs_grad(head, b_id) {
                        let a_val = head[a_id.0].value.clone();
                        acc(head, b_id, |d, _| d.add_matmul_tn(&a_val, g));
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = head[p.0].value.cols();
                        acc(head, p, |d, _| {
                            for i in 0..d.rows() {
                                for (dv, gv) in d
                                    .row_mut(i)
                                    .iter_mut()
                                    .zip(&g.row(i)[offset..offset + w])
                                {
                                    *dv += gv;
                                }
                            }
                        });
                        offset += w;
                    }
                }
                Op::StackRows(parts) => {
                    let mut r = 0;
                    for &p in parts {
                        let h = head[p.0].value.rows();
                        acc(head, p, |d, _| {
                            for i in 0..h {
                                for (dv, gv) in d.row_mut(i).iter_mut().zip(g.row(r + i)) {
                                    *dv += gv;
                                }
                            }
                        });
                        r += h;
                    }
                }
                Op::MeanNodes(parts) => {
                    let inv = 1.0 / parts.len() as f64;
                    for &p in parts {
                        acc(head, p, |d, _| d.add_scaled(g, inv));
                    }
                }
                Op::Row(m, i) => {
                    let i = *i;
                    acc(head, *m, |d, _| {
                        for (dv, gv) in d.row_mut(i).iter_mut().zip(g.data()) {
                            *dv += gv;
                        }
                    });
                }
                Op::SliceCols(m, lo, _hi) => {
                    let lo = *lo;
                    acc(head, *m, |d, _| {
                        for i in 0..g.rows() {
                            for (dv, gv) in d.row_mut(i)[lo..lo + g.cols()]
                                .iter_mut()
                                .zip(g.row(i))
                            {
                                *dv += gv;
                            }
                        }
                    });
                }
                Op::Elem(m, i, j) => {
                    let (i, j) = (*i, *j);
                    let gv = g.item();
                    acc(head, *m, |d, _| {
                        let c = d.cols();
                        d.data_mut()[i * c + j] += gv;
                    });
                }
                Op::Sum(a) => {
                    let gv = g.item();
                    acc(head, *a, |d, _| {
                        for dv in d.data_mut() {
                            *dv += gv;
                        }
                    });
                }
                Op::Mean(a) => {
                    let a_id = *a;
                    let n = head[a_id.0].value.numel() as f64;
                    let gv = g.item() / n;
                    acc(head, a_id, |d, _| {
                        for dv in d.data_mut() {
                            *dv += gv;
                        }
                    });
                }
                Op::Tanh(a) => {
                    acc(head, *a, |d, _| {
                        for ((dv, gv), yv) in
                            d.data_mut().iter_mut().zip(g.data()).zip(value.data())
                        {
                            *dv += gv * (1.0 - yv * yv);
                        }
                    });
                }
                Op::Sigmoid(a) => {
                    acc(head, *a, |d, _| {
                        for ((dv, gv), yv) in
                            d.data_mut().iter_mut().zip(g.data()).zip(value.data())
                        {
                            *dv += gv * yv * (1.0 - yv);
                        }
                    });
                }
                Op::Exp(a) => {
                    acc(head, *a, |d, _| {
                        for ((dv, gv), yv) in
                            d.data_mut().iter_mut().zip(g.data()).zip(value.data())
                        {
                            *dv += gv * yv;
                        }
                    });
                }
                Op::Log(a) => {
                    acc(head, *a, |d, x| {
                        for ((dv, gv), xv) in d.data_mut().iter_mut().zip(g.data()).zip(x.data())
                        {
                            *dv += gv / xv;
                        }
                    });
                }
                Op::SoftmaxRows(a) => {
                    acc(head, *a, |d, _| {
                        for i in 0..value.rows() {
                            let yr = value.row(i);
                            let gr = g.row(i);
                            let dot: f64 = yr.iter().zip(gr).map(|(yv, gv)| yv * gv).sum();
                            for ((dv, &yv), &gv) in d.row_mut(i).iter_mut().zip(yr).zip(gr) {
                                *dv += yv * (gv - dot);
                            }
                        }
                    });
                }
                Op::Dropout(a, mask) => {
                    acc(head, *a, |d, _| {
                        for ((dv, gv), mv) in
                            d.data_mut().iter_mut().zip(g.data()).zip(mask.data())
                        {
                            *dv += gv * mv;
                        }
                    });
                }
                Op::SqDist(a, b) => {
                    let (a_id, b_id) = (*a, *b);
                    let a_val = head[a_id.0].value.clone();
                    let b_val = head[b_id.0].value.clone();
                    let gv = g.item();
                    acc(head, a_id, |d, _| {
                        for ((dv, av), bv) in
                            d.data_mut().iter_mut().zip(a_val.data()).zip(b_val.data())
                        {
                            *dv += 2.0 * gv * (av - bv);
                        }
                    });
                    acc(head, b_id, |d, _| {
                        for ((dv, av), bv) in
                            d.data_mut().iter_mut().zip(a_val.data()).zip(b_val.data())
                        {
                            *dv -= 2.0 * gv * (av - bv);
                        }
                    });
                }
                Op::Gather(table, idx) => {
                    acc(head, *table, |d, _| {
                        for (r, &i) in idx.iter().enumerate() {
                            for (dv, gv) in d.row_mut(i).iter_mut().zip(g.row(r)) {
                                *dv += gv;
                            }
                        }
                    });
                }
                Op::LogSumExpAll(a) => {
                    let out = value.item();
                    let gv = g.item();
                    acc(head, *a, |d, x| {
                        for (dv, xv) in d.data_mut().iter_mut().zip(x.data()) {
                            *dv += gv * (xv - out).exp();
                        }
                    });
                }
                Op::LogSumExpCols(a) => {
                    acc(head, *a, |d, x| {
                        let c = x.cols();
                        for i in 0..x.rows() {
                            for j in 0..c {
                                d.data_mut()[i * c + j] +=
                                    g.get(0, j) * (x.get(i, j) - value.get(0, j)).exp();
                            }
                        }
                    });
                }
            }
        }
        Ok(())
    }
}

fn needs_grad(head: &[Node], id: NodeId) -> bool {
    !matches!(head[id.0].op, Op::Leaf { trainable: false })
}

/// Accumulates into a child's gradient buffer, creating it on first touch.
/// Constants are skipped. The closure receives (grad, child value).
fn acc(head: &mut [Node], id: NodeId, f: impl FnOnce(&mut Tensor, &Tensor)) {
    if !needs_grad(head, id) {
        return;
    }
    let child = &mut head[id.0];
    if child.grad.is_none() {
        let (r, c) = child.value.shape();
        child.grad = Some(Tensor::zeros(r, c));
    }
    let Node { value, grad, .. } = child;
    f(grad.as_mut().unwrap(), value);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_accumulates_through_shared_nodes() {
        // y = x*x + x  =>  dy/dx = 2x + 1
        let mut tape = Tape::new(Mode::Train);
        let x = tape.param(Tensor::scalar(3.0));
        let xx = tape.mul(x, x).unwrap();
        let y = tape.add(xx, x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().item(), 7.0);
    }

    #[test]
    fn repeated_backward_accumulates_until_cleared() {
        let mut tape = Tape::new(Mode::Train);
        let x = tape.param(Tensor::scalar(2.0));
        let y = tape.mul(x, x).unwrap();
        tape.backward(y).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().item(), 8.0);
        tape.clear_grads();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().item(), 4.0);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new(Mode::Train);
        let x = tape.param(Tensor::scalar(2.0));
        let c = tape.constant(Tensor::scalar(5.0));
        let y = tape.mul(x, c).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().item(), 5.0);
        assert!(tape.grad(c).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut tape = Tape::new(Mode::Train);
        let x = tape.param(Tensor::zeros(2, 3));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn shape_mismatches_are_reported() {
        let mut tape = Tape::new(Mode::Train);
        let a = tape.param(Tensor::zeros(2, 3));
        let b = tape.param(Tensor::zeros(3, 2));
        assert!(tape.add(a, b).is_err());
        assert!(tape.mul(a, b).is_err());
        assert!(tape.sq_dist(a, b).is_err());
        assert!(tape.row(a, 2).is_err());
        assert!(tape.slice_cols(a, 2, 2).is_err());
        assert!(tape.elem(a, 0, 3).is_err());
    }

    #[test]
    fn log_of_nonpositive_input_is_a_numeric_error() {
        let mut tape = Tape::new(Mode::Train);
        let x = tape.param(Tensor::scalar(-1.0));
        assert!(tape.log(x).is_err());
    }

    #[test]
    fn exp_overflow_is_a_numeric_error() {
        let mut tape = Tape::new(Mode::Train);
        let x = tape.param(Tensor::scalar(800.0));
        assert!(tape.exp(x).is_err());
    }

    #[test]
    fn dropout_is_identity_in_eval_mode() {
        let mut tape = Tape::new(Mode::Eval);
        let mut rng = Rng::seed(1);
        let x = tape.param(Tensor::row_vec(vec![1.0, 2.0, 3.0]).unwrap());
        let y = tape.dropout(x, 0.5, &mut rng).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn dropout_scales_kept_entries_in_train_mode() {
        let mut tape = Tape::new(Mode::Train);
        let mut rng = Rng::seed(9);
        let x = tape.param(Tensor::filled(4, 50, 1.0));
        let y = tape.dropout(x, 0.5, &mut rng).unwrap();
        let vals = tape.value(y).data();
        assert!(vals.iter().all(|&v| v == 0.0 || v == 2.0));
        assert!(vals.iter().any(|&v| v == 0.0));
        assert!(vals.iter().any(|&v| v == 2.0));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::new(Mode::Eval);
        let x = tape.param(Tensor::from_fn(3, 5, |i, j| (i * j) as f64 - 2.0));
        let y = tape.softmax_rows(x).unwrap();
        for i in 0..3 {
            let s: f64 = tape.value(y).row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn logsumexp_is_stable_for_large_inputs() {
        let mut tape = Tape::new(Mode::Eval);
        let x = tape.param(Tensor::row_vec(vec![1000.0, 1000.0]).unwrap());
        let y = tape.logsumexp_all(x).unwrap();
        let got = tape.value(y).item();
        assert!((got - (1000.0 + 2f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn gather_rows_accumulates_repeated_indices() {
        let mut tape = Tape::new(Mode::Train);
        let table = tape.param(Tensor::from_fn(3, 2, |i, j| (i * 2 + j) as f64));
        let picked = tape.gather_rows(table, &[1, 1, 2]).unwrap();
        let y = tape.sum(picked).unwrap();
        tape.backward(y).unwrap();
        let g = tape.grad(table).unwrap();
        assert_eq!(g.row(0), &[0.0, 0.0]);
        assert_eq!(g.row(1), &[2.0, 2.0]);
        assert_eq!(g.row(2), &[1.0, 1.0]);
    }
}
