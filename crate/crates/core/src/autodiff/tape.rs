use super::{AutodiffError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddRowBias(NodeId, NodeId),
    Relu(NodeId),
    Exp(NodeId),
    Log(NodeId),
    SoftmaxRows(NodeId),
    ConcatCols(NodeId, NodeId),
    ConcatRows(NodeId, NodeId),
    Slice { src: NodeId, r0: usize, c0: usize },
    Transpose(NodeId),
    Sum(NodeId),
    Clamp { src: NodeId, lo: f64, hi: f64 },
    LogNormalize { src: NodeId, axis: Axis, offsets: Vec<f64> },
    AugmentDustbin { src: NodeId, z: NodeId },
    Gather { src: NodeId, flat: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records primitive operations in execution order so that
/// [`Tape::backward`] can replay them in reverse.
///
/// Nodes are appended only, so the tape is topologically ordered by
/// construction.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every node on the tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `id`; zeros if the loss does not depend on it.
    pub fn get(&self, id: NodeId) -> Tensor {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[id.0];
                Tensor::zeros(r, c)
            }
        }
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> AutodiffError {
    AutodiffError::ShapeMismatch { op, left: a.shape().to_vec(), right: b.shape().to_vec() }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.map(|x| (x - m).exp()).sum::<f64>().ln()
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        debug_assert!(value.data().iter().all(|x| x.is_finite()), "non-finite value from {op:?}");
        self.nodes.push(Node { value, op, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// Trainable input.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(mismatch("matmul", ta, tb));
        }
        let out = ta.matmul(tb);
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    fn elementwise(&mut self, name: &'static str, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<NodeId, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::matrix(ta.rows(), ta.cols(), data);
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, op, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.elementwise("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.elementwise("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let out = self.value(a).map(|x| x * factor);
        let rg = self.needs(&[a]);
        self.push(out, Op::Scale(a, factor), rg)
    }

    /// Adds a `1×m` bias to every row of an `n×m` matrix. The only
    /// broadcasting operation on the tape.
    pub fn add_row_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(bias));
        if tb.rows() != 1 || tb.cols() != ta.cols() {
            return Err(mismatch("add_row_bias", ta, tb));
        }
        let c = ta.cols();
        let data = ta.data().iter().enumerate().map(|(i, &x)| x + tb.data()[i % c.max(1)]).collect();
        let out = Tensor::matrix(ta.rows(), c, data);
        let rg = self.needs(&[a, bias]);
        Ok(self.push(out, Op::AddRowBias(a, bias), rg))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(|x| x.max(0.0));
        let rg = self.needs(&[a]);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        let out = self.value(a).map(f64::exp);
        if out.data().iter().any(|x| !x.is_finite()) {
            return Err(AutodiffError::NonFinite("exp"));
        }
        let rg = self.needs(&[a]);
        Ok(self.push(out, Op::Exp(a), rg))
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        if self.value(a).data().iter().any(|&x| x <= 0.0) {
            return Err(AutodiffError::Domain("log of non-positive value"));
        }
        let out = self.value(a).map(f64::ln);
        let rg = self.needs(&[a]);
        Ok(self.push(out, Op::Log(a), rg))
    }

    /// Row-wise softmax, computed with max subtraction.
    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let (r, c) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = t.row_slice(i);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let start = data.len();
            data.extend(row.iter().map(|&x| (x - m).exp()));
            let s: f64 = data[start..].iter().sum();
            data[start..].iter_mut().for_each(|x| *x /= s);
        }
        let out = Tensor::matrix(r, c, data);
        let rg = self.needs(&[a]);
        self.push(out, Op::SoftmaxRows(a), rg)
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rows() != tb.rows() {
            return Err(mismatch("concat_cols", ta, tb));
        }
        let (r, ca, cb) = (ta.rows(), ta.cols(), tb.cols());
        let mut data = Vec::with_capacity(r * (ca + cb));
        for i in 0..r {
            data.extend_from_slice(ta.row_slice(i));
            data.extend_from_slice(tb.row_slice(i));
        }
        let out = Tensor::matrix(r, ca + cb, data);
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::ConcatCols(a, b), rg))
    }

    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.cols() {
            return Err(mismatch("concat_rows", ta, tb));
        }
        let mut data = ta.data().to_vec();
        data.extend_from_slice(tb.data());
        let out = Tensor::matrix(ta.rows() + tb.rows(), ta.cols(), data);
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::ConcatRows(a, b), rg))
    }

    /// Sub-block `rows × cols` of `a`.
    pub fn slice(&mut self, a: NodeId, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Result<NodeId, AutodiffError> {
        let t = self.value(a);
        if rows.end > t.rows() || cols.end > t.cols() || rows.start > rows.end || cols.start > cols.end {
            return Err(AutodiffError::ShapeMismatch {
                op: "slice",
                left: t.shape().to_vec(),
                right: vec![rows.end, cols.end],
            });
        }
        let mut data = Vec::with_capacity(rows.len() * cols.len());
        for i in rows.clone() {
            data.extend_from_slice(&t.row_slice(i)[cols.clone()]);
        }
        let out = Tensor::matrix(rows.len(), cols.len(), data);
        let rg = self.needs(&[a]);
        Ok(self.push(out, Op::Slice { src: a, r0: rows.start, c0: cols.start }, rg))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).transpose();
        let rg = self.needs(&[a]);
        self.push(out, Op::Transpose(a), rg)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let out = Tensor::scalar(self.value(a).data().iter().sum());
        let rg = self.needs(&[a]);
        self.push(out, Op::Sum(a), rg)
    }

    /// Elementwise clamp to `[lo, hi]`; the gradient is zero where clamped.
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        let rg = self.needs(&[a]);
        self.push(out, Op::Clamp { src: a, lo, hi }, rg)
    }

    /// Log-domain normalization along `axis`:
    /// `out_ij = z_ij − logsumexp(z_i·) + offsets_i` for rows (and the
    /// transposed rule for columns). One Sinkhorn half-step.
    pub fn log_normalize(&mut self, a: NodeId, axis: Axis, offsets: &[f64]) -> Result<NodeId, AutodiffError> {
        let t = self.value(a);
        let (r, c) = (t.rows(), t.cols());
        let expected = if axis == Axis::Rows { r } else { c };
        if offsets.len() != expected {
            return Err(AutodiffError::ShapeMismatch {
                op: "log_normalize",
                left: t.shape().to_vec(),
                right: vec![offsets.len()],
            });
        }
        let mut out = t.clone();
        if r > 0 && c > 0 {
            let data = out.data_mut();
            match axis {
                Axis::Rows => {
                    for (row, off) in data.chunks_exact_mut(c).zip(offsets) {
                        let lse = log_sum_exp(row.iter().copied());
                        row.iter_mut().for_each(|x| *x += off - lse);
                    }
                }
                Axis::Cols => {
                    let mut max = vec![f64::NEG_INFINITY; c];
                    for row in data.chunks_exact(c) {
                        max.iter_mut().zip(row).for_each(|(m, &x)| *m = m.max(x));
                    }
                    let mut sum = vec![0.0; c];
                    for row in data.chunks_exact(c) {
                        for ((s, &x), &m) in sum.iter_mut().zip(row).zip(&max) {
                            *s += (x - m).exp();
                        }
                    }
                    let shift: Vec<f64> = (0..c)
                        .map(|j| if max[j] == f64::NEG_INFINITY { 0.0 } else { offsets[j] - max[j] - sum[j].ln() })
                        .collect();
                    for row in data.chunks_exact_mut(c) {
                        row.iter_mut().zip(&shift).for_each(|(x, s)| *x += s);
                    }
                }
            }
        }
        let rg = self.needs(&[a]);
        Ok(self.push(out, Op::LogNormalize { src: a, axis, offsets: offsets.to_vec() }, rg))
    }

    /// Appends a dustbin row and column filled with the scalar `z`.
    pub fn augment_dustbin(&mut self, a: NodeId, z: NodeId) -> Result<NodeId, AutodiffError> {
        let (t, tz) = (self.value(a), self.value(z));
        if tz.shape() != [1, 1] {
            return Err(mismatch("augment_dustbin", t, tz));
        }
        let zv = tz.item();
        let (m, n) = (t.rows(), t.cols());
        let mut out = Tensor::filled(m + 1, n + 1, zv);
        for i in 0..m {
            for j in 0..n {
                out.set(i, j, t.get(i, j));
            }
        }
        let rg = self.needs(&[a, z]);
        Ok(self.push(out, Op::AugmentDustbin { src: a, z }, rg))
    }

    /// Picks the listed `(row, col)` entries into a `1×k` row.
    pub fn gather(&mut self, a: NodeId, entries: &[(usize, usize)]) -> Result<NodeId, AutodiffError> {
        let t = self.value(a);
        let (r, c) = (t.rows(), t.cols());
        if let Some(&(i, j)) = entries.iter().find(|&&(i, j)| i >= r || j >= c) {
            return Err(AutodiffError::ShapeMismatch { op: "gather", left: vec![r, c], right: vec![i, j] });
        }
        let flat: Vec<usize> = entries.iter().map(|&(i, j)| i * c + j).collect();
        let out = Tensor::row(flat.iter().map(|&k| t.data()[k]).collect());
        let rg = self.needs(&[a]);
        Ok(self.push(out, Op::Gather { src: a, flat }, rg))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, AutodiffError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(AutodiffError::NonScalarLoss(lv.shape().to_vec()));
        }
        let shapes: Vec<(usize, usize)> = self.nodes.iter().map(|n| (n.value.rows(), n.value.cols())).collect();
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::filled(lv.rows(), lv.cols(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |id: NodeId, delta: Tensor| {
            if !self.nodes[id.0].requires_grad {
                return;
            }
            match &mut grads[id.0] {
                Some(existing) => existing.add_assign(&delta),
                slot => *slot = Some(delta),
            }
        };
        let val = |id: NodeId| &self.nodes[id.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                acc(*a, g.matmul(&val(*b).transpose()));
                acc(*b, val(*a).transpose().matmul(g));
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                acc(*a, zip_map(g, tb, |x, y| x * y));
                acc(*b, zip_map(g, ta, |x, y| x * y));
            }
            Op::Scale(a, f) => acc(*a, g.map(|x| x * f)),
            Op::AddRowBias(a, bias) => {
                acc(*a, g.clone());
                let c = g.cols();
                let mut db = vec![0.0; c];
                for i in 0..g.rows() {
                    for (d, &x) in db.iter_mut().zip(g.row_slice(i)) {
                        *d += x;
                    }
                }
                acc(*bias, Tensor::row(db));
            }
            Op::Relu(a) => acc(*a, zip_map(g, val(*a), |gx, x| if x > 0.0 { gx } else { 0.0 })),
            Op::Exp(a) => acc(*a, zip_map(g, &node.value, |gx, y| gx * y)),
            Op::Log(a) => acc(*a, zip_map(g, val(*a), |gx, x| gx / x)),
            Op::SoftmaxRows(a) => {
                let s = &node.value;
                let mut d = Tensor::zeros(s.rows(), s.cols());
                for i in 0..s.rows() {
                    let dot: f64 = g.row_slice(i).iter().zip(s.row_slice(i)).map(|(x, y)| x * y).sum();
                    for j in 0..s.cols() {
                        d.set(i, j, s.get(i, j) * (g.get(i, j) - dot));
                    }
                }
                acc(*a, d);
            }
            Op::ConcatCols(a, b) => {
                let ca = val(*a).cols();
                let (r, c) = (g.rows(), g.cols());
                let mut ga = Vec::with_capacity(r * ca);
                let mut gb = Vec::with_capacity(r * (c - ca));
                for i in 0..r {
                    let row = g.row_slice(i);
                    ga.extend_from_slice(&row[..ca]);
                    gb.extend_from_slice(&row[ca..]);
                }
                acc(*a, Tensor::matrix(r, ca, ga));
                acc(*b, Tensor::matrix(r, c - ca, gb));
            }
            Op::ConcatRows(a, b) => {
                let ra = val(*a).rows();
                let c = g.cols();
                acc(*a, Tensor::matrix(ra, c, g.data()[..ra * c].to_vec()));
                acc(*b, Tensor::matrix(g.rows() - ra, c, g.data()[ra * c..].to_vec()));
            }
            Op::Slice { src, r0, c0 } => {
                let t = val(*src);
                let mut d = Tensor::zeros(t.rows(), t.cols());
                for i in 0..g.rows() {
                    for j in 0..g.cols() {
                        d.set(r0 + i, c0 + j, g.get(i, j));
                    }
                }
                acc(*src, d);
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::Sum(a) => {
                let t = val(*a);
                acc(*a, Tensor::filled(t.rows(), t.cols(), g.item()));
            }
            Op::Clamp { src, lo, hi } => {
                acc(*src, zip_map(g, val(*src), |gx, x| if x >= *lo && x <= *hi { gx } else { 0.0 }))
            }
            Op::LogNormalize { src, axis, offsets } => {
                let out = &node.value;
                let c = out.cols();
                let mut d = g.clone();
                if c > 0 {
                    let (od, gd) = (out.data(), g.data());
                    match axis {
                        Axis::Rows => {
                            for (i, ((drow, orow), grow)) in d.data_mut().chunks_exact_mut(c).zip(od.chunks_exact(c)).zip(gd.chunks_exact(c)).enumerate() {
                                let gs: f64 = grow.iter().sum();
                                for (dx, &o) in drow.iter_mut().zip(orow) {
                                    *dx -= (o - offsets[i]).exp() * gs;
                                }
                            }
                        }
                        Axis::Cols => {
                            let mut gs = vec![0.0; c];
                            for grow in gd.chunks_exact(c) {
                                gs.iter_mut().zip(grow).for_each(|(s, x)| *s += x);
                            }
                            for (drow, orow) in d.data_mut().chunks_exact_mut(c).zip(od.chunks_exact(c)) {
                                for (j, (dx, &o)) in drow.iter_mut().zip(orow).enumerate() {
                                    *dx -= (o - offsets[j]).exp() * gs[j];
                                }
                            }
                        }
                    }
                }
                acc(*src, d);
            }
            Op::AugmentDustbin { src, z } => {
                let (m, n) = (g.rows() - 1, g.cols() - 1);
                let mut core = Vec::with_capacity(m * n);
                let mut dz = 0.0;
                for i in 0..=m {
                    for j in 0..=n {
                        if i < m && j < n {
                            core.push(g.get(i, j));
                        } else {
                            dz += g.get(i, j);
                        }
                    }
                }
                acc(*src, Tensor::matrix(m, n, core));
                acc(*z, Tensor::scalar(dz));
            }
            Op::Gather { src, flat } => {
                let t = val(*src);
                let mut d = Tensor::zeros(t.rows(), t.cols());
                for (k, &f) in flat.iter().enumerate() {
                    d.data_mut()[f] += g.data()[k];
                }
                acc(*src, d);
            }
        }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::matrix(a.rows(), a.cols(), a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect())
}
