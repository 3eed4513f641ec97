use crate::error::{Error, Result};

use super::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
}

/// How per-example losses are combined over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduction {
    /// Mean over examples. For MSE this equals the mean over all elements.
    #[default]
    Mean,
    /// Sum over examples of the per-example loss, so the gradient with
    /// respect to one input row is that example's own loss gradient.
    Sum,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary(Elementwise, Var, Var),
    AddBias(Var, Var),
    Relu(Var),
    Concat(Var, Var),
    Sum(Var),
    Mse {
        pred: Var,
        target: Var,
        scale: f64,
    },
    CrossEntropy {
        logits: Var,
        classes: Vec<usize>,
        probs: Vec<f64>,
        scale: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    /// Some `requires_grad` leaf is reachable from this node.
    tracked: bool,
}

/// Reverse-mode recording of tensor operations.
///
/// Nodes are appended in evaluation order, which is a topological order of
/// the graph; [`Tape::backward`] walks them once in reverse. Gradients of
/// `requires_grad` leaves accumulate across `backward` calls until
/// [`Tape::zero_grad`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    /// Records `tensor` as an input. Its `requires_grad` flag decides whether
    /// `backward` computes a gradient for it.
    pub fn leaf(&mut self, mut tensor: Tensor) -> Var {
        let tracked = tensor.requires_grad();
        tensor.zero_grad();
        self.push(tensor, Op::Leaf, tracked)
    }

    pub fn param(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a leaf, if `backward` reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.value.zero_grad();
        }
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::Usage(format!("variable {} is not on this tape", v.0)))
        }
    }

    fn matrix_dims(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        let shape = self.value(v).shape();
        match shape {
            [m, n] => Ok((*m, *n)),
            _ => Err(Error::Dimension(format!(
                "{what} must be a matrix, got shape {shape:?}"
            ))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (m, k) = self.matrix_dims(a, "matmul lhs")?;
        let (k2, n) = self.matrix_dims(b, "matmul rhs")?;
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul inner dims differ: [{m}x{k}] x [{k2}x{n}]"
            )));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), tracked))
    }

    /// Same-shape elementwise op. `Add` additionally accepts a bias vector
    /// `b` of length `cols(a)` broadcast over the rows of a matrix `a`.
    pub fn elementwise(&mut self, a: Var, b: Var, kind: Elementwise) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let tracked = self.tracked(a) || self.tracked(b);
        if va.shape() == vb.shape() {
            let data = va
                .data()
                .iter()
                .zip(vb.data())
                .map(|(x, y)| match kind {
                    Elementwise::Add => x + y,
                    Elementwise::Sub => x - y,
                    Elementwise::Mul => x * y,
                })
                .collect();
            let t = Tensor::new(va.shape().to_vec(), data)?;
            return Ok(self.push(t, Op::Binary(kind, a, b), tracked));
        }
        let is_bias = kind == Elementwise::Add
            && va.shape().len() == 2
            && vb.len() == va.cols()
            && (vb.shape().len() == 1 || vb.rows() == 1);
        if !is_bias {
            return Err(Error::Dimension(format!(
                "{kind:?} on incompatible shapes {:?} and {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let cols = va.cols();
        let data = va
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + vb.data()[i % cols])
            .collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(t, Op::AddBias(a, b), tracked))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, Elementwise::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, Elementwise::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, Elementwise::Mul)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let va = self.value(a);
        let data = va.data().iter().map(|&x| x.max(0.0)).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        let tracked = self.tracked(a);
        Ok(self.push(t, Op::Relu(a), tracked))
    }

    /// Concatenates two matrices with the same number of rows along columns.
    pub fn concat_last_dim(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (m, ca) = self.matrix_dims(a, "concat lhs")?;
        let (m2, cb) = self.matrix_dims(b, "concat rhs")?;
        if m != m2 {
            return Err(Error::Dimension(format!(
                "concat leading dims differ: {m} vs {m2}"
            )));
        }
        let (va, vb) = (self.value(a), self.value(b));
        let mut data = Vec::with_capacity(m * (ca + cb));
        for i in 0..m {
            data.extend_from_slice(va.row(i));
            data.extend_from_slice(vb.row(i));
        }
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(
            Tensor::new(vec![m, ca + cb], data)?,
            Op::Concat(a, b),
            tracked,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let s = self.value(a).data().iter().sum();
        let tracked = self.tracked(a);
        Ok(self.push(Tensor::scalar(s), Op::Sum(a), tracked))
    }

    /// Squared error. With [`Reduction::Mean`] this is the mean over every
    /// element; with [`Reduction::Sum`] it is the sum over rows of each
    /// row's mean squared error.
    pub fn mse_loss(&mut self, pred: Var, target: Var, reduction: Reduction) -> Result<Var> {
        self.check(pred)?;
        self.check(target)?;
        let (vp, vt) = (self.value(pred), self.value(target));
        if vp.shape() != vt.shape() {
            return Err(Error::Dimension(format!(
                "mse on shapes {:?} and {:?}",
                vp.shape(),
                vt.shape()
            )));
        }
        let scale = match reduction {
            Reduction::Mean => 1.0 / vp.len() as f64,
            Reduction::Sum => 1.0 / vp.cols() as f64,
        };
        let sq: f64 = vp
            .data()
            .iter()
            .zip(vt.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        let tracked = self.tracked(pred) || self.tracked(target);
        Ok(self.push(
            Tensor::scalar(scale * sq),
            Op::Mse {
                pred,
                target,
                scale,
            },
            tracked,
        ))
    }

    /// Negative log-softmax of the true class, per row of `logits`.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        classes: &[usize],
        reduction: Reduction,
    ) -> Result<Var> {
        self.check(logits)?;
        let (m, c) = self.matrix_dims(logits, "logits")?;
        if classes.is_empty() {
            return Err(Error::Domain("cross-entropy over an empty batch".into()));
        }
        if classes.len() != m {
            return Err(Error::Dimension(format!(
                "{} class indices for {m} rows of logits",
                classes.len()
            )));
        }
        if let Some(&bad) = classes.iter().find(|&&k| k >= c) {
            return Err(Error::Domain(format!(
                "class index {bad} out of range for {c} classes"
            )));
        }
        let v = self.value(logits);
        let mut probs = Vec::with_capacity(m * c);
        let mut total = 0.0;
        for (i, &k) in classes.iter().enumerate() {
            let row = v.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|x| (x - max).exp()).sum();
            let log_denom = denom.ln() + max;
            total += log_denom - row[k];
            probs.extend(row.iter().map(|x| (x - log_denom).exp()));
        }
        let scale = match reduction {
            Reduction::Mean => 1.0 / m as f64,
            Reduction::Sum => 1.0,
        };
        let tracked = self.tracked(logits);
        Ok(self.push(
            Tensor::scalar(scale * total),
            Op::CrossEntropy {
                logits,
                classes: classes.to_vec(),
                probs,
                scale,
            },
            tracked,
        ))
    }

    /// Propagates d`root`/d`leaf` into every reachable `requires_grad` leaf.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        self.check(root)?;
        if !self.value(root).is_scalar() {
            return Err(Error::Usage(format!(
                "backward from non-scalar of shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        adj[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].tracked {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                if self.nodes[i].value.requires_grad() {
                    self.nodes[i].value.accumulate_grad(&g)?;
                }
                continue;
            }
            match &self.nodes[i].op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let (m, k) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                    let n = self.value(*b).shape()[1];
                    if self.tracked(*a) {
                        // dA = dC · Bᵀ
                        let bt = transpose(self.value(*b).data(), k, n);
                        let da = matmul_raw(&g, &bt, m, n, k);
                        add_into(&mut adj, *a, &da);
                    }
                    if self.tracked(*b) {
                        // dB = Aᵀ · dC
                        let at = transpose(self.value(*a).data(), m, k);
                        let db = matmul_raw(&at, &g, k, m, n);
                        add_into(&mut adj, *b, &db);
                    }
                }
                Op::Binary(kind, a, b) => {
                    let (a, b, kind) = (*a, *b, *kind);
                    if self.tracked(a) {
                        let da: Vec<f64> = match kind {
                            Elementwise::Add | Elementwise::Sub => g.clone(),
                            Elementwise::Mul => mul_slices(&g, self.value(b).data()),
                        };
                        add_into(&mut adj, a, &da);
                    }
                    if self.tracked(b) {
                        let db: Vec<f64> = match kind {
                            Elementwise::Add => g.clone(),
                            Elementwise::Sub => g.iter().map(|x| -x).collect(),
                            Elementwise::Mul => mul_slices(&g, self.value(a).data()),
                        };
                        add_into(&mut adj, b, &db);
                    }
                }
                Op::AddBias(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.tracked(a) {
                        add_into(&mut adj, a, &g);
                    }
                    if self.tracked(b) {
                        let cols = self.value(b).len();
                        let mut db = vec![0.0; cols];
                        for (j, x) in g.iter().enumerate() {
                            db[j % cols] += x;
                        }
                        add_into(&mut adj, b, &db);
                    }
                }
                Op::Relu(a) => {
                    let a = *a;
                    // derivative at exactly 0 is taken as 0
                    let da: Vec<f64> = g
                        .iter()
                        .zip(self.value(a).data())
                        .map(|(d, &x)| if x > 0.0 { *d } else { 0.0 })
                        .collect();
                    add_into(&mut adj, a, &da);
                }
                Op::Concat(a, b) => {
                    let (a, b) = (*a, *b);
                    let ca = self.value(a).cols();
                    let cb = self.value(b).cols();
                    let mut da = Vec::with_capacity(g.len());
                    let mut db = Vec::with_capacity(g.len());
                    for row in g.chunks(ca + cb) {
                        da.extend_from_slice(&row[..ca]);
                        db.extend_from_slice(&row[ca..]);
                    }
                    if self.tracked(a) {
                        add_into(&mut adj, a, &da);
                    }
                    if self.tracked(b) {
                        add_into(&mut adj, b, &db);
                    }
                }
                Op::Sum(a) => {
                    let a = *a;
                    let da = vec![g[0]; self.value(a).len()];
                    add_into(&mut adj, a, &da);
                }
                Op::Mse {
                    pred,
                    target,
                    scale,
                } => {
                    let (p, t, s) = (*pred, *target, *scale);
                    let dp: Vec<f64> = self
                        .value(p)
                        .data()
                        .iter()
                        .zip(self.value(t).data())
                        .map(|(pv, tv)| 2.0 * s * (pv - tv) * g[0])
                        .collect();
                    if self.tracked(t) {
                        let dt: Vec<f64> = dp.iter().map(|x| -x).collect();
                        add_into(&mut adj, t, &dt);
                    }
                    if self.tracked(p) {
                        add_into(&mut adj, p, &dp);
                    }
                }
                Op::CrossEntropy {
                    logits,
                    classes,
                    probs,
                    scale,
                } => {
                    let c = self.value(*logits).cols();
                    let mut dl: Vec<f64> = probs.iter().map(|p| p * scale * g[0]).collect();
                    for (i, &k) in classes.iter().enumerate() {
                        dl[i * c + k] -= scale * g[0];
                    }
                    add_into(&mut adj, *logits, &dl);
                }
            }
        }
        Ok(())
    }
}

fn add_into(adj: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut adj[v.0] {
        Some(buf) => buf.iter_mut().zip(g).for_each(|(b, x)| *b += x),
        slot @ None => *slot = Some(g.to_vec()),
    }
}

fn mul_slices(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a[i * k + p];
            if x == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, y) in row.iter_mut().zip(brow) {
                *o += x * y;
            }
        }
    }
    out
}
