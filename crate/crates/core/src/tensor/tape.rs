use super::{gemm_acc, gemm_at_acc, gemm_bt_acc, Tensor};
use crate::error::{Error, Result};

/// Fill value for masked logits. Finite, so every stored value stays finite,
/// but far enough below any real logit that `exp` underflows to exactly zero.
pub const MASKED_LOGIT: f64 = -1e30;

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    MeanRows(Var),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    CrossEntropy {
        logits: Var,
        target: usize,
        probs: Vec<f64>,
    },
    Sum(Var),
    BasisCombine {
        coeffs: Var,
        row: usize,
        bases: Vec<Var>,
    },
    MaskFill(Var, Vec<bool>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Linear record of executed ops. Var indices are topologically ordered by
/// construction, so the reverse pass is a single backwards sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn as_matrix(shape: &[usize]) -> Option<(usize, usize)> {
    match shape.len() {
        1 => Some((1, shape[0])),
        2 => Some((shape[0], shape[1])),
        _ => None,
    }
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

    /// Records a leaf; its `requires_grad` flag is kept as given.
    pub fn leaf(&mut self, mut value: Tensor) -> Var {
        value.grad = None;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, mut value: Tensor) -> Var {
        value.requires_grad = false;
        self.leaf(value)
    }

    pub fn param(&mut self, mut value: Tensor) -> Var {
        value.requires_grad = true;
        self.leaf(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    /// Gradient of a leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|&v| self.requires(v));
        self.nodes.push(Node {
            value: Tensor {
                shape,
                data,
                requires_grad,
                grad: None,
            },
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn matrix(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        as_matrix(self.shape(v)).ok_or_else(|| Error::shape(op, self.shape(v), &[]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm_acc(&self.value(a).data, &self.value(b).data, &mut out, m, k, n);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ` for `a: [m×k]`, `b: [n×k]`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::shape("matmul_bt", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let mut out = vec![0.0; m * n];
        gemm_bt_acc(&self.value(a).data, &self.value(b).data, &mut out, m, k, n);
        Ok(self.push(vec![m, n], out, Op::MatMulBt(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("add", self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, data, Op::Add(a, b), &[a, b]))
    }

    /// Adds a length-`n` bias to every row of an `[m×n]` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.matrix(a, "add_row")?;
        if self.value(bias).numel() != n {
            return Err(Error::shape("add_row", self.shape(a), self.shape(bias)));
        }
        let b = &self.value(bias).data;
        let mut data = self.value(a).data.clone();
        for i in 0..m {
            for (x, y) in data[i * n..(i + 1) * n].iter_mut().zip(b) {
                *x += y;
            }
        }
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, data, Op::AddRow(a, bias), &[a, bias]))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("hadamard", self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, data, Op::Hadamard(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let data = self.value(a).data.iter().map(|x| x * c).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, data, Op::Scale(a, c), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let data = self.value(a).data.iter().map(|&x| x.max(0.0)).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, data, Op::Relu(a), &[a])
    }

    /// Row-wise softmax with per-row max subtraction. A 1-D input is one row.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.matrix(a, "softmax_rows")?;
        let mut data = self.value(a).data.clone();
        for i in 0..m {
            softmax_in_place(&mut data[i * n..(i + 1) * n]);
        }
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, data, Op::SoftmaxRows(a), &[a]))
    }

    /// Normalizes each row to zero mean and unit variance, then applies
    /// `gamma * x̂ + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (m, n) = self.matrix(x, "layer_norm")?;
        if self.value(gamma).numel() != n || self.value(beta).numel() != n {
            return Err(Error::shape("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let xs = &self.value(x).data;
        let g = &self.value(gamma).data;
        let b = &self.value(beta).data;
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xs[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[i] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[i * n + j] = h;
                out[i * n + j] = g[j] * h + b[j];
            }
        }
        let shape = self.shape(x).to_vec();
        Ok(self.push(
            shape,
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        ))
    }

    /// Concatenates matrices along the last dimension.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat_cols of zero tensors".into()))?;
        let (m, _) = self.matrix(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != m {
                return Err(Error::shape("concat_cols", self.shape(first), s));
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; m * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = &self.value(p).data;
            for i in 0..m {
                data[i * total + offset..i * total + offset + w]
                    .copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        Ok(self.push(vec![m, total], data, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Stacks matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat_rows of zero tensors".into()))?;
        let (_, n) = self.matrix(first, "concat_rows")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (m, c) = self.matrix(p, "concat_rows")?;
            if c != n {
                return Err(Error::shape(
                    "concat_rows",
                    self.shape(first),
                    self.shape(p),
                ));
            }
            rows += m;
            data.extend_from_slice(&self.value(p).data);
        }
        Ok(self.push(vec![rows, n], data, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.matrix(a, "slice_rows")?;
        if start > end || end > m {
            return Err(Error::Index {
                index: end,
                len: m,
                context: "slice_rows",
            });
        }
        let data = self.value(a).data[start * n..end * n].to_vec();
        Ok(self.push(vec![end - start, n], data, Op::SliceRows(a, start), &[a]))
    }

    /// Column means as a `[1×n]` matrix.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.matrix(a, "mean_rows")?;
        if m == 0 {
            return Err(Error::Contract("mean_rows of an empty matrix".into()));
        }
        let src = &self.value(a).data;
        let mut data = vec![0.0; n];
        for i in 0..m {
            for (d, s) in data.iter_mut().zip(&src[i * n..(i + 1) * n]) {
                *d += s;
            }
        }
        data.iter_mut().for_each(|d| *d /= m as f64);
        Ok(self.push(vec![1, n], data, Op::MeanRows(a), &[a]))
    }

    /// Embedding lookup: row `ids[r]` of `table` becomes output row `r`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (m, n) = self.matrix(table, "gather_rows")?;
        let src = &self.value(table).data;
        let mut data = Vec::with_capacity(ids.len() * n);
        for &id in ids {
            if id >= m {
                return Err(Error::Index {
                    index: id,
                    len: m,
                    context: "gather_rows",
                });
            }
            data.extend_from_slice(&src[id * n..(id + 1) * n]);
        }
        Ok(self.push(
            vec![ids.len(), n],
            data,
            Op::GatherRows(table, ids.to_vec()),
            &[table],
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(a).numel() {
            return Err(Error::shape("reshape", self.shape(a), shape));
        }
        let data = self.value(a).data.clone();
        Ok(self.push(shape.to_vec(), data, Op::Reshape(a), &[a]))
    }

    /// `-log softmax(logits)[target]` for a single logit vector, via log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let n = self.value(logits).numel();
        if target >= n {
            return Err(Error::Index {
                index: target,
                len: n,
                context: "cross_entropy target",
            });
        }
        let x = &self.value(logits).data;
        let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = x.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        let loss = lse - x[target];
        let probs = x.iter().map(|v| (v - lse).exp()).collect();
        Ok(self.push(
            vec![],
            vec![loss],
            Op::CrossEntropy {
                logits,
                target,
                probs,
            },
            &[logits],
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(vec![], vec![s], Op::Sum(a), &[a])
    }

    /// `Σ_b coeffs[row, b] · bases[b]`: one relation's weight from a shared basis.
    pub fn basis_combine(&mut self, coeffs: Var, row: usize, bases: &[Var]) -> Result<Var> {
        let (r, b) = self.matrix(coeffs, "basis_combine")?;
        if row >= r {
            return Err(Error::Index {
                index: row,
                len: r,
                context: "basis_combine relation",
            });
        }
        if bases.len() != b || b == 0 {
            return Err(Error::shape(
                "basis_combine",
                self.shape(coeffs),
                &[bases.len()],
            ));
        }
        let shape = self.shape(bases[0]).to_vec();
        let mut data = vec![0.0; self.value(bases[0]).numel()];
        for (j, &v) in bases.iter().enumerate() {
            if self.shape(v) != shape.as_slice() {
                return Err(Error::shape("basis_combine", &shape, self.shape(v)));
            }
            let c = self.value(coeffs).data[row * b + j];
            for (d, s) in data.iter_mut().zip(&self.value(v).data) {
                *d += c * s;
            }
        }
        let mut inputs = vec![coeffs];
        inputs.extend_from_slice(bases);
        Ok(self.push(
            shape,
            data,
            Op::BasisCombine {
                coeffs,
                row,
                bases: bases.to_vec(),
            },
            &inputs,
        ))
    }

    /// Replaces entries where `mask` is true with [`MASKED_LOGIT`]; they get no gradient.
    pub fn mask_fill(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        if mask.len() != self.value(a).numel() {
            return Err(Error::shape("mask_fill", self.shape(a), &[mask.len()]));
        }
        let data = self
            .value(a)
            .data
            .iter()
            .zip(mask)
            .map(|(&x, &m)| if m { MASKED_LOGIT } else { x })
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, data, Op::MaskFill(a, mask.to_vec()), &[a]))
    }

    /// Composite: `x · w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    /// Reverse sweep from a scalar root; every `requires_grad` leaf ends up
    /// holding `∂root/∂leaf` (zeros when unreachable).
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if root.0 >= self.nodes.len() {
            return Err(Error::Index {
                index: root.0,
                len: self.nodes.len(),
                context: "backward root",
            });
        }
        if self.value(root).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.value.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        for (i, node) in self.nodes.iter_mut().enumerate() {
            if matches!(node.op, Op::Leaf) && node.value.requires_grad {
                let g = grads
                    .get_mut(i)
                    .and_then(Option::take)
                    .unwrap_or_else(|| vec![0.0; node.value.numel()]);
                node.value.grad = Some(g);
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| &nodes[v.0].value;
        let wants = |v: Var| nodes[v.0].value.requires_grad;
        macro_rules! acc {
            ($v:expr) => {
                slot(grads, nodes, $v)
            };
        }
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (val(*a).shape[0], val(*a).shape[1]);
                let n = val(*b).shape[1];
                if wants(*a) {
                    gemm_bt_acc(g, &val(*b).data, acc!(*a), m, n, k);
                }
                if wants(*b) {
                    gemm_at_acc(&val(*a).data, g, acc!(*b), m, k, n);
                }
            }
            Op::MatMulBt(a, b) => {
                let (m, k) = (val(*a).shape[0], val(*a).shape[1]);
                let n = val(*b).shape[0];
                if wants(*a) {
                    gemm_acc(g, &val(*b).data, acc!(*a), m, n, k);
                }
                if wants(*b) {
                    gemm_at_acc(g, &val(*a).data, acc!(*b), m, n, k);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if wants(v) {
                        acc!(v).iter_mut().zip(g).for_each(|(d, s)| *d += s);
                    }
                }
            }
            Op::AddRow(a, bias) => {
                if wants(*a) {
                    acc!(*a).iter_mut().zip(g).for_each(|(d, s)| *d += s);
                }
                if wants(*bias) {
                    let n = val(*bias).numel();
                    let gb = acc!(*bias);
                    for (j, s) in g.iter().enumerate() {
                        gb[j % n] += s;
                    }
                }
            }
            Op::Hadamard(a, b) => {
                if wants(*a) {
                    let bd = &val(*b).data;
                    acc!(*a)
                        .iter_mut()
                        .zip(g.iter().zip(bd))
                        .for_each(|(d, (s, y))| *d += s * y);
                }
                if wants(*b) {
                    let ad = &val(*a).data;
                    acc!(*b)
                        .iter_mut()
                        .zip(g.iter().zip(ad))
                        .for_each(|(d, (s, x))| *d += s * x);
                }
            }
            Op::Scale(a, c) => {
                if wants(*a) {
                    acc!(*a).iter_mut().zip(g).for_each(|(d, s)| *d += c * s);
                }
            }
            Op::Relu(a) => {
                if wants(*a) {
                    let x = &val(*a).data;
                    acc!(*a)
                        .iter_mut()
                        .zip(g.iter().zip(x))
                        .for_each(|(d, (s, x))| {
                            if *x > 0.0 {
                                *d += s
                            }
                        });
                }
            }
            Op::SoftmaxRows(a) => {
                if wants(*a) {
                    let y = &nodes[i].value.data;
                    let (m, n) = as_matrix(&val(*a).shape).unwrap();
                    let ga = acc!(*a);
                    for r in 0..m {
                        let ys = &y[r * n..(r + 1) * n];
                        let gs = &g[r * n..(r + 1) * n];
                        let dot: f64 = ys.iter().zip(gs).map(|(p, q)| p * q).sum();
                        for j in 0..n {
                            ga[r * n + j] += ys[j] * (gs[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (m, n) = as_matrix(&val(*x).shape).unwrap();
                if wants(*beta) {
                    let gb = acc!(*beta);
                    for (j, s) in g.iter().enumerate() {
                        gb[j % n] += s;
                    }
                }
                if wants(*gamma) {
                    let gg = acc!(*gamma);
                    for (j, (s, h)) in g.iter().zip(xhat).enumerate() {
                        gg[j % n] += s * h;
                    }
                }
                if wants(*x) {
                    let gam = &val(*gamma).data;
                    let gx = acc!(*x);
                    let mut dxhat = vec![0.0; n];
                    for r in 0..m {
                        let hs = &xhat[r * n..(r + 1) * n];
                        for j in 0..n {
                            dxhat[j] = g[r * n + j] * gam[j];
                        }
                        let mean_d = dxhat.iter().sum::<f64>() / n as f64;
                        let mean_dh =
                            dxhat.iter().zip(hs).map(|(d, h)| d * h).sum::<f64>() / n as f64;
                        for j in 0..n {
                            gx[r * n + j] += inv_std[r] * (dxhat[j] - mean_d - hs[j] * mean_dh);
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = nodes[i].value.shape[1];
                let m = nodes[i].value.shape[0];
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).shape[1];
                    if wants(p) {
                        let gp = acc!(p);
                        for r in 0..m {
                            for c in 0..w {
                                gp[r * w + c] += g[r * total + offset + c];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = val(p).numel();
                    if wants(p) {
                        acc!(p)
                            .iter_mut()
                            .zip(&g[offset..offset + len])
                            .for_each(|(d, s)| *d += s);
                    }
                    offset += len;
                }
            }
            Op::SliceRows(a, start) => {
                if wants(*a) {
                    let n = val(*a).shape[1];
                    acc!(*a)[start * n..start * n + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(d, s)| *d += s);
                }
            }
            Op::MeanRows(a) => {
                if wants(*a) {
                    let (m, n) = as_matrix(&val(*a).shape).unwrap();
                    let ga = acc!(*a);
                    for r in 0..m {
                        for j in 0..n {
                            ga[r * n + j] += g[j] / m as f64;
                        }
                    }
                }
            }
            Op::GatherRows(table, ids) => {
                if wants(*table) {
                    let n = val(*table).shape[1];
                    let gt = acc!(*table);
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..n {
                            gt[id * n + j] += g[r * n + j];
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if wants(*a) {
                    acc!(*a).iter_mut().zip(g).for_each(|(d, s)| *d += s);
                }
            }
            Op::CrossEntropy {
                logits,
                target,
                probs,
            } => {
                if wants(*logits) {
                    let gl = acc!(*logits);
                    for (j, p) in probs.iter().enumerate() {
                        let onehot = if j == *target { 1.0 } else { 0.0 };
                        gl[j] += g[0] * (p - onehot);
                    }
                }
            }
            Op::Sum(a) => {
                if wants(*a) {
                    acc!(*a).iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::BasisCombine { coeffs, row, bases } => {
                let b = bases.len();
                for (j, &v) in bases.iter().enumerate() {
                    if wants(*coeffs) {
                        let dot: f64 = g.iter().zip(&val(v).data).map(|(s, x)| s * x).sum();
                        acc!(*coeffs)[row * b + j] += dot;
                    }
                    if wants(v) {
                        let c = val(*coeffs).data[row * b + j];
                        acc!(v).iter_mut().zip(g).for_each(|(d, s)| *d += c * s);
                    }
                }
            }
            Op::MaskFill(a, mask) => {
                if wants(*a) {
                    acc!(*a)
                        .iter_mut()
                        .zip(g.iter().zip(mask))
                        .for_each(|(d, (s, &m))| {
                            if !m {
                                *d += s
                            }
                        });
                }
            }
        }
    }
}

fn slot<'g>(grads: &'g mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> &'g mut [f64] {
    let n = nodes[v.0].value.numel();
    grads[v.0].get_or_insert_with(|| vec![0.0; n])
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}
