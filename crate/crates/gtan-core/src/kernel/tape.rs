//! Reverse-mode autodiff over a linear operation tape.
//!
//! Forward calls record one node per operation; [`Tape::backward`] replays
//! the tape in reverse, accumulating gradients additively into every input,
//! so a tensor used twice receives the sum of both paths' contributions.
//! Tensors are immutable once their producing op has written them.

use rand::Rng;

use super::gemm;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a tensor on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    Add { a: Var, b: Var },
    AddBiasRow { x: Var, bias: Var },
    Sigmoid { x: Var },
    LeakyRelu { x: Var, slope: f64 },
    PRelu { x: Var, slope: Var },
    SegmentSoftmax { logits: Var, offsets: Vec<usize> },
    Dropout { x: Var, mask: Vec<f64> },
    GatherRows { src: Var, idx: Vec<usize> },
    ScaleRows { x: Var, s: Var },
    SegmentSumRows { x: Var, offsets: Vec<usize> },
    SliceRows { x: Var, from: usize },
    SliceCols { x: Var, from: usize },
    ConcatCols { parts: Vec<Var> },
    Affine { x: Var, mul: f64 },
    Sum { x: Var },
    MeanBce { pred: Var, targets: Vec<f64> },
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    op: Op,
}

/// Records a forward computation and replays it backward.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Log arguments inside the BCE are clamped at this floor.
pub const BCE_CLAMP: f64 = 1e-12;

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// The forward value of `v`.
    pub fn value(&self, v: Var) -> &Tensor {
        self.val(v)
    }

    /// The gradient of the last `backward` loss w.r.t. `v`, if computed.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad.as_ref().map(|g| {
            Tensor::from_vec(node.value.rows(), node.value.cols(), g.clone()).expect("grad shape")
        })
    }

    /// Record an input tensor. Leaves receive gradients like any other node.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// c = a * b.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (am, ak) = (self.val(a).rows(), self.val(a).cols());
        let (bk, bn) = (self.val(b).rows(), self.val(b).cols());
        if ak != bk {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: vec![am, ak],
                right: vec![bk, bn],
            });
        }
        let mut out = Tensor::zeros(am, bn);
        gemm::matmul(
            am,
            ak,
            bn,
            self.val(a).data(),
            self.val(b).data(),
            out.data_mut(),
        );
        Ok(self.push(out, Op::MatMul { a, b }))
    }

    /// Elementwise a + b of identical shapes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.val(a).shape() != self.val(b).shape() {
            return Err(Error::ShapeMismatch {
                op: "add",
                left: self.val(a).shape().to_vec(),
                right: self.val(b).shape().to_vec(),
            });
        }
        let mut out = self.val(a).clone();
        for (o, v) in out.data_mut().iter_mut().zip(self.val(b).data()) {
            *o += v;
        }
        Ok(self.push(out, Op::Add { a, b }))
    }

    /// x (m x n) + bias (1 x n) broadcast over rows.
    pub fn add_bias_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = self.val(x).cols();
        if self.val(bias).shape() != [1, n] {
            return Err(Error::ShapeMismatch {
                op: "add_bias_row",
                left: self.val(x).shape().to_vec(),
                right: self.val(bias).shape().to_vec(),
            });
        }
        let mut out = self.val(x).clone();
        let bias_row = self.val(bias).data().to_vec();
        for r in 0..out.rows() {
            let row = &mut out.data_mut()[r * n..(r + 1) * n];
            for (o, b) in row.iter_mut().zip(&bias_row) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddBiasRow { x, bias }))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let mut out = self.val(x).clone();
        for v in out.data_mut() {
            *v = sigmoid_scalar(*v);
        }
        self.push(out, Op::Sigmoid { x })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let mut out = self.val(x).clone();
        for v in out.data_mut() {
            if *v < 0.0 {
                *v *= slope;
            }
        }
        self.push(out, Op::LeakyRelu { x, slope })
    }

    /// PReLU with a learnable scalar slope (a 1 x 1 tape tensor).
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        if !self.val(slope).is_scalar() {
            return Err(Error::ShapeMismatch {
                op: "prelu",
                left: self.val(x).shape().to_vec(),
                right: self.val(slope).shape().to_vec(),
            });
        }
        let s = self.val(slope).item();
        let mut out = self.val(x).clone();
        for v in out.data_mut() {
            if *v < 0.0 {
                *v *= s;
            }
        }
        Ok(self.push(out, Op::PRelu { x, slope }))
    }

    /// Softmax within each contiguous segment of a column vector.
    ///
    /// `offsets` has one more entry than there are segments and must cover
    /// all rows; every segment must be non-empty. Stabilized by subtracting
    /// the per-segment max before exponentiation.
    pub fn segment_softmax(&mut self, logits: Var, offsets: &[usize]) -> Result<Var> {
        let e = self.val(logits).rows();
        check_offsets(offsets, e)?;
        let mut out = self.val(logits).clone();
        let data = out.data_mut();
        for w in offsets.windows(2) {
            let seg = &mut data[w[0]..w[1]];
            let max = seg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in seg.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in seg.iter_mut() {
                *v /= total;
            }
        }
        Ok(self.push(
            out,
            Op::SegmentSoftmax {
                logits,
                offsets: offsets.to_vec(),
            },
        ))
    }

    /// Inverted dropout: training mode zeroes entries with probability
    /// `rate` and scales survivors by 1/(1-rate); eval mode is the identity.
    pub fn dropout<R: Rng>(
        &mut self,
        x: Var,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!(
                "dropout rate must be in [0, 1), got {rate}"
            )));
        }
        if !training || rate == 0.0 {
            let out = self.val(x).clone();
            let mask = vec![1.0; out.len()];
            return Ok(self.push(out, Op::Dropout { x, mask }));
        }
        let keep = 1.0 - rate;
        let scale = 1.0 / keep;
        let mask: Vec<f64> = (0..self.val(x).len())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { scale })
            .collect();
        let mut out = self.val(x).clone();
        for (v, m) in out.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        Ok(self.push(out, Op::Dropout { x, mask }))
    }

    /// out[r] = src[idx[r]] (row gather; backward scatter-adds).
    pub fn gather_rows(&mut self, src: Var, idx: &[usize]) -> Result<Var> {
        let t = self.val(src);
        if let Some(&bad) = idx.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::Usage(format!(
                "gather_rows index {bad} out of range for {} rows",
                t.rows()
            )));
        }
        let cols = t.cols();
        let mut out = Tensor::zeros(idx.len(), cols);
        for (r, &i) in idx.iter().enumerate() {
            out.data_mut()[r * cols..(r + 1) * cols].copy_from_slice(t.row(i));
        }
        Ok(self.push(
            out,
            Op::GatherRows {
                src,
                idx: idx.to_vec(),
            },
        ))
    }

    /// out[r] = x[r] * s[r], with s a column vector.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let rows = self.val(x).rows();
        if self.val(s).shape() != [rows, 1] {
            return Err(Error::ShapeMismatch {
                op: "scale_rows",
                left: self.val(x).shape().to_vec(),
                right: self.val(s).shape().to_vec(),
            });
        }
        let cols = self.val(x).cols();
        let mut out = self.val(x).clone();
        for r in 0..rows {
            let f = self.nodes[s.0].value.data()[r];
            for v in &mut out.data_mut()[r * cols..(r + 1) * cols] {
                *v *= f;
            }
        }
        Ok(self.push(out, Op::ScaleRows { x, s }))
    }

    /// Sums contiguous row segments: out[s] = sum of x rows in segment s.
    pub fn segment_sum_rows(&mut self, x: Var, offsets: &[usize]) -> Result<Var> {
        let rows = self.val(x).rows();
        check_offsets(offsets, rows)?;
        let cols = self.val(x).cols();
        let mut out = Tensor::zeros(offsets.len() - 1, cols);
        for (s, w) in offsets.windows(2).enumerate() {
            for r in w[0]..w[1] {
                let src = self.val(x).row(r).to_vec();
                for (o, v) in out.data_mut()[s * cols..(s + 1) * cols].iter_mut().zip(src) {
                    *o += v;
                }
            }
        }
        Ok(self.push(
            out,
            Op::SegmentSumRows {
                x,
                offsets: offsets.to_vec(),
            },
        ))
    }

    /// Rows `from..to` of x.
    pub fn slice_rows(&mut self, x: Var, from: usize, to: usize) -> Result<Var> {
        let t = self.val(x);
        if from >= to || to > t.rows() {
            return Err(Error::Usage(format!(
                "slice_rows {from}..{to} out of range for {} rows",
                t.rows()
            )));
        }
        let cols = t.cols();
        let data = t.data()[from * cols..to * cols].to_vec();
        let out = Tensor::from_vec(to - from, cols, data)?;
        Ok(self.push(out, Op::SliceRows { x, from }))
    }

    /// Columns `from..to` of x.
    pub fn slice_cols(&mut self, x: Var, from: usize, to: usize) -> Result<Var> {
        let t = self.val(x);
        if from >= to || to > t.cols() {
            return Err(Error::Usage(format!(
                "slice_cols {from}..{to} out of range for {} cols",
                t.cols()
            )));
        }
        let (rows, cols) = (t.rows(), t.cols());
        let width = to - from;
        let mut out = Tensor::zeros(rows, width);
        for r in 0..rows {
            out.data_mut()[r * width..(r + 1) * width]
                .copy_from_slice(&t.data()[r * cols + from..r * cols + to]);
        }
        Ok(self.push(out, Op::SliceCols { x, from }))
    }

    /// Horizontal concatenation of tensors with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Usage("concat_cols of zero tensors".into()));
        }
        let rows = self.val(parts[0]).rows();
        for &p in parts {
            if self.val(p).rows() != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    left: self.val(parts[0]).shape().to_vec(),
                    right: self.val(p).shape().to_vec(),
                });
            }
        }
        let total: usize = parts.iter().map(|&p| self.val(p).cols()).sum();
        let mut out = Tensor::zeros(rows, total);
        let mut col0 = 0;
        for &p in parts {
            let w = self.val(p).cols();
            for r in 0..rows {
                let src = self.val(p).row(r).to_vec();
                out.data_mut()[r * total + col0..r * total + col0 + w].copy_from_slice(&src);
            }
            col0 += w;
        }
        Ok(self.push(
            out,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Elementwise mul * x + add.
    pub fn affine(&mut self, x: Var, mul: f64, add: f64) -> Var {
        let mut out = self.val(x).clone();
        for v in out.data_mut() {
            *v = mul * *v + add;
        }
        self.push(out, Op::Affine { x, mul })
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.val(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum { x })
    }

    /// Mean binary cross-entropy of predictions in (0,1) against 0/1
    /// targets, with log arguments clamped at [`BCE_CLAMP`].
    pub fn mean_bce(&mut self, pred: Var, targets: &[f64]) -> Result<Var> {
        let p = self.val(pred);
        if p.cols() != 1 || p.rows() != targets.len() {
            return Err(Error::ShapeMismatch {
                op: "mean_bce",
                left: p.shape().to_vec(),
                right: vec![targets.len(), 1],
            });
        }
        if targets.is_empty() {
            return Err(Error::Usage("mean_bce over zero targets".into()));
        }
        let n = targets.len() as f64;
        let mut loss = 0.0;
        for (i, &y) in targets.iter().enumerate() {
            let ph = p.data()[i];
            loss -= y * ph.max(BCE_CLAMP).ln() + (1.0 - y) * (1.0 - ph).max(BCE_CLAMP).ln();
        }
        Ok(self.push(
            Tensor::scalar(loss / n),
            Op::MeanBce {
                pred,
                targets: targets.to_vec(),
            },
        ))
    }

    /// Accumulates dLoss/dNode into every node reachable backward from
    /// `loss`, which must be a scalar produced through this tape.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Usage("loss var is not on this tape".into()));
        }
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.ensure_grad(loss);
        self.nodes[loss.0].grad.as_mut().unwrap()[0] = 1.0;

        for i in (0..=loss.0).rev() {
            if self.nodes[i].grad.is_none() {
                continue;
            }
            self.step_back(i);
        }
        Ok(())
    }

    fn ensure_grad(&mut self, v: Var) -> &mut Vec<f64> {
        let len = self.nodes[v.0].value.len();
        self.nodes[v.0].grad.get_or_insert_with(|| vec![0.0; len])
    }

    /// Propagates node i's gradient into its inputs.
    fn step_back(&mut self, i: usize) {
        let dout = self.nodes[i].grad.take().unwrap();
        // Move the op out so inputs can be borrowed mutably; restored below.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = (self.val(*a).rows(), self.val(*a).cols());
                let n = self.val(*b).cols();
                let bd = self.nodes[b.0].value.data().to_vec();
                self.ensure_grad(*a);
                gemm::accum_a_grad(m, k, n, &dout, &bd, self.nodes[a.0].grad.as_mut().unwrap());
                let ad = self.nodes[a.0].value.data().to_vec();
                self.ensure_grad(*b);
                gemm::accum_b_grad(m, k, n, &ad, &dout, self.nodes[b.0].grad.as_mut().unwrap());
            }
            Op::Add { a, b } => {
                self.ensure_grad(*a);
                axpy(self.nodes[a.0].grad.as_mut().unwrap(), &dout);
                self.ensure_grad(*b);
                axpy(self.nodes[b.0].grad.as_mut().unwrap(), &dout);
            }
            Op::AddBiasRow { x, bias } => {
                self.ensure_grad(*x);
                axpy(self.nodes[x.0].grad.as_mut().unwrap(), &dout);
                let n = self.nodes[bias.0].value.cols();
                self.ensure_grad(*bias);
                let g = self.nodes[bias.0].grad.as_mut().unwrap();
                for (j, d) in dout.iter().enumerate() {
                    g[j % n] += d;
                }
            }
            Op::Sigmoid { x } => {
                let y = self.nodes[i].value.data().to_vec();
                self.ensure_grad(*x);
                let g = self.nodes[x.0].grad.as_mut().unwrap();
                for (j, d) in dout.iter().enumerate() {
                    g[j] += d * y[j] * (1.0 - y[j]);
                }
            }
            Op::LeakyRelu { x, slope } => {
                let xv = self.nodes[x.0].value.data().to_vec();
                self.ensure_grad(*x);
                let g = self.nodes[x.0].grad.as_mut().unwrap();
                for (j, d) in dout.iter().enumerate() {
                    g[j] += d * if xv[j] < 0.0 { *slope } else { 1.0 };
                }
            }
            Op::PRelu { x, slope } => {
                let s = self.nodes[slope.0].value.item();
                let xv = self.nodes[x.0].value.data().to_vec();
                self.ensure_grad(*x);
                {
                    let g = self.nodes[x.0].grad.as_mut().unwrap();
                    for (j, d) in dout.iter().enumerate() {
                        g[j] += d * if xv[j] < 0.0 { s } else { 1.0 };
                    }
                }
                let mut ds = 0.0;
                for (j, d) in dout.iter().enumerate() {
                    if xv[j] < 0.0 {
                        ds += d * xv[j];
                    }
                }
                self.ensure_grad(*slope);
                self.nodes[slope.0].grad.as_mut().unwrap()[0] += ds;
            }
            Op::SegmentSoftmax { logits, offsets } => {
                let alpha = self.nodes[i].value.data().to_vec();
                self.ensure_grad(*logits);
                let g = self.nodes[logits.0].grad.as_mut().unwrap();
                for w in offsets.windows(2) {
                    let mut dot = 0.0;
                    for j in w[0]..w[1] {
                        dot += alpha[j] * dout[j];
                    }
                    for j in w[0]..w[1] {
                        g[j] += alpha[j] * (dout[j] - dot);
                    }
                }
            }
            Op::Dropout { x, mask } => {
                self.ensure_grad(*x);
                let g = self.nodes[x.0].grad.as_mut().unwrap();
                for (j, d) in dout.iter().enumerate() {
                    g[j] += d * mask[j];
                }
            }
            Op::GatherRows { src, idx } => {
                let cols = self.nodes[src.0].value.cols();
                self.ensure_grad(*src);
                let g = self.nodes[src.0].grad.as_mut().unwrap();
                for (r, &target) in idx.iter().enumerate() {
                    for c in 0..cols {
                        g[target * cols + c] += dout[r * cols + c];
                    }
                }
            }
            Op::ScaleRows { x, s } => {
                let cols = self.nodes[x.0].value.cols();
                let rows = self.nodes[x.0].value.rows();
                let sv = self.nodes[s.0].value.data().to_vec();
                let xv = self.nodes[x.0].value.data().to_vec();
                self.ensure_grad(*x);
                {
                    let g = self.nodes[x.0].grad.as_mut().unwrap();
                    for r in 0..rows {
                        for c in 0..cols {
                            g[r * cols + c] += dout[r * cols + c] * sv[r];
                        }
                    }
                }
                self.ensure_grad(*s);
                let gs = self.nodes[s.0].grad.as_mut().unwrap();
                for r in 0..rows {
                    let mut acc = 0.0;
                    for c in 0..cols {
                        acc += dout[r * cols + c] * xv[r * cols + c];
                    }
                    gs[r] += acc;
                }
            }
            Op::SegmentSumRows { x, offsets } => {
                let cols = self.nodes[x.0].value.cols();
                self.ensure_grad(*x);
                let g = self.nodes[x.0].grad.as_mut().unwrap();
                for (s, w) in offsets.windows(2).enumerate() {
                    for r in w[0]..w[1] {
                        for c in 0..cols {
                            g[r * cols + c] += dout[s * cols + c];
                        }
                    }
                }
            }
            Op::SliceRows { x, from } => {
                let cols = self.nodes[x.0].value.cols();
                self.ensure_grad(*x);
                let g = self.nodes[x.0].grad.as_mut().unwrap();
                for (j, d) in dout.iter().enumerate() {
                    g[from * cols + j] += d;
                }
            }
            Op::SliceCols { x, from } => {
                let cols = self.nodes[x.0].value.cols();
                let width = self.nodes[i].value.cols();
                let rows = self.nodes[i].value.rows();
                self.ensure_grad(*x);
                let g = self.nodes[x.0].grad.as_mut().unwrap();
                for r in 0..rows {
                    for c in 0..width {
                        g[r * cols + from + c] += dout[r * width + c];
                    }
                }
            }
            Op::ConcatCols { parts } => {
                let total = self.nodes[i].value.cols();
                let rows = self.nodes[i].value.rows();
                let mut col0 = 0;
                for &p in parts {
                    let w = self.nodes[p.0].value.cols();
                    self.ensure_grad(p);
                    let g = self.nodes[p.0].grad.as_mut().unwrap();
                    for r in 0..rows {
                        for c in 0..w {
                            g[r * w + c] += dout[r * total + col0 + c];
                        }
                    }
                    col0 += w;
                }
            }
            Op::Affine { x, mul } => {
                self.ensure_grad(*x);
                let g = self.nodes[x.0].grad.as_mut().unwrap();
                for (j, d) in dout.iter().enumerate() {
                    g[j] += d * mul;
                }
            }
            Op::Sum { x } => {
                self.ensure_grad(*x);
                let g = self.nodes[x.0].grad.as_mut().unwrap();
                for v in g.iter_mut() {
                    *v += dout[0];
                }
            }
            Op::MeanBce { pred, targets } => {
                let n = targets.len() as f64;
                let pv = self.nodes[pred.0].value.data().to_vec();
                self.ensure_grad(*pred);
                let g = self.nodes[pred.0].grad.as_mut().unwrap();
                for (j, &y) in targets.iter().enumerate() {
                    let p = pv[j];
                    let mut d = 0.0;
                    if p > BCE_CLAMP {
                        d -= y / p;
                    }
                    if 1.0 - p > BCE_CLAMP {
                        d += (1.0 - y) / (1.0 - p);
                    }
                    g[j] += dout[0] * d / n;
                }
            }
        }
        self.nodes[i].op = op;
        self.nodes[i].grad = Some(dout);
    }
}

fn axpy(acc: &mut [f64], add: &[f64]) {
    for (a, b) in acc.iter_mut().zip(add) {
        *a += b;
    }
}

fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn check_offsets(offsets: &[usize], rows: usize) -> Result<()> {
    if offsets.len() < 2 || offsets[0] != 0 || *offsets.last().unwrap() != rows {
        return Err(Error::Usage(format!(
            "segment offsets must cover 0..{rows}, got {offsets:?}"
        )));
    }
    for w in offsets.windows(2) {
        if w[0] >= w[1] {
            return Err(Error::Usage(format!(
                "empty or decreasing segment at offset {}..{}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}
