use super::tensor::Tensor;
use super::DiffError;

const NORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    Scalar,
    Row,
    Col,
}

impl Bcast {
    fn resolve(a: (usize, usize), b: (usize, usize)) -> Option<Bcast> {
        if a == b {
            Some(Bcast::Same)
        } else if b == (1, 1) {
            Some(Bcast::Scalar)
        } else if b == (1, a.1) {
            Some(Bcast::Row)
        } else if b == (a.0, 1) {
            Some(Bcast::Col)
        } else {
            None
        }
    }

    #[inline]
    fn index(self, r: usize, c: usize, cols: usize) -> usize {
        match self {
            Bcast::Same => r * cols + c,
            Bcast::Scalar => 0,
            Bcast::Row => c,
            Bcast::Col => r,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum NormAxis {
    /// Statistics per column over rows (BatchNorm).
    Rows,
    /// Statistics per row over columns (LayerNorm).
    Cols,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var, Bcast),
    Sub(Var, Var, Bcast),
    Mul(Var, Var, Bcast),
    Div(Var, Var, Bcast),
    Affine(Var, f64),
    Relu(Var),
    Gelu(Var),
    Sigmoid(Var),
    Log(Var),
    Exp(Var),
    Powf(Var, f64),
    Softmax(Var),
    LogSoftmax(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    RowSums(Var),
    ColSums(Var),
    SegmentSum(Var, Vec<usize>),
    SegmentMean(Var, Vec<usize>, Vec<f64>),
    SegmentMax(Var, Vec<usize>),
    Gather(Var, Vec<usize>),
    Norm { x: Var, gamma: Var, beta: Var, xhat: Tensor, inv_std: Vec<f64>, axis: NormAxis },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Batch statistics produced by a training-mode batch norm, for running averages.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance (biased when the batch has a single row).
    pub var: Vec<f64>,
}

/// Gradients returned by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

/// Records dense-matrix operations and replays them backward.
///
/// Operations only ever reference earlier nodes, so the node order is a
/// topological order and backward is a single reverse sweep.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    kink: u64,
}

fn fnv(mut h: u64, x: u64) -> u64 {
    for b in x.to_le_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), kink: 0xcbf2_9ce4_8422_2325 }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Hash of every non-smooth branch taken so far (ReLU signs, max winners).
    ///
    /// Two evaluations with equal signatures lie on the same smooth piece.
    pub fn kink_signature(&self) -> u64 {
        self.kink
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable input.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var, DiffError> {
        if cfg!(debug_assertions) && !value.is_finite() {
            return Err(DiffError::Numeric { op: name, detail: "non-finite output".into() });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(DiffError::Shape(format!("matmul {sa:?} x {sb:?}")));
        }
        let v = self.value(a).matmul(self.value(b));
        self.push("matmul", v, Op::MatMul(a, b), &[a, b])
    }

    fn broadcast(&self, name: &str, a: Var, b: Var) -> Result<Bcast, DiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        Bcast::resolve(sa, sb).ok_or_else(|| DiffError::Shape(format!("{name} {sa:?} with {sb:?}")))
    }

    fn binary_value(&self, a: Var, b: Var, bc: Bcast, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let av = self.value(a);
        let bv = self.value(b);
        let (r, c) = av.shape();
        let mut out = Tensor::zeros(r, c);
        let od = out.data_mut();
        let ad = av.data();
        let bd = bv.data();
        for i in 0..r {
            for j in 0..c {
                od[i * c + j] = f(ad[i * c + j], bd[bc.index(i, j, c)]);
            }
        }
        out
    }

    /// `a + b`, with `b` broadcast as a scalar, row or column when its shape allows.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let bc = self.broadcast("add", a, b)?;
        let v = self.binary_value(a, b, bc, |x, y| x + y);
        self.push("add", v, Op::Add(a, b, bc), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let bc = self.broadcast("sub", a, b)?;
        let v = self.binary_value(a, b, bc, |x, y| x - y);
        self.push("sub", v, Op::Sub(a, b, bc), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let bc = self.broadcast("mul", a, b)?;
        let v = self.binary_value(a, b, bc, |x, y| x * y);
        self.push("mul", v, Op::Mul(a, b, bc), &[a, b])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let bc = self.broadcast("div", a, b)?;
        if self.value(b).data().iter().any(|&x| x == 0.0) {
            return Err(DiffError::Numeric { op: "div", detail: "division by zero".into() });
        }
        let v = self.binary_value(a, b, bc, |x, y| x / y);
        self.push("div", v, Op::Div(a, b, bc), &[a, b])
    }

    /// `scale·a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var, DiffError> {
        let v = self.value(a).map(|x| scale * x + shift);
        self.push("affine", v, Op::Affine(a, scale), &[a])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var, DiffError> {
        self.affine(a, s, 0.0)
    }

    /// ReLU; the subgradient at zero is zero.
    pub fn relu(&mut self, a: Var) -> Result<Var, DiffError> {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let mut h = self.kink;
        for (i, &x) in self.value(a).data().iter().enumerate() {
            if x > 0.0 {
                h = fnv(h, i as u64);
            }
        }
        self.kink = fnv(h, 0x5a5a);
        self.push("relu", v, Op::Relu(a), &[a])
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var, DiffError> {
        let v = self.value(a).map(|x| 0.5 * x * (1.0 + gelu_inner(x).tanh()));
        self.push("gelu", v, Op::Gelu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, DiffError> {
        let v = self.value(a).map(sigmoid);
        self.push("sigmoid", v, Op::Sigmoid(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var, DiffError> {
        if let Some(x) = self.value(a).data().iter().find(|x| !(x.is_finite() && **x > 0.0)) {
            return Err(DiffError::Numeric { op: "log", detail: format!("argument {x} outside (0, inf)") });
        }
        let v = self.value(a).map(f64::ln);
        self.push("log", v, Op::Log(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, DiffError> {
        let v = self.value(a).map(f64::exp);
        self.push("exp", v, Op::Exp(a), &[a])
    }

    /// Elementwise `a^p` for non-negative `a`.
    pub fn powf(&mut self, a: Var, p: f64) -> Result<Var, DiffError> {
        if self.value(a).data().iter().any(|&x| x < 0.0) {
            return Err(DiffError::Numeric { op: "powf", detail: "negative base".into() });
        }
        let v = self.value(a).map(|x| x.powf(p));
        self.push("powf", v, Op::Powf(a, p), &[a])
    }

    fn check_finite_input(&self, name: &'static str, a: Var) -> Result<(), DiffError> {
        if !self.value(a).is_finite() {
            return Err(DiffError::Numeric { op: name, detail: "non-finite input".into() });
        }
        Ok(())
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Result<Var, DiffError> {
        self.check_finite_input("softmax", a)?;
        let x = self.value(a);
        let mut out = Tensor::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            softmax_into(x.row(r), out.row_mut(r));
        }
        self.push("softmax", out, Op::Softmax(a), &[a])
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var, DiffError> {
        self.check_finite_input("log_softmax", a)?;
        let x = self.value(a);
        let mut out = Tensor::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            let row = x.row(r);
            let lse = log_sum_exp(row);
            for (o, &v) in out.row_mut(r).iter_mut().zip(row) {
                *o = v - lse;
            }
        }
        self.push("log_softmax", out, Op::LogSoftmax(a), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let rows = parts.first().map(|&p| self.shape(p).0).unwrap_or(0);
        if parts.iter().any(|&p| self.shape(p).0 != rows) {
            return Err(DiffError::Shape("concat_cols with unequal row counts".into()));
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                out.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        self.push("concat_cols", out, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let cols = parts.first().map(|&p| self.shape(p).1).unwrap_or(0);
        if parts.iter().any(|&p| self.shape(p).1 != cols) {
            return Err(DiffError::Shape("concat_rows with unequal column counts".into()));
        }
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
            rows += self.shape(p).0;
        }
        let out = Tensor::from_vec(rows, cols, data)?;
        self.push("concat_rows", out, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, DiffError> {
        let (r, c) = self.shape(a);
        if start >= end || end > c {
            return Err(DiffError::Shape(format!("slice {start}..{end} of {c} columns")));
        }
        let x = self.value(a);
        let mut out = Tensor::zeros(r, end - start);
        for i in 0..r {
            out.row_mut(i).copy_from_slice(&x.row(i)[start..end]);
        }
        self.push("slice_cols", out, Op::SliceCols(a, start), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, DiffError> {
        let v = self.value(a).transpose();
        self.push("transpose", v, Op::Transpose(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, DiffError> {
        let v = Tensor::scalar(self.value(a).sum());
        self.push("sum", v, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, DiffError> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(DiffError::Shape("mean of empty tensor".into()));
        }
        let v = Tensor::scalar(x.sum() / x.len() as f64);
        self.push("mean", v, Op::Mean(a), &[a])
    }

    /// Sum across columns: `r×c → r×1`.
    pub fn row_sums(&mut self, a: Var) -> Result<Var, DiffError> {
        let x = self.value(a);
        let v: Vec<f64> = (0..x.rows()).map(|r| x.row(r).iter().sum()).collect();
        self.push("row_sums", Tensor::col_vector(&v), Op::RowSums(a), &[a])
    }

    /// Sum across rows: `r×c → 1×c`.
    pub fn col_sums(&mut self, a: Var) -> Result<Var, DiffError> {
        let x = self.value(a);
        let mut v = vec![0.0; x.cols()];
        for r in 0..x.rows() {
            for (o, &y) in v.iter_mut().zip(x.row(r)) {
                *o += y;
            }
        }
        self.push("col_sums", Tensor::row_vector(&v), Op::ColSums(a), &[a])
    }

    fn check_segments(&self, name: &str, a: Var, ids: &[usize], n: usize) -> Result<(), DiffError> {
        if ids.len() != self.shape(a).0 {
            return Err(DiffError::Shape(format!("{name}: {} ids for {} rows", ids.len(), self.shape(a).0)));
        }
        if let Some(&bad) = ids.iter().find(|&&s| s >= n) {
            return Err(DiffError::Shape(format!("{name}: segment id {bad} >= {n}")));
        }
        Ok(())
    }

    fn segment_sum_value(x: &Tensor, ids: &[usize], n: usize) -> Tensor {
        let mut out = Tensor::zeros(n, x.cols());
        for (r, &s) in ids.iter().enumerate() {
            for (o, &v) in out.row_mut(s).iter_mut().zip(x.row(r)) {
                *o += v;
            }
        }
        out
    }

    /// Row `r` of `a` is added to output row `ids[r]`; `n` output rows.
    pub fn segment_sum(&mut self, a: Var, ids: &[usize], n: usize) -> Result<Var, DiffError> {
        self.check_segments("segment_sum", a, ids, n)?;
        let v = Self::segment_sum_value(self.value(a), ids, n);
        self.push("segment_sum", v, Op::SegmentSum(a, ids.to_vec()), &[a])
    }

    /// Same computation as [`Tape::segment_sum`]; named for message aggregation.
    pub fn scatter_add(&mut self, a: Var, targets: &[usize], n: usize) -> Result<Var, DiffError> {
        self.segment_sum(a, targets, n)
    }

    /// Per-segment mean; empty segments yield zero rows.
    pub fn segment_mean(&mut self, a: Var, ids: &[usize], n: usize) -> Result<Var, DiffError> {
        self.check_segments("segment_mean", a, ids, n)?;
        let mut counts = vec![0.0; n];
        for &s in ids {
            counts[s] += 1.0;
        }
        let mut v = Self::segment_sum_value(self.value(a), ids, n);
        for (s, &cnt) in counts.iter().enumerate() {
            if cnt > 0.0 {
                for o in v.row_mut(s) {
                    *o /= cnt;
                }
            }
        }
        self.push("segment_mean", v, Op::SegmentMean(a, ids.to_vec(), counts), &[a])
    }

    /// Per-segment elementwise max. The gradient goes to the winning row,
    /// ties to the lowest row index. Empty segments yield zero rows.
    pub fn segment_max(&mut self, a: Var, ids: &[usize], n: usize) -> Result<Var, DiffError> {
        self.check_segments("segment_max", a, ids, n)?;
        let x = self.value(a);
        let c = x.cols();
        let mut out = Tensor::zeros(n, c);
        let mut arg = vec![usize::MAX; n * c];
        for (r, &s) in ids.iter().enumerate() {
            for (j, &v) in x.row(r).iter().enumerate() {
                let k = s * c + j;
                if arg[k] == usize::MAX || v > out.data()[k] {
                    arg[k] = r;
                    out.data_mut()[k] = v;
                }
            }
        }
        let mut h = self.kink;
        for &w in &arg {
            h = fnv(h, w as u64);
        }
        self.kink = h;
        self.push("segment_max", out, Op::SegmentMax(a, arg), &[a])
    }

    /// Output row `r` is row `idx[r]` of `a`.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var, DiffError> {
        let rows = self.shape(a).0;
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(DiffError::Shape(format!("gather index {bad} >= {rows}")));
        }
        let v = self.value(a).select_rows(idx);
        self.push("gather_rows", v, Op::Gather(a, idx.to_vec()), &[a])
    }

    fn check_affine(&self, name: &str, gamma: Var, beta: Var, width: usize) -> Result<(), DiffError> {
        if self.shape(gamma) != (1, width) || self.shape(beta) != (1, width) {
            return Err(DiffError::Shape(format!(
                "{name}: affine params {:?}/{:?} for width {width}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        Ok(())
    }

    fn norm_forward(x: &Tensor, gamma: &Tensor, beta: &Tensor, axis: NormAxis) -> (Tensor, Tensor, Vec<f64>, Vec<f64>) {
        let (r, c) = x.shape();
        let mut xhat = Tensor::zeros(r, c);
        let mut out = Tensor::zeros(r, c);
        let groups = if axis == NormAxis::Rows { c } else { r };
        let count = if axis == NormAxis::Rows { r } else { c };
        let idx = |g: usize, k: usize| if axis == NormAxis::Rows { k * c + g } else { g * c + k };
        let mut inv_std = vec![0.0; groups];
        let mut means = vec![0.0; groups];
        for g in 0..groups {
            let mut mean = 0.0;
            for k in 0..count {
                mean += x.data()[idx(g, k)];
            }
            mean /= count as f64;
            let mut var = 0.0;
            for k in 0..count {
                let d = x.data()[idx(g, k)] - mean;
                var += d * d;
            }
            var /= count as f64;
            let is = 1.0 / (var + NORM_EPS).sqrt();
            inv_std[g] = is;
            means[g] = mean;
            for k in 0..count {
                let i = idx(g, k);
                let xh = (x.data()[i] - mean) * is;
                xhat.data_mut()[i] = xh;
                let col = i % c;
                out.data_mut()[i] = xh * gamma.data()[col] + beta.data()[col];
            }
        }
        (out, xhat, inv_std, means)
    }

    /// Training-mode batch norm: statistics per column over the rows.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var) -> Result<(Var, BatchStats), DiffError> {
        let (r, c) = self.shape(x);
        self.check_affine("batch_norm", gamma, beta, c)?;
        if r == 0 {
            return Err(DiffError::Shape("batch_norm over zero rows".into()));
        }
        let (out, xhat, inv_std, means) =
            Self::norm_forward(self.value(x), self.value(gamma), self.value(beta), NormAxis::Rows);
        let var = inv_std
            .iter()
            .map(|is| {
                let biased = 1.0 / (is * is) - NORM_EPS;
                if r > 1 { biased * r as f64 / (r as f64 - 1.0) } else { biased }
            })
            .collect();
        let v = self.push(
            "batch_norm",
            out,
            Op::Norm { x, gamma, beta, xhat, inv_std, axis: NormAxis::Rows },
            &[x, gamma, beta],
        )?;
        Ok((v, BatchStats { mean: means, var }))
    }

    /// Evaluation-mode batch norm with fixed running statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
    ) -> Result<Var, DiffError> {
        let c = self.shape(x).1;
        self.check_affine("batch_norm", gamma, beta, c)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(DiffError::Shape("batch_norm running statistics width".into()));
        }
        let mean = self.constant(Tensor::row_vector(running_mean));
        let inv: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
        let inv = self.constant(Tensor::row_vector(&inv));
        let centered = self.sub(x, mean)?;
        let normed = self.mul(centered, inv)?;
        let scaled = self.mul(normed, gamma)?;
        self.add(scaled, beta)
    }

    /// Layer norm over the columns of each row.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, DiffError> {
        let c = self.shape(x).1;
        self.check_affine("layer_norm", gamma, beta, c)?;
        let (out, xhat, inv_std, _) =
            Self::norm_forward(self.value(x), self.value(gamma), self.value(beta), NormAxis::Cols);
        self.push("layer_norm", out, Op::Norm { x, gamma, beta, xhat, inv_std, axis: NormAxis::Cols }, &[x, gamma, beta])
    }

    /// Inverted dropout with a caller-supplied keep mask of zeros and ones.
    pub fn dropout_with_mask(&mut self, a: Var, keep: &[bool], p: f64) -> Result<Var, DiffError> {
        let (r, c) = self.shape(a);
        if keep.len() != r * c {
            return Err(DiffError::Shape("dropout mask size".into()));
        }
        let s = 1.0 / (1.0 - p);
        let m: Vec<f64> = keep.iter().map(|&k| if k { s } else { 0.0 }).collect();
        let m = self.constant(Tensor::from_vec(r, c, m)?);
        self.mul(a, m)
    }

    /// Inverted dropout drawing its mask from `rng`.
    pub fn dropout<R: rand::Rng + ?Sized>(&mut self, a: Var, p: f64, rng: &mut R) -> Result<Var, DiffError> {
        if !(0.0..1.0).contains(&p) {
            return Err(DiffError::Param(format!("dropout rate {p} outside [0,1)")));
        }
        if p == 0.0 {
            return Ok(a);
        }
        let n = self.value(a).len();
        let keep: Vec<bool> = (0..n).map(|_| rng.random::<f64>() >= p).collect();
        self.dropout_with_mask(a, &keep, p)
    }

    /// Reverse sweep from a `1×1` output.
    pub fn backward(&self, output: Var) -> Result<Gradients, DiffError> {
        if self.shape(output) != (1, 1) {
            return Err(DiffError::Shape(format!("backward from non-scalar {:?}", self.shape(output))));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::scalar(1.0));
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn reduce_to(&self, g: &Tensor, bc: Bcast, target: (usize, usize)) -> Tensor {
        match bc {
            Bcast::Same => g.clone(),
            _ => {
                let mut out = Tensor::zeros(target.0, target.1);
                let c = g.cols();
                for r in 0..g.rows() {
                    for j in 0..c {
                        out.data_mut()[bc.index(r, j, c)] += g.get(r, j);
                    }
                }
                out
            }
        }
    }

    fn backward_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let need = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if need(*a) {
                    self.acc(grads, *a, g.matmul_nt(val(*b)));
                }
                if need(*b) {
                    self.acc(grads, *b, val(*a).matmul_tn(g));
                }
            }
            Op::Add(a, b, bc) | Op::Sub(a, b, bc) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if need(*a) {
                    self.acc(grads, *a, g.clone());
                }
                if need(*b) {
                    let mut gb = self.reduce_to(g, *bc, val(*b).shape());
                    if sign < 0.0 {
                        gb.scale_in_place(-1.0);
                    }
                    self.acc(grads, *b, gb);
                }
            }
            Op::Mul(a, b, bc) => {
                let (av, bv) = (val(*a), val(*b));
                let c = av.cols();
                if need(*a) {
                    let mut ga = g.clone();
                    for r in 0..av.rows() {
                        for j in 0..c {
                            ga.data_mut()[r * c + j] *= bv.data()[bc.index(r, j, c)];
                        }
                    }
                    self.acc(grads, *a, ga);
                }
                if need(*b) {
                    let prod = g.zip_map(av, |x, y| x * y);
                    self.acc(grads, *b, self.reduce_to(&prod, *bc, bv.shape()));
                }
            }
            Op::Div(a, b, bc) => {
                let (av, bv) = (val(*a), val(*b));
                let c = av.cols();
                if need(*a) {
                    let mut ga = g.clone();
                    for r in 0..av.rows() {
                        for j in 0..c {
                            ga.data_mut()[r * c + j] /= bv.data()[bc.index(r, j, c)];
                        }
                    }
                    self.acc(grads, *a, ga);
                }
                if need(*b) {
                    let mut t = Tensor::zeros(av.rows(), c);
                    for r in 0..av.rows() {
                        for j in 0..c {
                            let bb = bv.data()[bc.index(r, j, c)];
                            t.data_mut()[r * c + j] = -g.get(r, j) * av.get(r, j) / (bb * bb);
                        }
                    }
                    self.acc(grads, *b, self.reduce_to(&t, *bc, bv.shape()));
                }
            }
            Op::Affine(a, s) => {
                let mut ga = g.clone();
                ga.scale_in_place(*s);
                self.acc(grads, *a, ga);
            }
            Op::Relu(a) => {
                let ga = g.zip_map(val(*a), |gg, x| if x > 0.0 { gg } else { 0.0 });
                self.acc(grads, *a, ga);
            }
            Op::Gelu(a) => {
                let ga = g.zip_map(val(*a), |gg, x| gg * gelu_grad(x));
                self.acc(grads, *a, ga);
            }
            Op::Sigmoid(a) => {
                let ga = g.zip_map(&node.value, |gg, y| gg * y * (1.0 - y));
                self.acc(grads, *a, ga);
            }
            Op::Log(a) => {
                let ga = g.zip_map(val(*a), |gg, x| gg / x);
                self.acc(grads, *a, ga);
            }
            Op::Exp(a) => {
                let ga = g.zip_map(&node.value, |gg, y| gg * y);
                self.acc(grads, *a, ga);
            }
            Op::Powf(a, p) => {
                let p = *p;
                let ga = g.zip_map(val(*a), |gg, x| if p == 0.0 { 0.0 } else { gg * p * x.powf(p - 1.0) });
                self.acc(grads, *a, ga);
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let mut ga = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                    for j in 0..y.cols() {
                        ga.set(r, j, y.get(r, j) * (g.get(r, j) - dot));
                    }
                }
                self.acc(grads, *a, ga);
            }
            Op::LogSoftmax(a) => {
                let y = &node.value;
                let mut ga = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let gs: f64 = g.row(r).iter().sum();
                    for j in 0..y.cols() {
                        ga.set(r, j, g.get(r, j) - y.get(r, j).exp() * gs);
                    }
                }
                self.acc(grads, *a, ga);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pc = val(p).cols();
                    if need(p) {
                        let mut gp = Tensor::zeros(g.rows(), pc);
                        for r in 0..g.rows() {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[off..off + pc]);
                        }
                        self.acc(grads, p, gp);
                    }
                    off += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                let c = g.cols();
                for &p in parts {
                    let pr = val(p).rows();
                    if need(p) {
                        let gp = Tensor::from_vec(pr, c, g.data()[off * c..(off + pr) * c].to_vec())
                            .expect("concat_rows gradient shape");
                        self.acc(grads, p, gp);
                    }
                    off += pr;
                }
            }
            Op::SliceCols(a, start) => {
                let (r, c) = val(*a).shape();
                let mut ga = Tensor::zeros(r, c);
                for i in 0..r {
                    ga.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                }
                self.acc(grads, *a, ga);
            }
            Op::Transpose(a) => self.acc(grads, *a, g.transpose()),
            Op::Sum(a) => {
                let (r, c) = val(*a).shape();
                self.acc(grads, *a, Tensor::filled(r, c, g.item()));
            }
            Op::Mean(a) => {
                let (r, c) = val(*a).shape();
                self.acc(grads, *a, Tensor::filled(r, c, g.item() / (r * c) as f64));
            }
            Op::RowSums(a) => {
                let (r, c) = val(*a).shape();
                let mut ga = Tensor::zeros(r, c);
                for i in 0..r {
                    ga.row_mut(i).fill(g.get(i, 0));
                }
                self.acc(grads, *a, ga);
            }
            Op::ColSums(a) => {
                let (r, c) = val(*a).shape();
                let mut ga = Tensor::zeros(r, c);
                for i in 0..r {
                    ga.row_mut(i).copy_from_slice(g.row(0));
                }
                self.acc(grads, *a, ga);
            }
            Op::SegmentSum(a, ids) => {
                self.acc(grads, *a, g.select_rows(ids));
            }
            Op::SegmentMean(a, ids, counts) => {
                let mut ga = g.select_rows(ids);
                for (r, &s) in ids.iter().enumerate() {
                    let cnt = counts[s];
                    for v in ga.row_mut(r) {
                        *v /= cnt;
                    }
                }
                self.acc(grads, *a, ga);
            }
            Op::SegmentMax(a, arg) => {
                let (r, c) = val(*a).shape();
                let mut ga = Tensor::zeros(r, c);
                for (k, &w) in arg.iter().enumerate() {
                    if w != usize::MAX {
                        let j = k % c;
                        ga.data_mut()[w * c + j] += g.data()[k];
                    }
                }
                self.acc(grads, *a, ga);
            }
            Op::Gather(a, idx) => {
                let (r, c) = val(*a).shape();
                let mut ga = Tensor::zeros(r, c);
                for (o, &i) in idx.iter().enumerate() {
                    for (d, &s) in ga.row_mut(i).iter_mut().zip(g.row(o)) {
                        *d += s;
                    }
                }
                self.acc(grads, *a, ga);
            }
            Op::Norm { x, gamma, beta, xhat, inv_std, axis } => {
                let (r, c) = xhat.shape();
                let gam = val(*gamma);
                if need(*beta) {
                    let mut gb = Tensor::zeros(1, c);
                    for i in 0..r {
                        for j in 0..c {
                            gb.data_mut()[j] += g.get(i, j);
                        }
                    }
                    self.acc(grads, *beta, gb);
                }
                if need(*gamma) {
                    let mut gg = Tensor::zeros(1, c);
                    for i in 0..r {
                        for j in 0..c {
                            gg.data_mut()[j] += g.get(i, j) * xhat.get(i, j);
                        }
                    }
                    self.acc(grads, *gamma, gg);
                }
                if need(*x) {
                    let mut gx = Tensor::zeros(r, c);
                    let (groups, count) = if *axis == NormAxis::Rows { (c, r) } else { (r, c) };
                    let idx = |gi: usize, k: usize| if *axis == NormAxis::Rows { k * c + gi } else { gi * c + k };
                    for gi in 0..groups {
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for k in 0..count {
                            let i = idx(gi, k);
                            let dxh = g.data()[i] * gam.data()[i % c];
                            s1 += dxh;
                            s2 += dxh * xhat.data()[i];
                        }
                        let n = count as f64;
                        for k in 0..count {
                            let i = idx(gi, k);
                            let dxh = g.data()[i] * gam.data()[i % c];
                            gx.data_mut()[i] = inv_std[gi] / n * (n * dxh - s1 - xhat.data()[i] * s2);
                        }
                    }
                    self.acc(grads, *x, gx);
                }
            }
        }
    }
}

#[inline]
fn gelu_inner(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    C * (x + 0.044715 * x * x * x)
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let t = gelu_inner(x).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax_into(row: &[f64], out: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - m).exp();
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; row.len()];
    softmax_into(row, &mut out);
    out
}
