use super::{gemm, Scalar, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<S> {
    Leaf,
    MatMul { a: Var, b: Var, batched: bool },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, c: S },
    Permute { a: Var, perm: Vec<usize> },
    Reshape { a: Var },
    GatherRows { src: Var, idx: Vec<usize> },
    Slice { a: Var, axis: usize, start: usize },
    Softmax { a: Var },
    CausalMask { a: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<S>, rstd: Vec<S> },
    Gelu { a: Var },
    CrossEntropy { logits: Var, targets: Vec<usize>, mask: Vec<bool>, probs: Vec<S>, count: usize },
    MseRows { a: Var, b: Var, rows: usize },
    L2Norm { a: Var },
    Sum { a: Var },
    Mean { a: Var },
}

impl<S> Op<S> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::Permute { .. } => "permute",
            Op::Reshape { .. } => "reshape",
            Op::GatherRows { .. } => "gather_rows",
            Op::Slice { .. } => "slice",
            Op::Softmax { .. } => "softmax",
            Op::CausalMask { .. } => "causal_mask",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gelu { .. } => "gelu",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::MseRows { .. } => "mse_rows",
            Op::L2Norm { .. } => "l2_norm",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
        }
    }
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// Records one forward computation for reverse-mode differentiation.
pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
    nan_origin: Option<&'static str>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of every recorded value with respect to one scalar.
pub struct Gradients<S> {
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// `None` when no gradient reached `v` (detached or unused).
    pub fn get(&self, v: Var) -> Option<&[S]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<S>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::Shape { op, lhs: lhs.to_vec(), rhs: rhs.to_vec() }
}

/// Length of the trailing block `b` repeats over in `a` (suffix broadcast).
fn broadcast_block(op: &'static str, a: &[usize], b: &[usize]) -> Result<usize, TensorError> {
    if b.len() > a.len() || a[a.len() - b.len()..] != *b {
        return Err(shape_err(op, a, b));
    }
    Ok(b.iter().product())
}

fn gelu_parts<S: Scalar>(x: S) -> (S, S) {
    // tanh approximation
    let c = S::from_f64((2.0 / std::f64::consts::PI).sqrt());
    let k = S::from_f64(0.044715);
    let half = S::from_f64(0.5);
    let one = S::one();
    let inner = c * (x + k * x * x * x);
    let t = inner.tanh();
    let y = half * x * (one + t);
    let dinner = c * (one + S::from_f64(3.0) * k * x * x);
    let dy = half * (one + t) + half * x * (one - t * t) * dinner;
    (y, dy)
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), nan_origin: None }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// First operation that produced a NaN from NaN-free inputs.
    pub fn nan_origin(&self) -> Option<&'static str> {
        self.nan_origin
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[S] {
        self.nodes[v.0].value.data()
    }

    /// Value of a one-element tensor.
    pub fn item(&self, v: Var) -> S {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        if self.nan_origin.is_none() && value.data().iter().any(|x| x.is_nan()) {
            self.nan_origin = Some(op.name());
        }
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable input.
    pub fn param(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Stop-gradient: a constant copy of `a`'s current value.
    pub fn detach(&mut self, a: Var) -> Var {
        let t = self.nodes[a.0].value.clone();
        self.constant(t)
    }

    /// `a [.., M, K] @ b`. A 2-D `b [K, N]` is shared by all leading
    /// indices; otherwise `b [.., K, N]` must carry the same batch dims.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(shape_err("matmul", &sa, &sb));
        }
        let k = sa[sa.len() - 1];
        if sb.len() == 2 {
            if sb[0] != k {
                return Err(shape_err("matmul", &sa, &sb));
            }
            let n = sb[1];
            let rows = self.value(a).numel() / k.max(1);
            let mut out = vec![S::zero(); rows * n];
            gemm(rows, k, n, self.data(a), false, self.data(b), false, &mut out, false);
            let mut shape = sa.clone();
            *shape.last_mut().unwrap() = n;
            let rg = self.rg(a) || self.rg(b);
            return Ok(self.push(Tensor { shape, data: out }, Op::MatMul { a, b, batched: false }, rg));
        }
        if sa.len() != sb.len() || sa[..sa.len() - 2] != sb[..sb.len() - 2] || sb[sb.len() - 2] != k {
            return Err(shape_err("matmul", &sa, &sb));
        }
        let m = sa[sa.len() - 2];
        let n = sb[sb.len() - 1];
        let batch: usize = sa[..sa.len() - 2].iter().product();
        let mut out = vec![S::zero(); batch * m * n];
        {
            let (da, db) = (self.data(a), self.data(b));
            for bi in 0..batch {
                gemm(m, k, n, &da[bi * m * k..], false, &db[bi * k * n..], false, &mut out[bi * m * n..(bi + 1) * m * n], false);
            }
        }
        let mut shape = sa.clone();
        *shape.last_mut().unwrap() = n;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor { shape, data: out }, Op::MatMul { a, b, batched: true }, rg))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(S, S) -> S) -> Result<(Vec<usize>, Vec<S>), TensorError> {
        let block = broadcast_block(name, self.shape(a), self.shape(b))?;
        let (da, db) = (self.data(a), self.data(b));
        let out: Vec<S> =
            if block == 0 { Vec::new() } else { da.chunks(block).flat_map(|chunk| chunk.iter().zip(db).map(|(&x, &y)| f(x, y))).collect() };
        Ok((self.shape(a).to_vec(), out))
    }

    /// Elementwise `a + b`; `b`'s shape may be a suffix of `a`'s.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (shape, data) = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor { shape, data }, Op::Add { a, b }, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (shape, data) = self.binary(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor { shape, data }, Op::Sub { a, b }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (shape, data) = self.binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor { shape, data }, Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let c = S::from_f64(c);
        let t = &self.nodes[a.0].value;
        let out = Tensor { shape: t.shape.clone(), data: t.data.iter().map(|&x| x * c).collect() };
        let rg = self.rg(a);
        self.push(out, Op::Scale { a, c }, rg)
    }

    /// Axis permutation; output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var, TensorError> {
        let shape = self.shape(a).to_vec();
        let nd = shape.len();
        let mut check = perm.to_vec();
        check.sort_unstable();
        if perm.len() != nd || check != (0..nd).collect::<Vec<_>>() {
            return Err(TensorError::Invalid { op: "permute", msg: format!("bad permutation {perm:?} for {shape:?}") });
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let src_strides = strides(&shape);
        let out_src_strides: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
        let src = self.data(a);
        let mut out = Vec::with_capacity(src.len());
        for_each_offset(&out_shape, &out_src_strides, |off| out.push(src[off]));
        let rg = self.rg(a);
        Ok(self.push(Tensor { shape: out_shape, data: out }, Op::Permute { a, perm: perm.to_vec() }, rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let nd = self.shape(a).len();
        if nd < 2 {
            return Err(TensorError::Invalid { op: "transpose", msg: "needs at least 2 axes".into() });
        }
        let mut perm: Vec<usize> = (0..nd).collect();
        perm.swap(nd - 2, nd - 1);
        self.permute(a, &perm)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != self.value(a).numel() {
            return Err(shape_err("reshape", self.shape(a), shape));
        }
        let data = self.data(a).to_vec();
        let rg = self.rg(a);
        Ok(self.push(Tensor { shape: shape.to_vec(), data }, Op::Reshape { a }, rg))
    }

    /// Rows `idx` of `src` along its first axis (embedding lookup).
    pub fn gather_rows(&mut self, src: Var, idx: &[usize]) -> Result<Var, TensorError> {
        let shape = self.shape(src).to_vec();
        if shape.is_empty() {
            return Err(TensorError::Invalid { op: "gather_rows", msg: "scalar source".into() });
        }
        let rows = shape[0];
        let width: usize = shape[1..].iter().product();
        let data = self.data(src);
        let mut out = Vec::with_capacity(idx.len() * width);
        for &r in idx {
            if r >= rows {
                return Err(TensorError::Invalid { op: "gather_rows", msg: format!("row {r} out of {rows}") });
            }
            out.extend_from_slice(&data[r * width..(r + 1) * width]);
        }
        let mut out_shape = shape;
        out_shape[0] = idx.len();
        let rg = self.rg(src);
        Ok(self.push(Tensor { shape: out_shape, data: out }, Op::GatherRows { src, idx: idx.to_vec() }, rg))
    }

    /// `a[.., start..start+len, ..]` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var, TensorError> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(TensorError::Invalid { op: "slice", msg: format!("range {start}..{} on axis {axis} of {shape:?}", start + len) });
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.data(a);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * shape[axis] * inner;
            out.extend_from_slice(&src[base + start * inner..base + (start + len) * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let rg = self.rg(a);
        Ok(self.push(Tensor { shape: out_shape, data: out }, Op::Slice { a, axis, start }, rg))
    }

    /// Max-subtracted softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        let shape = self.shape(a).to_vec();
        let width = *shape.last().ok_or(TensorError::Empty("softmax"))?;
        if width == 0 {
            return Err(TensorError::Empty("softmax"));
        }
        let mut out = self.data(a).to_vec();
        for row in out.chunks_mut(width) {
            softmax_in_place(row);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor { shape, data: out }, Op::Softmax { a }, rg))
    }

    /// Sets `x[.., i, j] = -inf` for `j > i` over the last two axes.
    pub fn causal_mask(&mut self, a: Var) -> Result<Var, TensorError> {
        let shape = self.shape(a).to_vec();
        let nd = shape.len();
        if nd < 2 || shape[nd - 1] != shape[nd - 2] {
            return Err(TensorError::Invalid { op: "causal_mask", msg: format!("needs square trailing axes, got {shape:?}") });
        }
        let t = shape[nd - 1];
        let mut out = self.data(a).to_vec();
        for mat in out.chunks_mut(t * t) {
            for i in 0..t {
                for v in &mut mat[i * t + i + 1..(i + 1) * t] {
                    *v = S::neg_infinity();
                }
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor { shape, data: out }, Op::CausalMask { a }, rg))
    }

    /// Per-row normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or(TensorError::Empty("layer_norm"))?;
        if d == 0 {
            return Err(TensorError::Empty("layer_norm"));
        }
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(shape_err("layer_norm", &shape, self.shape(gamma)));
        }
        let eps = S::from_f64(eps);
        let inv_d = S::from_f64(1.0 / d as f64);
        let src = self.data(x);
        let (g, b) = (self.data(gamma), self.data(beta));
        let rows = src.len() / d;
        let mut xhat = Vec::with_capacity(src.len());
        let mut rstd = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(src.len());
        for row in src.chunks(d) {
            let mean = row.iter().copied().sum::<S>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() * inv_d;
            let r = (var + eps).sqrt().recip();
            rstd.push(r);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * r;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(Tensor { shape, data: out }, Op::LayerNorm { x, gamma, beta, xhat, rstd }, rg))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        let out = Tensor { shape: t.shape.clone(), data: t.data.iter().map(|&x| gelu_parts(x).0).collect() };
        let rg = self.rg(a);
        self.push(out, Op::Gelu { a }, rg)
    }

    /// Mean cross-entropy of `logits [N, V]` against `targets` over rows
    /// where `mask` is set.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], mask: &[bool]) -> Result<Var, TensorError> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || targets.len() != shape[0] || mask.len() != shape[0] {
            return Err(TensorError::Invalid {
                op: "cross_entropy",
                msg: format!("logits {shape:?}, {} targets, {} mask entries", targets.len(), mask.len()),
            });
        }
        let v = shape[1];
        if v == 0 {
            return Err(TensorError::Empty("cross_entropy"));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(TensorError::Empty("cross_entropy"));
        }
        let src = self.data(logits);
        let mut probs = vec![S::zero(); src.len()];
        let mut total = S::zero();
        for (r, row) in src.chunks(v).enumerate() {
            if !mask[r] {
                continue;
            }
            let t = targets[r];
            if t >= v {
                return Err(TensorError::Invalid { op: "cross_entropy", msg: format!("target {t} out of {v} classes") });
            }
            let max = row.iter().copied().fold(S::neg_infinity(), S::max);
            let sum: S = row.iter().map(|&x| (x - max).exp()).sum();
            let lse = max + sum.ln();
            total += lse - row[t];
            for (p, &x) in probs[r * v..(r + 1) * v].iter_mut().zip(row) {
                *p = (x - lse).exp();
            }
        }
        let loss = total / S::from_f64(count as f64);
        let rg = self.rg(logits);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, targets: targets.to_vec(), mask: mask.to_vec(), probs, count }, rg))
    }

    /// Mean over rows of the squared Euclidean distance between matching
    /// rows of `a` and `b` (last axis is the feature axis).
    pub fn mse_rows(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa != sb || sa.is_empty() {
            return Err(shape_err("mse_rows", &sa, &sb));
        }
        let d = *sa.last().unwrap();
        let rows = self.value(a).numel().checked_div(d).unwrap_or(0);
        if rows == 0 {
            return Err(TensorError::Empty("mse_rows"));
        }
        let total: S = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| (x - y) * (x - y)).sum();
        let loss = total / S::from_f64(rows as f64);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(loss), Op::MseRows { a, b, rows }, rg))
    }

    /// Euclidean norm over the last axis.
    pub fn l2_norm(&mut self, a: Var) -> Result<Var, TensorError> {
        let shape = self.shape(a).to_vec();
        let d = *shape.last().ok_or(TensorError::Empty("l2_norm"))?;
        if d == 0 {
            return Err(TensorError::Empty("l2_norm"));
        }
        let out: Vec<S> = self.data(a).chunks(d).map(|r| r.iter().map(|&x| x * x).sum::<S>().sqrt()).collect();
        let rg = self.rg(a);
        Ok(self.push(Tensor { shape: shape[..shape.len() - 1].to_vec(), data: out }, Op::L2Norm { a }, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: S = self.data(a).iter().copied().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum { a }, rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, TensorError> {
        let n = self.value(a).numel();
        if n == 0 {
            return Err(TensorError::Empty("mean"));
        }
        let s: S = self.data(a).iter().copied().sum::<S>() / S::from_f64(n as f64);
        let rg = self.rg(a);
        Ok(self.push(Tensor::scalar(s), Op::Mean { a }, rg))
    }

    /// Gradients of the scalar `loss` with respect to every recorded value.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>, TensorError> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::Invalid { op: "backward", msg: "loss must be a scalar".into() });
        }
        let mut grads: Vec<Option<Vec<S>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        if !self.rg(loss) {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![S::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.backprop(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<S>>], v: Var) -> Option<&'g mut Vec<S>> {
        if !self.rg(v) {
            return None;
        }
        let n = self.value(v).numel();
        Some(grads[v.0].get_or_insert_with(|| vec![S::zero(); n]))
    }

    fn backprop(&self, node: &Node<S>, g: &[S], grads: &mut [Option<Vec<S>>]) {
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, batched } => {
                let (va, vb) = (self.value(a), self.value(b));
                let sa = va.shape();
                let k = sa[sa.len() - 1];
                if !batched {
                    let n = vb.shape()[1];
                    let rows = va.numel() / k.max(1);
                    if let Some(ga) = self.slot(grads, a) {
                        gemm(rows, n, k, g, false, vb.data(), true, ga, true);
                    }
                    if let Some(gb) = self.slot(grads, b) {
                        gemm(k, rows, n, va.data(), true, g, false, gb, true);
                    }
                } else {
                    let m = sa[sa.len() - 2];
                    let n = vb.shape()[vb.shape().len() - 1];
                    let batch = va.numel() / (m * k).max(1);
                    if let Some(ga) = self.slot(grads, a) {
                        for bi in 0..batch {
                            gemm(
                                m,
                                n,
                                k,
                                &g[bi * m * n..],
                                false,
                                &vb.data()[bi * k * n..],
                                true,
                                &mut ga[bi * m * k..(bi + 1) * m * k],
                                true,
                            );
                        }
                    }
                    if let Some(gb) = self.slot(grads, b) {
                        for bi in 0..batch {
                            gemm(
                                k,
                                m,
                                n,
                                &va.data()[bi * m * k..],
                                true,
                                &g[bi * m * n..],
                                false,
                                &mut gb[bi * k * n..(bi + 1) * k * n],
                                true,
                            );
                        }
                    }
                }
            }
            &Op::Add { a, b } | &Op::Sub { a, b } => {
                let neg = matches!(node.op, Op::Sub { .. });
                if let Some(ga) = self.slot(grads, a) {
                    ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                }
                let block = self.value(b).numel();
                if let Some(gb) = self.slot(grads, b) {
                    for chunk in g.chunks(block.max(1)) {
                        for (x, &y) in gb.iter_mut().zip(chunk) {
                            if neg {
                                *x -= y;
                            } else {
                                *x += y;
                            }
                        }
                    }
                }
            }
            &Op::Mul { a, b } => {
                let (va, vb) = (self.value(a).data(), self.value(b).data());
                let block = vb.len().max(1);
                if let Some(ga) = self.slot(grads, a) {
                    for (c, (gc, gg)) in ga.chunks_mut(block).zip(g.chunks(block)).enumerate() {
                        let _ = c;
                        for ((x, &y), &w) in gc.iter_mut().zip(gg).zip(vb) {
                            *x += y * w;
                        }
                    }
                }
                if let Some(gb) = self.slot(grads, b) {
                    for (ac, gg) in va.chunks(block).zip(g.chunks(block)) {
                        for ((x, &y), &w) in gb.iter_mut().zip(gg).zip(ac) {
                            *x += y * w;
                        }
                    }
                }
            }
            &Op::Scale { a, c } => {
                if let Some(ga) = self.slot(grads, a) {
                    ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y * c);
                }
            }
            Op::Permute { a, perm } => {
                let a = *a;
                let shape = self.shape(a).to_vec();
                let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
                let src_strides = strides(&shape);
                let out_src_strides: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
                if let Some(ga) = self.slot(grads, a) {
                    let mut i = 0;
                    for_each_offset(&out_shape, &out_src_strides, |off| {
                        ga[off] += g[i];
                        i += 1;
                    });
                }
            }
            &Op::Reshape { a } => {
                if let Some(ga) = self.slot(grads, a) {
                    ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                }
            }
            Op::GatherRows { src, idx } => {
                let shape = self.shape(*src);
                let width: usize = shape[1..].iter().product();
                if let Some(gs) = self.slot(grads, *src) {
                    for (i, &r) in idx.iter().enumerate() {
                        for (x, &y) in gs[r * width..(r + 1) * width].iter_mut().zip(&g[i * width..(i + 1) * width]) {
                            *x += y;
                        }
                    }
                }
            }
            &Op::Slice { a, axis, start } => {
                let shape = self.shape(a).to_vec();
                let len = node.value.shape()[axis];
                let outer: usize = shape[..axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                if let Some(ga) = self.slot(grads, a) {
                    for o in 0..outer {
                        let base = o * shape[axis] * inner + start * inner;
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        for (x, &y) in ga[base..base + len * inner].iter_mut().zip(src) {
                            *x += y;
                        }
                    }
                }
            }
            &Op::Softmax { a } => {
                let y = node.value.data();
                let width = *node.value.shape().last().unwrap();
                if let Some(ga) = self.slot(grads, a) {
                    for ((gr, yr), out) in g.chunks(width).zip(y.chunks(width)).zip(ga.chunks_mut(width)) {
                        let dot: S = gr.iter().zip(yr).map(|(&p, &q)| p * q).sum();
                        for ((o, &gi), &yi) in out.iter_mut().zip(gr).zip(yr) {
                            *o += yi * (gi - dot);
                        }
                    }
                }
            }
            &Op::CausalMask { a } => {
                let t = *node.value.shape().last().unwrap();
                if let Some(ga) = self.slot(grads, a) {
                    for (gm, om) in g.chunks(t * t).zip(ga.chunks_mut(t * t)) {
                        for i in 0..t {
                            for j in 0..=i {
                                om[i * t + j] += gm[i * t + j];
                            }
                        }
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let d = self.value(*gamma).numel();
                let gam = self.value(*gamma).data();
                if let Some(gg) = self.slot(grads, *gamma) {
                    for (gr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                        for ((o, &gi), &hi) in gg.iter_mut().zip(gr).zip(hr) {
                            *o += gi * hi;
                        }
                    }
                }
                if let Some(gb) = self.slot(grads, *beta) {
                    for gr in g.chunks(d) {
                        for (o, &gi) in gb.iter_mut().zip(gr) {
                            *o += gi;
                        }
                    }
                }
                if let Some(gx) = self.slot(grads, *x) {
                    let inv_d = S::from_f64(1.0 / d as f64);
                    let mut dh = vec![S::zero(); d];
                    for (r, ((gr, hr), out)) in g.chunks(d).zip(xhat.chunks(d)).zip(gx.chunks_mut(d)).enumerate() {
                        for j in 0..d {
                            dh[j] = gr[j] * gam[j];
                        }
                        let sum_dh: S = dh.iter().copied().sum();
                        let sum_dh_h: S = dh.iter().zip(hr).map(|(&a, &b)| a * b).sum();
                        for j in 0..d {
                            out[j] += rstd[r] * (dh[j] - inv_d * sum_dh - hr[j] * inv_d * sum_dh_h);
                        }
                    }
                }
            }
            &Op::Gelu { a } => {
                let x = self.value(a).data();
                if let Some(ga) = self.slot(grads, a) {
                    for ((o, &gi), &xi) in ga.iter_mut().zip(g).zip(x) {
                        *o += gi * gelu_parts(xi).1;
                    }
                }
            }
            Op::CrossEntropy { logits, targets, mask, probs, count } => {
                let v = self.shape(*logits)[1];
                let scale = g[0] / S::from_f64(*count as f64);
                if let Some(gl) = self.slot(grads, *logits) {
                    for (r, out) in gl.chunks_mut(v).enumerate() {
                        if !mask[r] {
                            continue;
                        }
                        for (o, &p) in out.iter_mut().zip(&probs[r * v..(r + 1) * v]) {
                            *o += scale * p;
                        }
                        out[targets[r]] -= scale;
                    }
                }
            }
            &Op::MseRows { a, b, rows } => {
                let scale = g[0] * S::from_f64(2.0 / rows as f64);
                let (va, vb) = (self.value(a).data(), self.value(b).data());
                if let Some(ga) = self.slot(grads, a) {
                    for ((o, &x), &y) in ga.iter_mut().zip(va).zip(vb) {
                        *o += scale * (x - y);
                    }
                }
                if let Some(gb) = self.slot(grads, b) {
                    for ((o, &x), &y) in gb.iter_mut().zip(va).zip(vb) {
                        *o -= scale * (x - y);
                    }
                }
            }
            &Op::L2Norm { a } => {
                let x = self.value(a).data();
                let d = *self.shape(a).last().unwrap();
                let norms = node.value.data();
                if let Some(ga) = self.slot(grads, a) {
                    for (r, (out, xr)) in ga.chunks_mut(d).zip(x.chunks(d)).enumerate() {
                        if norms[r] > S::zero() {
                            let s = g[r] / norms[r];
                            for (o, &xi) in out.iter_mut().zip(xr) {
                                *o += s * xi;
                            }
                        }
                    }
                }
            }
            &Op::Sum { a } => {
                if let Some(ga) = self.slot(grads, a) {
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            &Op::Mean { a } => {
                let n = self.value(a).numel();
                let s = g[0] / S::from_f64(n as f64);
                if let Some(ga) = self.slot(grads, a) {
                    ga.iter_mut().for_each(|x| *x += s);
                }
            }
        }
    }
}

/// Row-major strides of `shape`.
fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Visits, in row-major order over `shape`, the source offsets given by
/// per-axis `src_strides`.
fn for_each_offset(shape: &[usize], src_strides: &[usize], mut f: impl FnMut(usize)) {
    let n: usize = shape.iter().product();
    if n == 0 {
        return;
    }
    let nd = shape.len();
    if nd == 0 {
        f(0);
        return;
    }
    let mut idx = vec![0usize; nd];
    let mut off = 0usize;
    let last = nd - 1;
    loop {
        // innermost axis as a tight loop
        let st = src_strides[last];
        for j in 0..shape[last] {
            f(off + j * st);
        }
        let mut ax = last;
        loop {
            if ax == 0 {
                return;
            }
            ax -= 1;
            idx[ax] += 1;
            off += src_strides[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            off -= src_strides[ax] * shape[ax];
            idx[ax] = 0;
        }
    }
}

/// Max-subtracted softmax of one row, in place.
pub fn softmax_in_place<S: Scalar>(row: &mut [S]) {
    let max = row.iter().copied().fold(S::neg_infinity(), S::max);
    let mut sum = S::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, data).unwrap()
    }

    #[test]
    fn uniform_logits_cross_entropy_is_log_v() {
        let mut tape = Tape::<f64>::new();
        let v = 7;
        let logits = tape.param(Tensor::zeros(&[2, v]));
        let loss = tape.cross_entropy(logits, &[3, 5], &[true, true]).unwrap();
        assert!((tape.item(loss) - (v as f64).ln()).abs() < 1e-12);
        let grads = tape.backward(loss).unwrap();
        let g = grads.get(logits).unwrap();
        for r in 0..2 {
            for c in 0..v {
                let onehot = if c == [3, 5][r] { 1.0 } else { 0.0 };
                // mean over the two rows halves each row's softmax - onehot
                assert!((g[r * v + c] - (1.0 / v as f64 - onehot) / 2.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn masked_rows_get_no_gradient_and_empty_mask_errors() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.param(t(&[2, 3], &[0.1, 0.2, 0.3, 1.0, -1.0, 0.5]));
        let loss = tape.cross_entropy(logits, &[0, 2], &[false, true]).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(logits).unwrap()[..3].iter().all(|&x| x == 0.0));
        assert!(matches!(tape.cross_entropy(logits, &[0, 2], &[false, false]), Err(TensorError::Empty(_))));
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[3], &[1.0, 2.0, 3.0]));
        let y = tape.mul(x, x).unwrap();
        let d = tape.detach(y);
        let z = tape.add(x, d).unwrap();
        let s = tape.sum(z);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[1.0, 1.0, 1.0]);
        assert!(grads.get(d).is_none());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[2, 4], &[1000.0, 1001.0, 999.0, 0.0, -3.0, 0.5, 2.0, 7.0]));
        let y = tape.softmax(x).unwrap();
        for row in tape.data(y).chunks(4) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_standardizes_rows() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[2, 5], &[1.0, 4.0, -2.0, 8.0, 0.5, 3.0, 3.0, 3.0, 3.0, 3.5]));
        let g = tape.constant(t(&[5], &[1.0; 5]));
        let b = tape.constant(Tensor::zeros(&[5]));
        let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
        for row in tape.data(y).chunks(5) {
            let mean = row.iter().sum::<f64>() / 5.0;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 5.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn permute_matches_index_arithmetic() {
        let mut tape = Tape::<f64>::new();
        let data: Vec<f64> = (0..24).map(|i| i as f64).collect();
        let x = tape.constant(t(&[2, 3, 4], &data));
        let y = tape.permute(x, &[2, 0, 1]).unwrap();
        assert_eq!(tape.shape(y), &[4, 2, 3]);
        for i in 0..4 {
            for j in 0..2 {
                for k in 0..3 {
                    assert_eq!(tape.data(y)[i * 6 + j * 3 + k], data[j * 12 + k * 4 + i]);
                }
            }
        }
    }

    #[test]
    fn causal_mask_zeroes_future_attention() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[3, 3], &[0.3, 0.1, 0.9, 0.2, 0.5, 0.4, 0.7, 0.6, 0.8]));
        let m = tape.causal_mask(x).unwrap();
        let p = tape.softmax(m).unwrap();
        let d = tape.data(p);
        assert_eq!(d[0], 1.0);
        assert_eq!((d[1], d[2], d[5]), (0.0, 0.0, 0.0));
    }

    #[test]
    fn shape_errors_are_reported() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[4, 2]));
        assert!(matches!(tape.matmul(a, b), Err(TensorError::Shape { op: "matmul", .. })));
        assert!(matches!(tape.add(a, b), Err(TensorError::Shape { op: "add", .. })));
    }

    #[test]
    fn nan_origin_names_the_op() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[2], &[-1.0, 4.0]));
        let n = tape.l2_norm(x).unwrap();
        assert!(tape.nan_origin().is_none());
        let inf = tape.constant(t(&[1, 2], &[f64::INFINITY, f64::INFINITY]));
        let _ = tape.softmax(inf).unwrap();
        assert_eq!(tape.nan_origin(), Some("softmax"));
        let _ = n;
    }
}
