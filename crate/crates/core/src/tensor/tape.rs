//! Operation tape: forward recording and reverse-mode backward.

use super::{c, Element, ParamId, ParamSet, Tensor, TensorError};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Recorded operation kinds. Input fields are tape node indices.
#[derive(Debug, Clone)]
pub enum Op {
    Leaf,
    MatMul { a: usize, b: usize, trans_b: bool },
    BatchMatMul { a: usize, b: usize, trans_b: bool },
    Add { a: usize, b: usize },
    AddBias { a: usize, bias: usize },
    Mul { a: usize, b: usize },
    Scale { a: usize, factor: f64 },
    AddScalar { a: usize },
    Gelu { a: usize },
    Log { a: usize },
    SoftmaxLast { a: usize },
    LogSoftmaxLast { a: usize },
    LayerNorm { a: usize, gain: usize, bias: usize },
    GatherRows { a: usize, indices: Vec<usize> },
    Pick { a: usize, indices: Vec<usize> },
    Reshape { a: usize },
    Permute { a: usize, perm: Vec<usize> },
    Sum { a: usize },
    Mean { a: usize },
}

struct Node<E: Element> {
    value: Tensor<E>,
    op: Op,
    requires_grad: bool,
}

/// Growable record of one forward computation.
///
/// Node indices are created in execution order, so index order is a
/// topological order and backward is a single reverse sweep.
pub struct Tape<E: Element = f32> {
    nodes: Vec<Node<E>>,
    grads: Vec<Option<Vec<E>>>,
    /// (node, param) links used to export grads after backward.
    param_links: Vec<(usize, ParamId)>,
    grad_enabled: bool,
}

const LAYER_NORM_EPS: f64 = 1e-12;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new(), param_links: Vec::new(), grad_enabled: true }
    }

    /// A tape that records values but never tracks gradients (teacher/eval mode).
    pub fn inference() -> Self {
        let mut t = Self::new();
        t.grad_enabled = false;
        t
    }

    pub fn value(&self, v: Var) -> &Tensor<E> {
        &self.nodes[v.0].value
    }

    /// Gradient of a node after `backward`, if it was reached.
    pub fn grad(&self, v: Var) -> Option<&[E]> {
        self.grads[v.0].as_deref()
    }

    pub fn leaf(&mut self, value: Tensor<E>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad && self.grad_enabled)
    }

    /// Constant input (never differentiated).
    pub fn constant(&mut self, value: Tensor<E>) -> Var {
        self.leaf(value, false)
    }

    /// Insert a parameter leaf; its gradient is exported by `export_param_grads`.
    pub fn param(&mut self, params: &ParamSet<E>, id: ParamId) -> Var {
        let v = self.leaf(params.get(id).value.clone(), true);
        if self.grad_enabled {
            self.param_links.push((v.0, id));
        }
        v
    }

    fn push(&mut self, value: Tensor<E>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[usize]) -> bool {
        self.grad_enabled && ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    fn check_finite(data: &[E], op: &'static str) -> Result<(), TensorError> {
        if data.iter().any(|x| !x.is_finite()) {
            return Err(TensorError::NonFinite { op });
        }
        Ok(())
    }

    // ── forward ops ─────────────────────────────────────────────────────

    /// 2-D matrix product `a @ b`, or `a @ b^T` when `trans_b`.
    pub fn matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var, TensorError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 {
            return Err(shape_err("matmul", &[sa, sb]));
        }
        let (m, k) = (sa[0], sa[1]);
        let (bk, n) = if trans_b { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if k != bk {
            return Err(shape_err("matmul", &[sa, sb]));
        }
        let out = gemm(self.value(a).data(), self.value(b).data(), m, k, n, trans_b);
        Self::check_finite(&out, "matmul")?;
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(
            Tensor::new(vec![m, n], out).unwrap(),
            Op::MatMul { a: a.0, b: b.0, trans_b },
            rg,
        ))
    }

    /// Batched 3-D matmul: `[B,m,k] @ [B,k,n]` (`[B,n,k]` when `trans_b`).
    pub fn batch_matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var, TensorError> {
        let (sa, sb) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(shape_err("batch_matmul", &[&sa, &sb]));
        }
        let (bt, m, k) = (sa[0], sa[1], sa[2]);
        let (bk, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if k != bk {
            return Err(shape_err("batch_matmul", &[&sa, &sb]));
        }
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(bt * m * n);
        for i in 0..bt {
            out.extend(gemm(&ad[i * m * k..(i + 1) * m * k], &bd[i * k * n..(i + 1) * k * n], m, k, n, trans_b));
        }
        Self::check_finite(&out, "batch_matmul")?;
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(
            Tensor::new(vec![bt, m, n], out).unwrap(),
            Op::BatchMatMul { a: a.0, b: b.0, trans_b },
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(shape_err("add", &[self.value(a).shape(), self.value(b).shape()]));
        }
        let out: Vec<E> =
            self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect();
        Self::check_finite(&out, "add")?;
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(Tensor::new(shape, out).unwrap(), Op::Add { a: a.0, b: b.0 }, rg))
    }

    /// Broadcast-add a 1-D bias over the last axis.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var, TensorError> {
        let sa = self.value(a).shape().to_vec();
        let sb = self.value(bias).shape();
        let d = *sa.last().unwrap_or(&0);
        if sb.len() != 1 || sb[0] != d {
            return Err(shape_err("add_bias", &[&sa, sb]));
        }
        let bd = self.value(bias).data().to_vec();
        let out: Vec<E> =
            self.value(a).data().iter().enumerate().map(|(i, &x)| x + bd[i % d]).collect();
        Self::check_finite(&out, "add_bias")?;
        let rg = self.rg(&[a.0, bias.0]);
        Ok(self.push(Tensor::new(sa, out).unwrap(), Op::AddBias { a: a.0, bias: bias.0 }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(shape_err("mul", &[self.value(a).shape(), self.value(b).shape()]));
        }
        let out: Vec<E> =
            self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
        Self::check_finite(&out, "mul")?;
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(Tensor::new(shape, out).unwrap(), Op::Mul { a: a.0, b: b.0 }, rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, TensorError> {
        let f: E = c(factor);
        let out: Vec<E> = self.value(a).data().iter().map(|&x| x * f).collect();
        Self::check_finite(&out, "scale")?;
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(&[a.0]);
        Ok(self.push(Tensor::new(shape, out).unwrap(), Op::Scale { a: a.0, factor }, rg))
    }

    pub fn add_scalar(&mut self, a: Var, offset: f64) -> Result<Var, TensorError> {
        let o: E = c(offset);
        let out: Vec<E> = self.value(a).data().iter().map(|&x| x + o).collect();
        Self::check_finite(&out, "add_scalar")?;
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(&[a.0]);
        Ok(self.push(Tensor::new(shape, out).unwrap(), Op::AddScalar { a: a.0 }, rg))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var, TensorError> {
        let out: Vec<E> = self.value(a).data().iter().map(|&x| gelu_fwd(x)).collect();
        Self::check_finite(&out, "gelu")?;
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(&[a.0]);
        Ok(self.push(Tensor::new(shape, out).unwrap(), Op::Gelu { a: a.0 }, rg))
    }

    pub fn log(&mut self, a: Var) -> Result<Var, TensorError> {
        let out: Vec<E> = self.value(a).data().iter().map(|&x| x.ln()).collect();
        Self::check_finite(&out, "log")?;
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(&[a.0]);
        Ok(self.push(Tensor::new(shape, out).unwrap(), Op::Log { a: a.0 }, rg))
    }

    /// Softmax over the last axis, log-sum-exp stabilized.
    pub fn softmax_last(&mut self, a: Var) -> Result<Var, TensorError> {
        let t = self.value(a);
        Self::check_finite(t.data(), "softmax(input)")?;
        let d = last_dim(t.shape()).ok_or_else(|| shape_err("softmax", &[t.shape()]))?;
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(d) {
            let mx = row.iter().cloned().fold(E::neg_infinity(), E::max);
            let mut sum = E::zero();
            for x in row.iter_mut() {
                *x = (*x - mx).exp();
                sum = sum + *x;
            }
            for x in row.iter_mut() {
                *x = *x / sum;
            }
        }
        Self::check_finite(&out, "softmax")?;
        let shape = t.shape().to_vec();
        let rg = self.rg(&[a.0]);
        Ok(self.push(Tensor::new(shape, out).unwrap(), Op::SoftmaxLast { a: a.0 }, rg))
    }

    /// `log(softmax(x))` over the last axis, computed directly as `x - logsumexp(x)`.
    pub fn log_softmax_last(&mut self, a: Var) -> Result<Var, TensorError> {
        let t = self.value(a);
        Self::check_finite(t.data(), "log_softmax(input)")?;
        let d = last_dim(t.shape()).ok_or_else(|| shape_err("log_softmax", &[t.shape()]))?;
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(d) {
            let mx = row.iter().cloned().fold(E::neg_infinity(), E::max);
            let lse = mx + row.iter().map(|&x| (x - mx).exp()).sum::<E>().ln();
            for x in row.iter_mut() {
                *x = *x - lse;
            }
        }
        Self::check_finite(&out, "log_softmax")?;
        let shape = t.shape().to_vec();
        let rg = self.rg(&[a.0]);
        Ok(self.push(Tensor::new(shape, out).unwrap(), Op::LogSoftmaxLast { a: a.0 }, rg))
    }

    /// Layer normalization over the last axis with learned gain and bias.
    pub fn layer_norm(&mut self, a: Var, gain: Var, bias: Var) -> Result<Var, TensorError> {
        let sa = self.value(a).shape().to_vec();
        let d = last_dim(&sa).ok_or_else(|| shape_err("layer_norm", &[&sa]))?;
        if self.value(gain).shape() != [d] || self.value(bias).shape() != [d] {
            return Err(shape_err(
                "layer_norm",
                &[&sa, self.value(gain).shape(), self.value(bias).shape()],
            ));
        }
        let g = self.value(gain).data().to_vec();
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(a).data().to_vec();
        let eps: E = c(LAYER_NORM_EPS);
        let inv_d: E = c(1.0 / d as f64);
        for row in out.chunks_mut(d) {
            let mean = row.iter().cloned().sum::<E>() * inv_d;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<E>() * inv_d;
            let inv_std = (var + eps).sqrt().recip();
            for (j, x) in row.iter_mut().enumerate() {
                *x = (*x - mean) * inv_std * g[j] + b[j];
            }
        }
        Self::check_finite(&out, "layer_norm")?;
        let rg = self.rg(&[a.0, gain.0, bias.0]);
        Ok(self.push(
            Tensor::new(sa, out).unwrap(),
            Op::LayerNorm { a: a.0, gain: gain.0, bias: bias.0 },
            rg,
        ))
    }

    /// Gather rows of a 2-D tensor by index (embedding lookup / masked row select).
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var, TensorError> {
        let sa = self.value(a).shape();
        if sa.len() != 2 {
            return Err(shape_err("gather_rows", &[sa]));
        }
        let (n, d) = (sa[0], sa[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(TensorError::IndexOutOfRange { op: "gather_rows", index: bad, bound: n });
        }
        let ad = self.value(a).data();
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            out.extend_from_slice(&ad[i * d..(i + 1) * d]);
        }
        let rg = self.rg(&[a.0]);
        Ok(self.push(
            Tensor::new(vec![indices.len(), d], out).unwrap(),
            Op::GatherRows { a: a.0, indices: indices.to_vec() },
            rg,
        ))
    }

    /// `out[i] = a[i, indices[i]]` for a 2-D tensor.
    pub fn pick(&mut self, a: Var, indices: &[usize]) -> Result<Var, TensorError> {
        let sa = self.value(a).shape();
        if sa.len() != 2 || sa[0] != indices.len() {
            return Err(shape_err("pick", &[sa]));
        }
        let (n, d) = (sa[0], sa[1]);
        if let Some(&bad) = indices.iter().find(|&&j| j >= d) {
            return Err(TensorError::IndexOutOfRange { op: "pick", index: bad, bound: d });
        }
        let ad = self.value(a).data();
        let out: Vec<E> = (0..n).map(|i| ad[i * d + indices[i]]).collect();
        let rg = self.rg(&[a.0]);
        Ok(self.push(
            Tensor::new(vec![n], out).unwrap(),
            Op::Pick { a: a.0, indices: indices.to_vec() },
            rg,
        ))
    }

    pub fn reshape(&mut self, a: Var, new_shape: Vec<usize>) -> Result<Var, TensorError> {
        let numel: usize = new_shape.iter().product();
        if numel != self.value(a).numel() {
            return Err(shape_err("reshape", &[self.value(a).shape(), &new_shape]));
        }
        let data = self.value(a).data().to_vec();
        let rg = self.rg(&[a.0]);
        Ok(self.push(Tensor::new(new_shape, data).unwrap(), Op::Reshape { a: a.0 }, rg))
    }

    /// Axis permutation (generalized transpose).
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var, TensorError> {
        let sa = self.value(a).shape().to_vec();
        let mut seen = vec![false; sa.len()];
        if perm.len() != sa.len() || perm.iter().any(|&p| p >= sa.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(shape_err("permute", &[&sa]));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| sa[p]).collect();
        let out = permute_data(self.value(a).data(), &sa, perm);
        let rg = self.rg(&[a.0]);
        Ok(self.push(
            Tensor::new(out_shape, out).unwrap(),
            Op::Permute { a: a.0, perm: perm.to_vec() },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let s: E = self.value(a).data().iter().cloned().sum();
        Self::check_finite(std::slice::from_ref(&s), "sum")?;
        let rg = self.rg(&[a.0]);
        Ok(self.push(Tensor::scalar(s), Op::Sum { a: a.0 }, rg))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, TensorError> {
        let n = self.value(a).numel();
        if n == 0 {
            return Err(shape_err("mean", &[self.value(a).shape()]));
        }
        let s: E = self.value(a).data().iter().cloned().sum::<E>() / c(n as f64);
        Self::check_finite(std::slice::from_ref(&s), "mean")?;
        let rg = self.rg(&[a.0]);
        Ok(self.push(Tensor::scalar(s), Op::Mean { a: a.0 }, rg))
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar root. Fills gradients of every
    /// `requires_grad` node reachable from `root`.
    pub fn backward(&mut self, root: Var) -> Result<(), TensorError> {
        if self.value(root).numel() != 1 {
            return Err(TensorError::NonScalarRoot { shape: self.value(root).shape().to_vec() });
        }
        for g in &mut self.grads {
            *g = None;
        }
        self.grads[root.0] = Some(vec![E::one()]);
        for i in (0..=root.0).rev() {
            if self.grads[i].is_none() || !self.nodes[i].requires_grad {
                continue;
            }
            let dy = self.grads[i].take().unwrap();
            self.step_backward(i, &dy);
            self.grads[i] = Some(dy);
        }
        Ok(())
    }

    fn acc(&mut self, node: usize, delta: &[E]) {
        if !self.nodes[node].requires_grad {
            return;
        }
        let slot = self.grads[node].get_or_insert_with(|| vec![E::zero(); self.nodes[node].value.numel()]);
        for (g, &d) in slot.iter_mut().zip(delta) {
            *g = *g + d;
        }
    }

    fn step_backward(&mut self, i: usize, dy: &[E]) {
        let op = self.nodes[i].op.clone();
        match op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_b } => {
                let sa = self.nodes[a].value.shape().to_vec();
                let (m, k) = (sa[0], sa[1]);
                let n = self.nodes[i].value.shape()[1];
                let (ad, bd) = (self.nodes[a].value.data().to_vec(), self.nodes[b].value.data().to_vec());
                if !trans_b {
                    // c = a@b : da = dy @ b^T, db = a^T @ dy
                    let da = gemm(dy, &bd, m, n, k, true);
                    let db = gemm_tn(&ad, dy, m, k, n);
                    self.acc(a, &da);
                    self.acc(b, &db);
                } else {
                    // c = a@b^T, b:[n,k] : da = dy @ b, db = dy^T @ a
                    let da = gemm(dy, &bd, m, n, k, false);
                    let db = gemm_tn(dy, &ad, m, n, k);
                    self.acc(a, &da);
                    self.acc(b, &db);
                }
            }
            Op::BatchMatMul { a, b, trans_b } => {
                let sa = self.nodes[a].value.shape().to_vec();
                let (bt, m, k) = (sa[0], sa[1], sa[2]);
                let n = self.nodes[i].value.shape()[2];
                let ad = self.nodes[a].value.data().to_vec();
                let bd = self.nodes[b].value.data().to_vec();
                let mut da = Vec::with_capacity(bt * m * k);
                let mut db = Vec::with_capacity(bd.len());
                for t in 0..bt {
                    let dyt = &dy[t * m * n..(t + 1) * m * n];
                    let at = &ad[t * m * k..(t + 1) * m * k];
                    let bts = &bd[t * k * n..(t + 1) * k * n];
                    if !trans_b {
                        da.extend(gemm(dyt, bts, m, n, k, true));
                        db.extend(gemm_tn(at, dyt, m, k, n));
                    } else {
                        da.extend(gemm(dyt, bts, m, n, k, false));
                        db.extend(gemm_tn(dyt, at, m, n, k));
                    }
                }
                self.acc(a, &da);
                self.acc(b, &db);
            }
            Op::Add { a, b } => {
                self.acc(a, dy);
                self.acc(b, dy);
            }
            Op::AddBias { a, bias } => {
                self.acc(a, dy);
                let d = self.nodes[bias].value.numel();
                let mut db = vec![E::zero(); d];
                for (j, &g) in dy.iter().enumerate() {
                    db[j % d] = db[j % d] + g;
                }
                self.acc(bias, &db);
            }
            Op::Mul { a, b } => {
                let bd: Vec<E> = self.nodes[b].value.data().iter().zip(dy).map(|(&x, &g)| x * g).collect();
                let ad: Vec<E> = self.nodes[a].value.data().iter().zip(dy).map(|(&x, &g)| x * g).collect();
                self.acc(a, &bd);
                self.acc(b, &ad);
            }
            Op::Scale { a, factor } => {
                let f: E = c(factor);
                let da: Vec<E> = dy.iter().map(|&g| g * f).collect();
                self.acc(a, &da);
            }
            Op::AddScalar { a } => self.acc(a, dy),
            Op::Gelu { a } => {
                let da: Vec<E> =
                    self.nodes[a].value.data().iter().zip(dy).map(|(&x, &g)| gelu_bwd(x) * g).collect();
                self.acc(a, &da);
            }
            Op::Log { a } => {
                let da: Vec<E> =
                    self.nodes[a].value.data().iter().zip(dy).map(|(&x, &g)| g / x).collect();
                self.acc(a, &da);
            }
            Op::SoftmaxLast { a } => {
                let y = self.nodes[i].value.data().to_vec();
                let d = *self.nodes[i].value.shape().last().unwrap();
                let mut da = vec![E::zero(); y.len()];
                for r in 0..y.len() / d {
                    let (ys, gs) = (&y[r * d..(r + 1) * d], &dy[r * d..(r + 1) * d]);
                    let dot: E = ys.iter().zip(gs).map(|(&yv, &gv)| yv * gv).sum();
                    for j in 0..d {
                        da[r * d + j] = ys[j] * (gs[j] - dot);
                    }
                }
                self.acc(a, &da);
            }
            Op::LogSoftmaxLast { a } => {
                let y = self.nodes[i].value.data().to_vec();
                let d = *self.nodes[i].value.shape().last().unwrap();
                let mut da = vec![E::zero(); y.len()];
                for r in 0..y.len() / d {
                    let (ys, gs) = (&y[r * d..(r + 1) * d], &dy[r * d..(r + 1) * d]);
                    let gsum: E = gs.iter().cloned().sum();
                    for j in 0..d {
                        da[r * d + j] = gs[j] - ys[j].exp() * gsum;
                    }
                }
                self.acc(a, &da);
            }
            Op::LayerNorm { a, gain, bias } => {
                let x = self.nodes[a].value.data().to_vec();
                let d = *self.nodes[a].value.shape().last().unwrap();
                let g = self.nodes[gain].value.data().to_vec();
                let eps: E = c(LAYER_NORM_EPS);
                let inv_d: E = c(1.0 / d as f64);
                let mut da = vec![E::zero(); x.len()];
                let mut dg = vec![E::zero(); d];
                let mut db = vec![E::zero(); d];
                for r in 0..x.len() / d {
                    let xs = &x[r * d..(r + 1) * d];
                    let gs = &dy[r * d..(r + 1) * d];
                    let mean = xs.iter().cloned().sum::<E>() * inv_d;
                    let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<E>() * inv_d;
                    let inv_std = (var + eps).sqrt().recip();
                    let xhat: Vec<E> = xs.iter().map(|&v| (v - mean) * inv_std).collect();
                    let gdy: Vec<E> = (0..d).map(|j| g[j] * gs[j]).collect();
                    let m1 = gdy.iter().cloned().sum::<E>() * inv_d;
                    let m2 = gdy.iter().zip(&xhat).map(|(&p, &h)| p * h).sum::<E>() * inv_d;
                    for j in 0..d {
                        dg[j] = dg[j] + gs[j] * xhat[j];
                        db[j] = db[j] + gs[j];
                        da[r * d + j] = (gdy[j] - m1 - xhat[j] * m2) * inv_std;
                    }
                }
                self.acc(a, &da);
                self.acc(gain, &dg);
                self.acc(bias, &db);
            }
            Op::GatherRows { a, indices } => {
                let d = self.nodes[i].value.shape()[1];
                let mut da = vec![E::zero(); self.nodes[a].value.numel()];
                for (r, &idx) in indices.iter().enumerate() {
                    for j in 0..d {
                        da[idx * d + j] = da[idx * d + j] + dy[r * d + j];
                    }
                }
                self.acc(a, &da);
            }
            Op::Pick { a, indices } => {
                let d = self.nodes[a].value.shape()[1];
                let mut da = vec![E::zero(); self.nodes[a].value.numel()];
                for (r, &idx) in indices.iter().enumerate() {
                    da[r * d + idx] = dy[r];
                }
                self.acc(a, &da);
            }
            Op::Reshape { a } => self.acc(a, dy),
            Op::Permute { a, perm } => {
                let out_shape = self.nodes[i].value.shape().to_vec();
                let mut inv = vec![0usize; perm.len()];
                for (to, &from) in perm.iter().enumerate() {
                    inv[from] = to;
                }
                let da = permute_data(dy, &out_shape, &inv);
                self.acc(a, &da);
            }
            Op::Sum { a } => {
                let da = vec![dy[0]; self.nodes[a].value.numel()];
                self.acc(a, &da);
            }
            Op::Mean { a } => {
                let n = self.nodes[a].value.numel();
                let da = vec![dy[0] / c(n as f64); n];
                self.acc(a, &da);
            }
        }
    }

    /// Copy gradients of parameter leaves back into the parameter set.
    pub fn export_param_grads(&self, params: &mut ParamSet<E>) {
        for &(node, id) in &self.param_links {
            if let Some(g) = &self.grads[node] {
                let p = params.get_mut(id);
                for (pg, &ng) in p.grad.iter_mut().zip(g) {
                    *pg = *pg + ng;
                }
                p.grad_set = true;
            }
        }
    }
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

fn last_dim(shape: &[usize]) -> Option<usize> {
    shape.last().copied().filter(|&d| d > 0)
}

fn shape_err(op: &'static str, shapes: &[&[usize]]) -> TensorError {
    TensorError::ShapeMismatch { op, details: format!("{shapes:?}") }
}

fn gelu_fwd<E: Element>(x: E) -> E {
    let half: E = c(0.5);
    let k: E = c(GELU_C);
    let a: E = c(GELU_A);
    let u = k * (x + a * x * x * x);
    half * x * (E::one() + u.tanh())
}

fn gelu_bwd<E: Element>(x: E) -> E {
    let half: E = c(0.5);
    let k: E = c(GELU_C);
    let a: E = c(GELU_A);
    let three: E = c(3.0);
    let u = k * (x + a * x * x * x);
    let t = u.tanh();
    let sech2 = E::one() - t * t;
    half * (E::one() + t) + half * x * sech2 * k * (E::one() + three * a * x * x)
}

/// `a[m,k] @ b[k,n]`, or `a[m,k] @ b[n,k]^T` when `trans_b`.
pub fn gemm<E: Element>(a: &[E], b: &[E], m: usize, k: usize, n: usize, trans_b: bool) -> Vec<E> {
    let mut out = vec![E::zero(); m * n];
    if trans_b {
        for i in 0..m {
            let ar = &a[i * k..(i + 1) * k];
            for j in 0..n {
                let br = &b[j * k..(j + 1) * k];
                let mut s = E::zero();
                for p in 0..k {
                    s = s + ar[p] * br[p];
                }
                out[i * n + j] = s;
            }
        }
    } else {
        for i in 0..m {
            let or = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = a[i * k + p];
                if av == E::zero() {
                    continue;
                }
                let br = &b[p * n..(p + 1) * n];
                for j in 0..n {
                    or[j] = or[j] + av * br[j];
                }
            }
        }
    }
    out
}

/// `a[m,k]^T @ d[m,n] -> [k,n]` (both operands indexed by the shared leading `m`).
fn gemm_tn<E: Element>(a: &[E], d: &[E], m: usize, k: usize, n: usize) -> Vec<E> {
    let mut out = vec![E::zero(); k * n];
    for i in 0..m {
        let dr = &d[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == E::zero() {
                continue;
            }
            let or = &mut out[p * n..(p + 1) * n];
            for j in 0..n {
                or[j] = or[j] + av * dr[j];
            }
        }
    }
    out
}

fn permute_data<E: Element>(data: &[E], shape: &[usize], perm: &[usize]) -> Vec<E> {
    let rank = shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let numel = data.len();
    let mut out = vec![E::zero(); numel];
    let mut idx = vec![0usize; rank];
    for (o, slot) in out.iter_mut().enumerate().take(numel) {
        // decode output index into coordinates, map through perm to input offset
        let mut rem = o;
        for (d, &s) in out_shape.iter().enumerate() {
            let stride: usize = out_shape[d + 1..].iter().product();
            idx[d] = rem / stride.max(1) % s.max(1);
            rem %= stride.max(1);
        }
        let mut off = 0usize;
        for (d, &p) in perm.iter().enumerate() {
            off += idx[d] * in_strides[p];
        }
        *slot = data[off];
    }
    out
}
