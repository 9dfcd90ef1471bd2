//! Dense f64 tensors and a reverse-mode tape covering the ops the FL-GCN needs.
//!
//! A [`Tape`] is append-only: every op pushes a node whose inputs were pushed
//! earlier, so walking the nodes backwards is a valid reverse topological
//! order.

use std::fmt;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },

    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: &'static str },

    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },

    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}

type TResult<T> = Result<T, TensorError>;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}{:?}", self.shape, self.data)
    }
}

impl Tensor {
    /// Row-major tensor of rank 1 to 4 with finite entries.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> TResult<Self> {
        if shape.is_empty() || shape.len() > 4 {
            return Err(TensorError::InvalidShape { shape, reason: "rank must be 1..=4" });
        }
        if shape.contains(&0) {
            return Err(TensorError::InvalidShape { shape, reason: "extents must be positive" });
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::InvalidShape { shape, reason: "value count does not match extents" });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite { op: "construct" });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Self { shape: shape.to_vec(), data: vec![value; shape.iter().product()] }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![1], data: vec![value] }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> TResult<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_dmatrix(m: &nalgebra::DMatrix<f64>) -> Self {
        let (r, c) = m.shape();
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                data.push(m[(i, j)]);
            }
        }
        Self { shape: vec![r, c], data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn reshaped(&self, shape: &[usize]) -> TResult<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(TensorError::ShapeMismatch { op: "reshape", lhs: self.shape.clone(), rhs: shape.to_vec() });
        }
        Self::new(shape.to_vec(), self.data.clone())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn check_finite(self, op: &'static str) -> TResult<Self> {
        if cfg!(debug_assertions) && !self.data.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite { op });
        }
        Ok(self)
    }

    fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `shape` may be broadcast against `target` when it equals a trailing
/// slice of `target`.
fn trailing_broadcast(op: &'static str, target: &[usize], shape: &[usize]) -> TResult<usize> {
    if shape.len() <= target.len() && target[target.len() - shape.len()..] == *shape {
        Ok(shape.iter().product())
    } else {
        Err(TensorError::ShapeMismatch { op, lhs: target.to_vec(), rhs: shape.to_vec() })
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    ScaleShift(Var, Var, Var),
    Relu(Var),
    Reshape(Var),
    Conv2d { x: Var, kernel: Var, bias: Var },
    Mse(Var, Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::AddBias(..) => "add_bias",
            Op::ScaleShift(..) => "scale_shift",
            Op::Relu(..) => "relu",
            Op::Reshape(..) => "reshape",
            Op::Conv2d { .. } => "conv2d",
            Op::Mse(..) => "mse_loss",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Debug, Default, Clone)]
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

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, op: Op, value: Tensor) -> TResult<Var> {
        let value = value.check_finite(op.name())?;
        Ok(self.push(op, value))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> TResult<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape.len() != 2 || tb.shape.len() != 2 || ta.shape[1] != tb.shape[0] {
            return Err(TensorError::ShapeMismatch { op: "matmul", lhs: ta.shape.clone(), rhs: tb.shape.clone() });
        }
        let (m, k, n) = (ta.shape[0], ta.shape[1], tb.shape[1]);
        let mut out = Tensor::zeros(&[m, n]);
        matmul_raw(&ta.data, &tb.data, m, k, n, &mut out.data);
        self.record(Op::MatMul(a, b), out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> TResult<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape != tb.shape {
            return Err(TensorError::ShapeMismatch { op: "add", lhs: ta.shape.clone(), rhs: tb.shape.clone() });
        }
        let mut out = ta.clone();
        out.add_assign(tb);
        self.record(Op::Add(a, b), out)
    }

    /// `x + b` with `b` broadcast over the leading axes of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> TResult<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        let period = trailing_broadcast("add_bias", &tx.shape, &tb.shape)?;
        let mut out = tx.clone();
        for chunk in out.data.chunks_mut(period) {
            for (o, bv) in chunk.iter_mut().zip(&tb.data) {
                *o += bv;
            }
        }
        self.record(Op::AddBias(x, b), out)
    }

    /// Elementwise `x * w + b`, `w` and `b` broadcast like [`add_bias`](Self::add_bias).
    pub fn scale_shift(&mut self, x: Var, w: Var, b: Var) -> TResult<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        let period = trailing_broadcast("scale_shift", &tx.shape, &tw.shape)?;
        if tb.shape != tw.shape {
            return Err(TensorError::ShapeMismatch { op: "scale_shift", lhs: tw.shape.clone(), rhs: tb.shape.clone() });
        }
        let mut out = tx.clone();
        for chunk in out.data.chunks_mut(period) {
            for ((o, wv), bv) in chunk.iter_mut().zip(&tw.data).zip(&tb.data) {
                *o = *o * wv + bv;
            }
        }
        self.record(Op::ScaleShift(x, w, b), out)
    }

    pub fn relu(&mut self, x: Var) -> TResult<Var> {
        let mut out = self.value(x).clone();
        for v in &mut out.data {
            *v = v.max(0.0);
        }
        self.record(Op::Relu(x), out)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> TResult<Var> {
        let out = self.value(x).reshaped(shape)?;
        self.record(Op::Reshape(x), out)
    }

    /// Same-padded, stride-1 3x3 cross-correlation.
    ///
    /// `x: [c_in, H, W]`, `kernel: [c_out, c_in, 3, 3]`, `bias: [c_out]`;
    /// output `[c_out, H, W]`.
    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Var) -> TResult<Var> {
        let (tx, tk, tb) = (self.value(x), self.value(kernel), self.value(bias));
        if tx.shape.len() != 3 {
            return Err(TensorError::InvalidShape { shape: tx.shape.clone(), reason: "conv2d input must be [c_in, H, W]" });
        }
        if tk.shape.len() != 4 || tk.shape[2] != 3 || tk.shape[3] != 3 {
            return Err(TensorError::InvalidShape { shape: tk.shape.clone(), reason: "conv2d kernel must be [c_out, c_in, 3, 3]" });
        }
        if tk.shape[1] != tx.shape[0] {
            return Err(TensorError::ShapeMismatch { op: "conv2d", lhs: tx.shape.clone(), rhs: tk.shape.clone() });
        }
        if tb.shape != [tk.shape[0]] {
            return Err(TensorError::ShapeMismatch { op: "conv2d bias", lhs: tk.shape.clone(), rhs: tb.shape.clone() });
        }
        let (c_in, h, w) = (tx.shape[0], tx.shape[1], tx.shape[2]);
        let c_out = tk.shape[0];
        let mut out = Tensor::zeros(&[c_out, h, w]);
        for o in 0..c_out {
            let plane = &mut out.data[o * h * w..(o + 1) * h * w];
            plane.iter_mut().for_each(|v| *v = tb.data[o]);
            for c in 0..c_in {
                let input = &tx.data[c * h * w..(c + 1) * h * w];
                let k = &tk.data[(o * c_in + c) * 9..(o * c_in + c + 1) * 9];
                for_each_tap(h, w, |out_idx, in_idx, tap| plane[out_idx] += k[tap] * input[in_idx]);
            }
        }
        self.record(Op::Conv2d { x, kernel, bias }, out)
    }

    /// Mean squared difference, shape `[1]`.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> TResult<Var> {
        let (tp, tt) = (self.value(pred), self.value(target));
        if tp.shape != tt.shape {
            return Err(TensorError::ShapeMismatch { op: "mse_loss", lhs: tp.shape.clone(), rhs: tt.shape.clone() });
        }
        let sse: f64 = tp.data.iter().zip(&tt.data).map(|(p, t)| (p - t) * (p - t)).sum();
        self.record(Op::Mse(pred, target), Tensor::scalar(sse / tp.data.len() as f64))
    }

    /// Gradients of a scalar `loss` with respect to every recorded value.
    pub fn backward(&self, loss: Var) -> TResult<Gradients> {
        let shape = &self.value(loss).shape;
        if shape.iter().product::<usize>() != 1 {
            return Err(TensorError::NonScalarLoss(shape.clone()));
        }
        self.backward_from(loss, Tensor::filled(shape, 1.0))
    }

    /// Reverse pass seeded with an arbitrary upstream gradient for `output`.
    pub fn backward_from(&self, output: Var, upstream: Tensor) -> TResult<Gradients> {
        if upstream.shape != self.value(output).shape {
            return Err(TensorError::ShapeMismatch {
                op: "backward",
                lhs: self.value(output).shape.clone(),
                rhs: upstream.shape,
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(upstream);
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(a), self.value(b));
                    let (m, k, n) = (ta.shape[0], ta.shape[1], tb.shape[1]);
                    let mut ga = Tensor::zeros(&ta.shape);
                    for i in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += g.data[i * n + j] * tb.data[p * n + j];
                            }
                            ga.data[i * k + p] = acc;
                        }
                    }
                    let mut gb = Tensor::zeros(&tb.shape);
                    for i in 0..m {
                        for p in 0..k {
                            let av = ta.data[i * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                gb.data[p * n + j] += av * g.data[i * n + j];
                            }
                        }
                    }
                    accumulate(&mut grads, a, ga);
                    accumulate(&mut grads, b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, a, g.clone());
                    accumulate(&mut grads, b, g.clone());
                }
                Op::AddBias(x, b) => {
                    let tb = self.value(b);
                    let mut gb = Tensor::zeros(&tb.shape);
                    for chunk in g.data.chunks(tb.data.len()) {
                        for (acc, gv) in gb.data.iter_mut().zip(chunk) {
                            *acc += gv;
                        }
                    }
                    accumulate(&mut grads, b, gb);
                    accumulate(&mut grads, x, g.clone());
                }
                Op::ScaleShift(x, w, b) => {
                    let (tx, tw) = (self.value(x), self.value(w));
                    let period = tw.data.len();
                    let mut gx = Tensor::zeros(&tx.shape);
                    let mut gw = Tensor::zeros(&tw.shape);
                    let mut gb = Tensor::zeros(&tw.shape);
                    for (start, chunk) in g.data.chunks(period).enumerate() {
                        let base = start * period;
                        for (j, gv) in chunk.iter().enumerate() {
                            gx.data[base + j] = gv * tw.data[j];
                            gw.data[j] += gv * tx.data[base + j];
                            gb.data[j] += gv;
                        }
                    }
                    accumulate(&mut grads, x, gx);
                    accumulate(&mut grads, w, gw);
                    accumulate(&mut grads, b, gb);
                }
                Op::Relu(x) => {
                    let tx = self.value(x);
                    let mut gx = g.clone();
                    for (gv, xv) in gx.data.iter_mut().zip(&tx.data) {
                        if *xv <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    accumulate(&mut grads, x, gx);
                }
                Op::Reshape(x) => {
                    let shape = self.value(x).shape.clone();
                    accumulate(&mut grads, x, Tensor { shape, data: g.data.clone() });
                }
                Op::Conv2d { x, kernel, bias } => {
                    let (tx, tk) = (self.value(x), self.value(kernel));
                    let (c_in, h, w) = (tx.shape[0], tx.shape[1], tx.shape[2]);
                    let c_out = tk.shape[0];
                    let mut gx = Tensor::zeros(&tx.shape);
                    let mut gk = Tensor::zeros(&tk.shape);
                    let mut gbias = Tensor::zeros(&[c_out]);
                    for o in 0..c_out {
                        let gplane = &g.data[o * h * w..(o + 1) * h * w];
                        gbias.data[o] = gplane.iter().sum();
                        for c in 0..c_in {
                            let input = &tx.data[c * h * w..(c + 1) * h * w];
                            let kidx = (o * c_in + c) * 9;
                            let k = &tk.data[kidx..kidx + 9];
                            let gin = &mut gx.data[c * h * w..(c + 1) * h * w];
                            let gker = &mut gk.data[kidx..kidx + 9];
                            for_each_tap(h, w, |out_idx, in_idx, tap| {
                                gin[in_idx] += k[tap] * gplane[out_idx];
                                gker[tap] += input[in_idx] * gplane[out_idx];
                            });
                        }
                    }
                    accumulate(&mut grads, x, gx);
                    accumulate(&mut grads, kernel, gk);
                    accumulate(&mut grads, bias, gbias);
                }
                Op::Mse(pred, target) => {
                    let (tp, tt) = (self.value(pred), self.value(target));
                    let scale = 2.0 * g.data[0] / tp.data.len() as f64;
                    let mut gp = Tensor::zeros(&tp.shape);
                    let mut gt = Tensor::zeros(&tt.shape);
                    for i in 0..tp.data.len() {
                        let d = scale * (tp.data[i] - tt.data[i]);
                        gp.data[i] = d;
                        gt.data[i] = -d;
                    }
                    accumulate(&mut grads, pred, gp);
                    accumulate(&mut grads, target, gt);
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

// Visits every (output, input, tap) triple of a zero-padded 3x3 window.
#[inline]
fn for_each_tap(h: usize, w: usize, mut f: impl FnMut(usize, usize, usize)) {
    for i in 0..h {
        for di in 0..3 {
            let Some(si) = (i + di).checked_sub(1).filter(|&s| s < h) else { continue };
            for j in 0..w {
                for dj in 0..3 {
                    let Some(sj) = (j + dj).checked_sub(1).filter(|&s| s < w) else { continue };
                    f(i * w + j, si * w + sj, di * 3 + dj);
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Result of a reverse pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`, `None` when `v` does not influence the output.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, zeros of `shape` when unreachable.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::gradcheck::{check, DEFAULT_STEP};
    use crate::rng::substream;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = substream(seed, "tensor-test", &[]);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn construction_rejects_bad_input() {
        assert!(Tensor::new(vec![2], vec![1.0]).is_err());
        assert!(Tensor::new(vec![1], vec![f64::NAN]).is_err());
        assert!(Tensor::new(vec![], vec![]).is_err());
        assert!(Tensor::new(vec![1, 1, 1, 1, 1], vec![0.0]).is_err());
    }

    #[test]
    fn matmul_examples() {
        let mut tape = Tape::new();
        let i = tape.leaf(Tensor::identity(2));
        let b = tape.leaf(Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let out = tape.matmul(i, b).unwrap();
        assert_eq!(tape.value(out), tape.value(b));

        let a = tape.leaf(Tensor::matrix(2, 2, vec![1., 2., 3., 4.]).unwrap());
        let c = tape.leaf(Tensor::matrix(2, 1, vec![5., 6.]).unwrap());
        let out = tape.matmul(a, c).unwrap();
        assert_eq!(tape.value(out).data(), &[17.0, 39.0]);

        let err = tape.matmul(c, c).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 1]"), "{msg}");
    }

    #[test]
    fn matmul_gradcheck() {
        for seed in 0..20 {
            let inputs = [random(&[4, 3], seed), random(&[3, 2], seed + 100)];
            let r = check(&inputs, DEFAULT_STEP, |t, v| {
                let y = t.matmul(v[0], v[1])?;
                let target = t.leaf(Tensor::zeros(&[4, 2]));
                t.mse_loss(y, target)
            })
            .unwrap();
            assert!(r.max_relative_error() < 1e-6, "seed {seed}: {:?}", r.relative_errors);
        }
    }

    #[test]
    fn conv2d_examples() {
        let mut delta = Tensor::zeros(&[1, 1, 3, 3]);
        delta.data_mut()[4] = 1.0;
        for shape in [[1, 1, 1], [1, 3, 3], [1, 5, 4], [1, 2, 7]] {
            let mut tape = Tape::new();
            let x = tape.leaf(random(&shape, 9));
            let k = tape.leaf(delta.clone());
            let b = tape.leaf(Tensor::zeros(&[1]));
            let y = tape.conv2d(x, k, b).unwrap();
            assert_eq!(tape.value(y), tape.value(x));
        }

        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::filled(&[1, 3, 3], 1.0));
        let k = tape.leaf(Tensor::filled(&[1, 1, 3, 3], 1.0));
        let b = tape.leaf(Tensor::zeros(&[1]));
        let y = tape.conv2d(x, k, b).unwrap();
        assert_eq!(tape.value(y).data(), &[4., 6., 4., 6., 9., 6., 4., 6., 4.]);

        let k2 = tape.leaf(Tensor::zeros(&[1, 2, 3, 3]));
        assert!(tape.conv2d(x, k2, b).is_err());
        let k5 = tape.leaf(Tensor::zeros(&[1, 1, 5, 5]));
        assert!(tape.conv2d(x, k5, b).is_err());
    }

    #[test]
    fn conv2d_gradcheck() {
        for seed in 0..20 {
            let inputs = [random(&[1, 5, 4], seed), random(&[2, 1, 3, 3], seed + 1), random(&[2], seed + 2)];
            let r = check(&inputs, DEFAULT_STEP, |t, v| {
                let y = t.conv2d(v[0], v[1], v[2])?;
                let target = t.leaf(Tensor::filled(&[2, 5, 4], 0.3));
                t.mse_loss(y, target)
            })
            .unwrap();
            assert!(r.max_relative_error() < 1e-5, "seed {seed}: {:?}", r.relative_errors);
        }
    }

    #[test]
    fn elementwise_examples() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap());
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
        // Subgradient at exactly zero is zero.
        let g = tape.backward_from(y, Tensor::filled(&[3], 1.0)).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 0.0, 1.0]);

        let m = tape.leaf(random(&[3, 4], 1));
        let zero = tape.leaf(Tensor::zeros(&[4]));
        let out = tape.add_bias(m, zero).unwrap();
        assert_eq!(tape.value(out), tape.value(m));

        let bad = tape.leaf(Tensor::zeros(&[3]));
        assert!(tape.add_bias(m, bad).is_err());
        let ones = tape.leaf(Tensor::filled(&[4], 1.0));
        assert!(tape.scale_shift(m, ones, bad).is_err());
        let out = tape.scale_shift(m, ones, zero).unwrap();
        assert_eq!(tape.value(out), tape.value(m));
    }

    #[test]
    fn composite_gradcheck() {
        for seed in 0..20 {
            let inputs = [
                random(&[4, 3], seed),
                random(&[3, 5], seed + 1),
                random(&[5], seed + 2),
                random(&[4, 5], seed + 3),
                random(&[4, 5], seed + 4),
            ];
            let r = check(&inputs, DEFAULT_STEP, |t, v| {
                let y = t.matmul(v[0], v[1])?;
                let y = t.add_bias(y, v[2])?;
                let y = t.relu(y)?;
                let y = t.scale_shift(y, v[3], v[4])?;
                let target = t.leaf(Tensor::filled(&[4, 5], 0.1));
                t.mse_loss(y, target)
            })
            .unwrap();
            assert!(r.max_relative_error() < 1e-6, "seed {seed}: {:?}", r.relative_errors);
        }
    }

    #[test]
    fn mse_examples() {
        let mut tape = Tape::new();
        let a = tape.leaf(random(&[2, 3], 4));
        let l = tape.mse_loss(a, a).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);
        let p = tape.leaf(Tensor::new(vec![2], vec![0.0, 0.0]).unwrap());
        let t = tape.leaf(Tensor::new(vec![2], vec![3.0, 4.0]).unwrap());
        let l = tape.mse_loss(p, t).unwrap();
        assert_eq!(tape.value(l).item(), 12.5);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(p).unwrap().data(), &[-3.0, -4.0]);
        let bad = tape.leaf(Tensor::zeros(&[3]));
        assert!(tape.mse_loss(p, bad).is_err());

        for seed in 0..20 {
            let inputs = [random(&[3, 4], seed), random(&[3, 4], seed + 50)];
            let r = check(&inputs, DEFAULT_STEP, |t, v| t.mse_loss(v[0], v[1])).unwrap();
            assert!(r.max_relative_error() < 1e-7, "seed {seed}: {:?}", r.relative_errors);
        }
    }

    #[test]
    fn backward_contract() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let w = tape.leaf(Tensor::matrix(2, 1, vec![3.0, -1.0]).unwrap());
        let y = tape.matmul(a, w).unwrap();
        assert!(matches!(tape.backward(a), Err(TensorError::NonScalarLoss(_))));
        // d(a.w)/dw = a^T, d/da = w^T.
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[1.0, 2.0]);
        assert_eq!(g.get(a).unwrap().data(), &[3.0, -1.0]);

        let g = tape.backward_from(y, Tensor::zeros(&[1, 1])).unwrap();
        assert!(g.get(w).unwrap().data().iter().all(|v| *v == 0.0));
        assert!(g.get(a).unwrap().data().iter().all(|v| *v == 0.0));

        let g2 = tape.backward(y).unwrap();
        assert_eq!(g2.get(w), tape.backward(y).unwrap().get(w));
    }

    #[test]
    fn reshape_passes_gradient_through() {
        let inputs = [random(&[2, 6], 3), random(&[2, 3, 3, 3], 4), random(&[2], 5)];
        let r = check(&inputs, DEFAULT_STEP, |t, v| {
            let x = t.reshape(v[0], &[3, 2, 2])?;
            let x = t.reshape(x, &[3, 2, 2])?;
            let k = t.reshape(v[1], &[2, 3, 3, 3])?;
            let y = t.conv2d(x, k, v[2])?;
            let target = t.leaf(Tensor::zeros(&[2, 2, 2]));
            t.mse_loss(y, target)
        })
        .unwrap();
        assert!(r.max_relative_error() < 1e-6, "{:?}", r.relative_errors);
    }
}
