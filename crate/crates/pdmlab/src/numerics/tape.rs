//! Reverse-mode gradient tape over the op set used by the pipeline.
//!
//! Every node stores its forward value; `backward` walks the nodes in reverse
//! insertion order. A tape can be differentiated once.

use std::sync::Arc;

use super::activation::{gelu, gelu_grad, log_softmax};
use super::fft::TruncatedDft;
use super::tensor::{matmul_into, Tensor};
use crate::error::{invalid, Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
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
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Gelu(Var),
    Tanh(Var),
    Exp(Var),
    Clamp(Var, f64, f64),
    Minimum(Var, Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    Mse(Var, Var),
    LogSoftmax(Var),
    Gather(Var, Vec<usize>),
    Reshape(Var),
    ConcatCols(Vec<Var>),
    PadRows(Var),
    SpectralConv { x: Var, wr: Var, wi: Var, plan: Arc<TruncatedDft> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    spent: bool,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if self.spent {
            return Err(Error::State("tape already differentiated; record a new one".into()));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records an input (parameter or constant).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        // Leaves on a spent tape are harmless; they can never be differentiated.
        self.nodes.push(Node { value, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip(self.value(b), |x, y| x * y)?;
        self.push(v, Op::Mul(a, b))
    }

    /// `[m,n] + [n]` broadcast over rows (bias add).
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        let b = self.value(bias);
        if b.len() != n {
            return invalid(format!("bias length {} vs {} columns", b.len(), n));
        }
        let mut out = self.value(a).clone();
        for i in 0..m {
            for (o, bv) in out.data_mut()[i * n..(i + 1) * n].iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        self.push(out, Op::AddRow(a, bias))
    }

    /// `x · w + b`: a dense layer on a batch.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let h = self.matmul(x, w)?;
        self.add_row(h, b)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(v, Op::Relu(a))
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(gelu);
        self.push(v, Op::Gelu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(v, Op::Clamp(a, lo, hi))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip(self.value(b), f64::min)?;
        self.push(v, Op::Minimum(a, b))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return invalid("mean of empty tensor");
        }
        let v = Tensor::scalar(t.sum() / t.len() as f64);
        self.push(v, Op::Mean(a))
    }

    /// `[m,n] -> [m]` row sums.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let (m, _) = self.value(a).dims2()?;
        let t = self.value(a);
        let v = Tensor::vector((0..m).map(|i| t.row(i).iter().sum()).collect());
        self.push(v, Op::SumRows(a))
    }

    /// Mean squared difference, a scalar.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.value(a).sub(self.value(b))?;
        if d.is_empty() {
            return invalid("mse of empty tensors");
        }
        let v = Tensor::scalar(d.data().iter().map(|x| x * x).sum::<f64>() / d.len() as f64);
        self.push(v, Op::Mse(a, b))
    }

    /// Row-wise log-softmax of a 2-D tensor.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        let t = self.value(a);
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            out.extend(log_softmax(t.row(i)));
        }
        let v = Tensor::matrix(m, n, out)?;
        self.push(v, Op::LogSoftmax(a))
    }

    /// Picks `a[i, idx[i]]` for every row: `[m,n] -> [m]`.
    pub fn gather(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        if idx.len() != m || idx.iter().any(|&j| j >= n) {
            return invalid("gather indices out of range");
        }
        let t = self.value(a);
        let v = Tensor::vector(idx.iter().enumerate().map(|(i, &j)| t.at2(i, j)).collect());
        self.push(v, Op::Gather(a, idx.to_vec()))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let v = self.value(a).reshape(shape)?;
        self.push(v, Op::Reshape(a))
    }

    /// Concatenates 2-D tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return invalid("concat of nothing");
        }
        let m = self.value(parts[0]).dims2()?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if r != m {
                return invalid(format!("concat row mismatch {} vs {}", r, m));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let v = Tensor::matrix(m, total, out)?;
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    /// Appends `extra` zero rows to a 2-D tensor.
    pub fn pad_rows(&mut self, a: Var, extra: usize) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        let mut out = self.value(a).data().to_vec();
        out.resize((m + extra) * n, 0.0);
        let v = Tensor::matrix(m + extra, n, out)?;
        self.push(v, Op::PadRows(a))
    }

    /// Fourier-mode channel mixing on `x: [T, Cin]` with weights `[Cout, Cin, M]`.
    pub fn spectral_conv(&mut self, x: Var, wr: Var, wi: Var, plan: Arc<TruncatedDft>) -> Result<Var> {
        let (t, cin) = self.value(x).dims2()?;
        let ws = self.value(wr).shape().to_vec();
        if ws.len() != 3 || ws[1] != cin || ws[2] != plan.modes() || self.value(wi).shape() != ws.as_slice() {
            return invalid(format!("spectral weights {:?} incompatible with {} channels, {} modes", ws, cin, plan.modes()));
        }
        if t != plan.len() {
            return invalid(format!("sequence length {} vs plan length {}", t, plan.len()));
        }
        let out = spectral_conv_forward(self.value(x).data(), self.value(wr).data(), self.value(wi).data(), t, cin, ws[0], &plan);
        let v = Tensor::matrix(t, ws[0], out)?;
        self.push(v, Op::SpectralConv { x, wr, wi, plan })
    }

    /// Reverse pass from a scalar output. The tape is spent afterwards.
    pub fn backward(&mut self, out: Var) -> Result<Gradients> {
        if self.spent {
            return Err(Error::State("backward called twice on the same tape".into()));
        }
        if out.0 >= self.nodes.len() {
            return Err(Error::State("backward on a value that was never recorded".into()));
        }
        if self.nodes[out.0].value.len() != 1 {
            return invalid("backward requires a scalar output");
        }
        self.spent = true;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(Tensor::filled(self.nodes[out.0].value.shape(), 1.0));
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = val(*a).dims2()?;
                let n = val(*b).dims2()?.1;
                // dA = G B^T, dB = A^T G
                let bt = val(*b).transpose()?;
                let mut ga = vec![0.0; m * k];
                matmul_into(g.data(), bt.data(), &mut ga, m, n, k);
                let at = val(*a).transpose()?;
                let mut gb = vec![0.0; k * n];
                matmul_into(at.data(), g.data(), &mut gb, k, m, n);
                accumulate(grads, *a, Tensor::matrix(m, k, ga)?);
                accumulate(grads, *b, Tensor::matrix(k, n, gb)?);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, g.zip(val(*b), |x, y| x * y)?);
                accumulate(grads, *b, g.zip(val(*a), |x, y| x * y)?);
            }
            Op::AddRow(a, bias) => {
                let (m, n) = g.dims2()?;
                let mut gb = vec![0.0; n];
                for r in 0..m {
                    for (acc, x) in gb.iter_mut().zip(g.row(r)) {
                        *acc += x;
                    }
                }
                accumulate(grads, *a, g.clone());
                accumulate(grads, *bias, Tensor::new(val(*bias).shape().to_vec(), gb)?);
            }
            Op::Scale(a, s) => accumulate(grads, *a, g.scale(*s)),
            Op::Relu(a) => accumulate(grads, *a, g.zip(val(*a), |gv, x| if x > 0.0 { gv } else { 0.0 })?),
            Op::Gelu(a) => accumulate(grads, *a, g.zip(val(*a), |gv, x| gv * gelu_grad(x))?),
            Op::Tanh(a) => accumulate(grads, *a, g.zip(&node.value, |gv, y| gv * (1.0 - y * y))?),
            Op::Exp(a) => accumulate(grads, *a, g.zip(&node.value, |gv, y| gv * y)?),
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                accumulate(grads, *a, g.zip(val(*a), |gv, x| if x > lo && x < hi { gv } else { 0.0 })?)
            }
            Op::Minimum(a, b) => {
                let pick_a = val(*a).zip(val(*b), |x, y| if x <= y { 1.0 } else { 0.0 })?;
                accumulate(grads, *a, g.zip(&pick_a, |gv, p| gv * p)?);
                accumulate(grads, *b, g.zip(&pick_a, |gv, p| gv * (1.0 - p))?);
            }
            Op::Sum(a) => {
                let t = val(*a);
                accumulate(grads, *a, Tensor::filled(t.shape(), g.item()));
            }
            Op::Mean(a) => {
                let t = val(*a);
                accumulate(grads, *a, Tensor::filled(t.shape(), g.item() / t.len() as f64));
            }
            Op::SumRows(a) => {
                let (m, n) = val(*a).dims2()?;
                let mut out = Vec::with_capacity(m * n);
                for r in 0..m {
                    out.extend(std::iter::repeat(g.data()[r]).take(n));
                }
                accumulate(grads, *a, Tensor::matrix(m, n, out)?);
            }
            Op::Mse(a, b) => {
                let d = val(*a).sub(val(*b))?;
                let c = 2.0 * g.item() / d.len() as f64;
                accumulate(grads, *a, d.scale(c));
                accumulate(grads, *b, d.scale(-c));
            }
            Op::LogSoftmax(a) => {
                let (m, n) = g.dims2()?;
                let mut out = Vec::with_capacity(m * n);
                for r in 0..m {
                    let gs: f64 = g.row(r).iter().sum();
                    for (gv, y) in g.row(r).iter().zip(node.value.row(r)) {
                        out.push(gv - y.exp() * gs);
                    }
                }
                accumulate(grads, *a, Tensor::matrix(m, n, out)?);
            }
            Op::Gather(a, idx) => {
                let (m, n) = val(*a).dims2()?;
                let mut out = vec![0.0; m * n];
                for (r, &j) in idx.iter().enumerate() {
                    out[r * n + j] = g.data()[r];
                }
                accumulate(grads, *a, Tensor::matrix(m, n, out)?);
            }
            Op::Reshape(a) => accumulate(grads, *a, g.reshape(val(*a).shape().to_vec())?),
            Op::ConcatCols(parts) => {
                let (m, total) = g.dims2()?;
                let mut offset = 0;
                for &p in parts {
                    let c = val(p).dims2()?.1;
                    let mut out = Vec::with_capacity(m * c);
                    for r in 0..m {
                        out.extend_from_slice(&g.data()[r * total + offset..r * total + offset + c]);
                    }
                    accumulate(grads, p, Tensor::matrix(m, c, out)?);
                    offset += c;
                }
            }
            Op::PadRows(a) => {
                let (m, n) = val(*a).dims2()?;
                accumulate(grads, *a, Tensor::matrix(m, n, g.data()[..m * n].to_vec())?);
            }
            Op::SpectralConv { x, wr, wi, plan } => {
                let (t, cin) = val(*x).dims2()?;
                let ws = val(*wr).shape().to_vec();
                let (gx, gwr, gwi) = spectral_conv_backward(
                    val(*x).data(),
                    val(*wr).data(),
                    val(*wi).data(),
                    g.data(),
                    t,
                    cin,
                    ws[0],
                    plan,
                );
                accumulate(grads, *x, Tensor::matrix(t, cin, gx)?);
                accumulate(grads, *wr, Tensor::new(ws.clone(), gwr)?);
                accumulate(grads, *wi, Tensor::new(ws, gwi)?);
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_in_place(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Forward spectral mixing on raw slices; shared by the tape and inference paths.
pub fn spectral_conv_forward(
    x: &[f64],
    wr: &[f64],
    wi: &[f64],
    t: usize,
    cin: usize,
    cout: usize,
    plan: &TruncatedDft,
) -> Vec<f64> {
    let m = plan.modes();
    let (mut vr, mut vi) = (vec![0.0; cin * m], vec![0.0; cin * m]);
    for p in 0..cin {
        plan.forward_strided(x, p, cin, &mut vr[p * m..(p + 1) * m], &mut vi[p * m..(p + 1) * m]);
    }
    let mut out = vec![0.0; t * cout];
    let (mut yr, mut yi) = (vec![0.0; m], vec![0.0; m]);
    for j in 0..cout {
        yr.iter_mut().for_each(|v| *v = 0.0);
        yi.iter_mut().for_each(|v| *v = 0.0);
        for p in 0..cin {
            let base = (j * cin + p) * m;
            for k in 0..m {
                let (a, b) = (wr[base + k], wi[base + k]);
                let (c, d) = (vr[p * m + k], vi[p * m + k]);
                yr[k] += a * c - b * d;
                yi[k] += a * d + b * c;
            }
        }
        plan.inverse_strided_add(&yr, &yi, &mut out, j, cout);
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn spectral_conv_backward(
    x: &[f64],
    wr: &[f64],
    wi: &[f64],
    gy: &[f64],
    t: usize,
    cin: usize,
    cout: usize,
    plan: &TruncatedDft,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let m = plan.modes();
    let (mut vr, mut vi) = (vec![0.0; cin * m], vec![0.0; cin * m]);
    for p in 0..cin {
        plan.forward_strided(x, p, cin, &mut vr[p * m..(p + 1) * m], &mut vi[p * m..(p + 1) * m]);
    }
    // Adjoint of the truncated inverse: gY_k = (c_k / T) * rfft(gy)_k.
    let (mut gyr, mut gyi) = (vec![0.0; cout * m], vec![0.0; cout * m]);
    for j in 0..cout {
        plan.forward_strided(gy, j, cout, &mut gyr[j * m..(j + 1) * m], &mut gyi[j * m..(j + 1) * m]);
        for k in 0..m {
            let s = plan.weight(k) / t as f64;
            gyr[j * m + k] *= s;
            gyi[j * m + k] *= s;
        }
    }
    let mut gwr = vec![0.0; cout * cin * m];
    let mut gwi = vec![0.0; cout * cin * m];
    let (mut gvr, mut gvi) = (vec![0.0; cin * m], vec![0.0; cin * m]);
    for j in 0..cout {
        for p in 0..cin {
            let base = (j * cin + p) * m;
            for k in 0..m {
                let (a, b) = (gyr[j * m + k], gyi[j * m + k]);
                let (c, d) = (vr[p * m + k], vi[p * m + k]);
                // gW = gY * conj(V), gV += conj(W) * gY
                gwr[base + k] = a * c + b * d;
                gwi[base + k] = b * c - a * d;
                let (rr, ri) = (wr[base + k], wi[base + k]);
                gvr[p * m + k] += rr * a + ri * b;
                gvi[p * m + k] += rr * b - ri * a;
            }
        }
    }
    // Adjoint of the truncated forward DFT: gx[n] = sum_k Re(gV_k e^{i theta k n}).
    let mut gx = vec![0.0; t * cin];
    for p in 0..cin {
        let mut re = gvr[p * m..(p + 1) * m].to_vec();
        let mut im = gvi[p * m..(p + 1) * m].to_vec();
        for k in 0..m {
            let s = t as f64 / plan.weight(k);
            re[k] *= s;
            im[k] *= s;
        }
        plan.inverse_strided_add(&re, &im, &mut gx, p, cin);
    }
    (gx, gwr, gwi)
}
