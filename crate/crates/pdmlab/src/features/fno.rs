use std::path::Path;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::kv_config;
use crate::numerics::tape::spectral_conv_forward;
use crate::numerics::{dense_row, gelu, init_normal, init_uniform, RngStream, Tape, Tensor, TruncatedDft, Var};
use crate::persist;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FnoConfig {
    /// Window length L.
    pub window: usize,
    /// Channel width d_w.
    pub width: usize,
    /// Requested Fourier modes; clamped to `L'/2 + 1`.
    pub k_max: usize,
    pub layers: usize,
    /// Zeros appended to the lifted sequence.
    pub padding: usize,
    /// Branch output dim D_fno.
    pub out_dim: usize,
    /// Fused projection dim applied after concatenation; 0 disables it.
    pub fused_dim: usize,
}

impl Default for FnoConfig {
    fn default() -> Self {
        Self { window: 8, width: 36, k_max: 64, layers: 3, padding: 2, out_dim: 32, fused_dim: 0 }
    }
}

kv_config!(FnoConfig, "fno", {
    "window" => window,
    "width" => width,
    "k_max" => k_max,
    "layers" => layers,
    "padding" => padding,
    "out_dim" => out_dim,
    "fused_dim" => fused_dim,
});

impl FnoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.width == 0 || self.k_max == 0 || self.layers == 0 || self.out_dim == 0 {
            return Err(Error::Config("fno: window, width, k_max, layers and out_dim must be >= 1".into()));
        }
        Ok(())
    }

    /// L' = L + padding.
    pub fn padded_len(&self) -> usize {
        self.window + self.padding
    }

    pub fn effective_modes(&self) -> usize {
        self.k_max.min(self.padded_len() / 2 + 1)
    }
}

/// FNO branch weights. Local and lifting weights are `[in, out]`; spectral
/// weights are `[out, in, modes]` real and imaginary parts.
#[derive(Debug, Clone)]
pub struct FnoParams {
    pub lift_w: Tensor,
    pub lift_b: Tensor,
    pub spec_re: Vec<Tensor>,
    pub spec_im: Vec<Tensor>,
    pub local: Vec<Tensor>,
    pub proj_w: Tensor,
    pub proj_b: Tensor,
    /// Optional fused projection over `[f_spectral ‖ f_fno]`.
    pub fuse: Option<(Tensor, Tensor)>,
    plan: Arc<TruncatedDft>,
    window: usize,
}

impl PartialEq for FnoParams {
    fn eq(&self, other: &Self) -> bool {
        self.tensors() == other.tensors() && self.window == other.window && self.plan.len() == other.plan.len()
    }
}

const PARAMS_KIND: &str = "fno";

impl FnoParams {
    /// Random initialization for `in_dim` latent channels; `spectral_len` is the
    /// spectral-branch length, needed only when the fused projection is on.
    pub fn init(cfg: &FnoConfig, in_dim: usize, spectral_len: usize, rng: &mut RngStream) -> Result<Self> {
        cfg.validate()?;
        let (d, m, lp) = (cfg.width, cfg.effective_modes(), cfg.padded_len());
        let lift_w = init_uniform(&[in_dim, d], in_dim, rng);
        let lift_b = init_uniform(&[d], in_dim, rng);
        let mut spec_re = Vec::new();
        let mut spec_im = Vec::new();
        let mut local = Vec::new();
        for _ in 0..cfg.layers {
            spec_re.push(init_normal(&[d, d, m], 1.0 / d as f64, rng));
            spec_im.push(init_normal(&[d, d, m], 1.0 / d as f64, rng));
            local.push(init_uniform(&[d, d], d, rng));
        }
        let proj_w = init_uniform(&[d * lp, cfg.out_dim], d * lp, rng);
        let proj_b = init_uniform(&[cfg.out_dim], d * lp, rng);
        let fuse = (cfg.fused_dim > 0).then(|| {
            let n = spectral_len + cfg.out_dim;
            (init_uniform(&[n, cfg.fused_dim], n, rng), init_uniform(&[cfg.fused_dim], n, rng))
        });
        Self::assemble(cfg.window, lift_w, lift_b, spec_re, spec_im, local, proj_w, proj_b, fuse)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn assemble(
        window: usize,
        lift_w: Tensor,
        lift_b: Tensor,
        spec_re: Vec<Tensor>,
        spec_im: Vec<Tensor>,
        local: Vec<Tensor>,
        proj_w: Tensor,
        proj_b: Tensor,
        fuse: Option<(Tensor, Tensor)>,
    ) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("fno params: {}", m)));
        let (_, d) = lift_w.dims2()?;
        if lift_b.shape() != [d] {
            return bad("lift bias shape".into());
        }
        if spec_re.is_empty() || spec_re.len() != spec_im.len() || spec_re.len() != local.len() {
            return bad("layer tensor counts differ".into());
        }
        let m = spec_re[0].shape().get(2).copied().unwrap_or(0);
        for l in 0..spec_re.len() {
            if spec_re[l].shape() != [d, d, m] || spec_im[l].shape() != [d, d, m] || local[l].shape() != [d, d] {
                return bad(format!("layer {} shapes", l));
            }
        }
        let (flat, out) = proj_w.dims2()?;
        if flat % d != 0 || flat / d < window || proj_b.shape() != [out] {
            return bad("projection shapes".into());
        }
        let lp = flat / d;
        if let Some((w, b)) = &fuse {
            let (_, f) = w.dims2()?;
            if b.shape() != [f] {
                return bad("fused projection shapes".into());
            }
        }
        let plan = Arc::new(TruncatedDft::new(lp, m)?);
        Ok(Self { lift_w, lift_b, spec_re, spec_im, local, proj_w, proj_b, fuse, plan, window })
    }

    pub fn in_dim(&self) -> usize {
        self.lift_w.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.lift_w.shape()[1]
    }

    pub fn modes(&self) -> usize {
        self.plan.modes()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn padded_len(&self) -> usize {
        self.plan.len()
    }

    pub fn out_dim(&self) -> usize {
        self.proj_w.shape()[1]
    }

    pub fn plan(&self) -> Arc<TruncatedDft> {
        Arc::clone(&self.plan)
    }

    /// Flat tensor list: lift, then (re, im, local) per layer, projection, optional fuse.
    pub fn tensors(&self) -> Vec<Tensor> {
        let mut v = vec![self.lift_w.clone(), self.lift_b.clone()];
        for l in 0..self.local.len() {
            v.extend([self.spec_re[l].clone(), self.spec_im[l].clone(), self.local[l].clone()]);
        }
        v.extend([self.proj_w.clone(), self.proj_b.clone()]);
        if let Some((w, b)) = &self.fuse {
            v.extend([w.clone(), b.clone()]);
        }
        v
    }

    pub fn from_tensors(window: usize, ts: Vec<Tensor>) -> Result<Self> {
        let n = ts.len();
        if n < 7 {
            return Err(Error::Format(format!("unexpected FNO tensor count {}", n)));
        }
        let has_fuse = (n - 4) % 3 == 2;
        let core = n - 4 - if has_fuse { 2 } else { 0 };
        if core % 3 != 0 {
            return Err(Error::Format(format!("unexpected FNO tensor count {}", n)));
        }
        let layers = core / 3;
        let mut it = ts.into_iter();
        let mut next = || it.next().expect("counted");
        let lift_w = next();
        let lift_b = next();
        let (mut re, mut im, mut local) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..layers {
            re.push(next());
            im.push(next());
            local.push(next());
        }
        let proj_w = next();
        let proj_b = next();
        let fuse = has_fuse.then(|| (next(), next()));
        Self::assemble(window, lift_w, lift_b, re, im, local, proj_w, proj_b, fuse)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut ts = vec![Tensor::scalar(self.window as f64)];
        ts.extend(self.tensors());
        persist::write_params(path, PARAMS_KIND, &ts)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut ts = persist::read_params(path, PARAMS_KIND)?;
        if ts.is_empty() {
            return Err(Error::Format("empty FNO parameter file".into()));
        }
        let window = ts.remove(0).item() as usize;
        Self::from_tensors(window, ts)
    }

    /// Records the branch on a `[L, in_dim]` latent sequence; returns `[1, D_fno]`.
    /// `vars` follow [`FnoParams::tensors`] order (the fuse pair is not used here).
    pub fn record_branch(&self, tape: &mut Tape, z: Var, vars: &[Var]) -> Result<Var> {
        let layers = self.local.len();
        if vars.len() < 4 + 3 * layers {
            return invalid("too few FNO parameter vars");
        }
        let (l, _) = tape.value(z).dims2()?;
        if l != self.window {
            return invalid(format!("window length {} vs configured {}", l, self.window));
        }
        let mut v = tape.affine(z, vars[0], vars[1])?;
        v = tape.pad_rows(v, self.padded_len() - l)?;
        for i in 0..layers {
            let base = 2 + 3 * i;
            v = record_fno_layer(tape, v, vars[base], vars[base + 1], vars[base + 2], self.plan())?;
        }
        let flat = tape.reshape(v, vec![1, self.padded_len() * self.width()])?;
        let p = tape.affine(flat, vars[2 + 3 * layers], vars[3 + 3 * layers])?;
        tape.relu(p)
    }

    /// Records fusion of a `[1, S·N]` spectral leaf with a `[1, D_fno]` branch output.
    pub fn record_fuse(&self, tape: &mut Tape, spectral: Var, fno: Var, vars: &[Var]) -> Result<Var> {
        let cat = tape.concat_cols(&[spectral, fno])?;
        if self.fuse.is_none() {
            return Ok(cat);
        }
        let n = vars.len();
        let h = tape.affine(cat, vars[n - 2], vars[n - 1])?;
        tape.relu(h)
    }
}

/// Per-step affine lift of a time-major `[L, in]` sequence to `[L, d_w]`.
pub fn lift(z_seq: &[f64], w: &Tensor, b: &Tensor) -> Result<Vec<f64>> {
    let (din, _) = w.dims2()?;
    if din == 0 || z_seq.len() % din != 0 {
        return invalid(format!("lift: sequence of {} values is not a multiple of {}", z_seq.len(), din));
    }
    Ok(z_seq.chunks(din).flat_map(|row| dense_row(row, w, b)).collect())
}

/// Fourier-mode channel mixing of a time-major `[L', d]` block; modes at or
/// above `plan.modes()` are zeroed.
pub fn spectral_conv(v: &[f64], wr: &Tensor, wi: &Tensor, plan: &TruncatedDft) -> Result<Vec<f64>> {
    let s = wr.shape();
    if s.len() != 3 || wi.shape() != s || s[2] != plan.modes() {
        return invalid(format!("spectral weights {:?} vs {} modes", s, plan.modes()));
    }
    if v.len() != plan.len() * s[1] {
        return invalid(format!("block of {} values vs {}×{}", v.len(), plan.len(), s[1]));
    }
    Ok(spectral_conv_forward(v, wr.data(), wi.data(), plan.len(), s[1], s[0], plan))
}

/// `GELU(spectral_conv(V) + V·W)`.
pub fn fno_layer(v: &[f64], wr: &Tensor, wi: &Tensor, local: &Tensor, plan: &TruncatedDft) -> Result<Vec<f64>> {
    let (cin, cout) = local.dims2()?;
    if wr.shape().first() != Some(&cout) || wr.shape().get(1) != Some(&cin) {
        return invalid("local and spectral weights disagree on channels");
    }
    let mut y = spectral_conv(v, wr, wi, plan)?;
    let zero = Tensor::zeros(&[cout]);
    for (t, row) in v.chunks(cin).enumerate() {
        let l = dense_row(row, local, &zero);
        for (o, a) in y[t * cout..(t + 1) * cout].iter_mut().zip(l) {
            *o = gelu(*o + a);
        }
    }
    Ok(y)
}

pub fn record_fno_layer(tape: &mut Tape, v: Var, wr: Var, wi: Var, local: Var, plan: Arc<TruncatedDft>) -> Result<Var> {
    let s = tape.spectral_conv(v, wr, wi, plan)?;
    let l = tape.matmul(v, local)?;
    let sum = tape.add(s, l)?;
    tape.gelu(sum)
}

/// lift → tail-pad → FNO layers → flatten → affine → ReLU.
pub fn fno_branch(z_seq: &[f64], params: &FnoParams) -> Result<Vec<f64>> {
    if z_seq.len() != params.window * params.in_dim() {
        return invalid(format!("fno_branch: expected {}×{} sequence", params.window, params.in_dim()));
    }
    let mut v = lift(z_seq, &params.lift_w, &params.lift_b)?;
    v.resize(params.padded_len() * params.width(), 0.0);
    for l in 0..params.local.len() {
        v = fno_layer(&v, &params.spec_re[l], &params.spec_im[l], &params.local[l], &params.plan)?;
    }
    let mut out = dense_row(&v, &params.proj_w, &params.proj_b);
    out.iter_mut().for_each(|x| *x = x.max(0.0));
    Ok(out)
}

/// `[f_spectral ‖ f_fno]`, optionally followed by the fused affine + ReLU.
pub fn fuse(f_spectral: &[f64], f_fno: &[f64], projection: Option<&(Tensor, Tensor)>) -> Result<Vec<f64>> {
    let mut cat = Vec::with_capacity(f_spectral.len() + f_fno.len());
    cat.extend_from_slice(f_spectral);
    cat.extend_from_slice(f_fno);
    match projection {
        None => Ok(cat),
        Some((w, b)) => {
            if w.dims2()?.0 != cat.len() {
                return invalid(format!("fused projection expects {} inputs, got {}", w.shape()[0], cat.len()));
            }
            let mut h = dense_row(&cat, w, b);
            h.iter_mut().for_each(|x| *x = x.max(0.0));
            Ok(h)
        }
    }
}
