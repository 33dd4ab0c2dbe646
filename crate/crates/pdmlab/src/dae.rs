//! Denoising autoencoder over per-step sensor vectors.
//!
//! Encoder `input → hidden… → latent` with ReLU hidden layers and a linear
//! latent; the decoder mirrors it with a linear output. Inputs are expected
//! to be z-scored already.

use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{invalid, Error, Result};
use crate::kv_config;
use crate::numerics::{adam_step, dense_row, init_uniform, AdamConfig, Parameter, RngStream, Tape, Tensor, Var};
use crate::persist;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DaeConfig {
    pub input_dim: usize,
    pub latent_dim: usize,
    /// Encoder hidden widths; the decoder uses them reversed.
    pub hidden: Vec<usize>,
    pub noise_sigma: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Rows in the fixed held-noise subset used for the per-epoch MSE history.
    pub eval_rows: usize,
    pub seed: u64,
}

impl Default for DaeConfig {
    fn default() -> Self {
        Self {
            input_dim: 5,
            latent_dim: 3,
            hidden: vec![16],
            noise_sigma: 0.3,
            lr: 1e-3,
            epochs: 50,
            batch_size: 16384,
            eval_rows: 5000,
            seed: 0,
        }
    }
}

kv_config!(DaeConfig, "dae", {
    "input_dim" => input_dim,
    "latent_dim" => latent_dim,
    "hidden" => hidden,
    "noise_sigma" => noise_sigma,
    "lr" => lr,
    "epochs" => epochs,
    "batch_size" => batch_size,
    "eval_rows" => eval_rows,
    "seed" => seed,
});

impl DaeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("dae: {}", m)));
        if self.input_dim == 0 || self.latent_dim == 0 {
            return bad("input and latent dims must be >= 1");
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return bad("hidden widths must be >= 1");
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be finite and >= 0");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be > 0");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be >= 1");
        }
        Ok(())
    }

    fn layer_dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim];
        d.extend(&self.hidden);
        d.push(self.latent_dim);
        d
    }
}

/// Encoder layers followed by the mirrored decoder layers; weights are `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DaeParams {
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
}

const PARAMS_KIND: &str = "dae";

impl DaeParams {
    /// Uniform `±1/sqrt(fan_in)` weights, zero biases.
    pub fn init(cfg: &DaeConfig, rng: &mut RngStream) -> Result<Self> {
        cfg.validate()?;
        let enc = cfg.layer_dims();
        let dims: Vec<usize> = enc.iter().chain(enc.iter().rev().skip(1)).copied().collect();
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in dims.windows(2) {
            weights.push(init_uniform(&[w[0], w[1]], w[0], rng));
            biases.push(Tensor::zeros(&[w[1]]));
        }
        Ok(Self { weights, biases })
    }

    /// Validates the mirror structure.
    pub fn from_layers(weights: Vec<Tensor>, biases: Vec<Tensor>) -> Result<Self> {
        let n = weights.len();
        if n == 0 || n % 2 != 0 || biases.len() != n {
            return Err(Error::Format(format!("need an even number of layers, got {} weights / {} biases", n, biases.len())));
        }
        for (i, (w, b)) in weights.iter().zip(&biases).enumerate() {
            let (_, o) = w.dims2()?;
            if b.shape() != [o] {
                return Err(Error::Format(format!("layer {} bias shape {:?} vs {} outputs", i, b.shape(), o)));
            }
            if i > 0 && weights[i - 1].shape()[1] != w.shape()[0] {
                return Err(Error::Format(format!("layer {} input does not match previous output", i)));
            }
            let m = &weights[n - 1 - i];
            if m.shape()[0] != w.shape()[1] || m.shape()[1] != w.shape()[0] {
                return Err(Error::Format(format!("decoder layer {} is not the mirror of encoder layer {}", n - 1 - i, i)));
            }
        }
        Ok(Self { weights, biases })
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].shape()[0]
    }

    pub fn latent_dim(&self) -> usize {
        self.weights[self.encoder_layers() - 1].shape()[1]
    }

    pub fn encoder_layers(&self) -> usize {
        self.weights.len() / 2
    }

    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }

    pub fn biases(&self) -> &[Tensor] {
        &self.biases
    }

    /// Weights and biases interleaved: `w0, b0, w1, b1, …`.
    pub fn tensors(&self) -> Vec<Tensor> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| [w.clone(), b.clone()]).collect()
    }

    pub fn from_tensors(ts: Vec<Tensor>) -> Result<Self> {
        if ts.len() % 2 != 0 {
            return Err(Error::Format("odd tensor count for autoencoder".into()));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (i, t) in ts.into_iter().enumerate() {
            if i % 2 == 0 {
                weights.push(t);
            } else {
                biases.push(t);
            }
        }
        Self::from_layers(weights, biases)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        persist::write_params(path, PARAMS_KIND, &self.tensors())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_tensors(persist::read_params(path, PARAMS_KIND)?)
    }

    fn run_layers(&self, x: &[f64], range: std::ops::Range<usize>) -> Vec<f64> {
        let last = range.end - 1;
        let enc_last = self.encoder_layers() - 1;
        let mut h = x.to_vec();
        for i in range {
            h = dense_row(&h, &self.weights[i], &self.biases[i]);
            if i != last && i != enc_last {
                h.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        h
    }

    /// Records the full reconstruction of a batch `[B, input]`; `vars` are the
    /// interleaved parameter leaves.
    pub fn record(&self, tape: &mut Tape, x: Var, vars: &[Var]) -> Result<Var> {
        let n = self.weights.len();
        if vars.len() != 2 * n {
            return invalid(format!("expected {} parameter vars, got {}", 2 * n, vars.len()));
        }
        let mut h = x;
        for i in 0..n {
            h = tape.affine(h, vars[2 * i], vars[2 * i + 1])?;
            if i != n - 1 && i != self.encoder_layers() - 1 {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }
}

/// `x + ε`, `ε ~ N(0, σ² I)`.
pub fn corrupt(x: &[f64], sigma: f64, rng: &mut RngStream) -> Vec<f64> {
    x.iter().map(|&v| v + sigma * rng.normal()).collect()
}

pub fn encode(x: &[f64], params: &DaeParams) -> Result<Vec<f64>> {
    if x.len() != params.input_dim() {
        return invalid(format!("encode: input length {} vs {}", x.len(), params.input_dim()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return invalid("encode: non-finite input");
    }
    Ok(params.run_layers(x, 0..params.encoder_layers()))
}

pub fn decode(z: &[f64], params: &DaeParams) -> Result<Vec<f64>> {
    if z.len() != params.latent_dim() {
        return invalid(format!("decode: latent length {} vs {}", z.len(), params.latent_dim()));
    }
    Ok(params.run_layers(z, params.encoder_layers()..params.weights.len()))
}

/// Element-mean squared reconstruction error of `clean` from `noisy` inputs.
pub fn reconstruction_mse(params: &DaeParams, clean: &[Vec<f64>], noisy: &[Vec<f64>]) -> Result<f64> {
    if clean.is_empty() || clean.len() != noisy.len() {
        return invalid("reconstruction_mse needs equal, non-empty row sets");
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (c, n) in clean.iter().zip(noisy) {
        let r = decode(&encode(n, params)?, params)?;
        total += r.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        count += c.len();
    }
    Ok(total / count as f64)
}

fn batch_tensor(rows: &[&[f64]], dim: usize) -> Result<Tensor> {
    Tensor::matrix(rows.len(), dim, rows.iter().flat_map(|r| r.iter().copied()).collect())
}

/// Trains on (already normalized) rows. Returns the parameters and the
/// per-epoch denoising MSE on a fixed evaluation subset with fixed noise.
pub fn train_dae(data: &[Vec<f64>], cfg: &DaeConfig) -> Result<(DaeParams, Vec<f64>)> {
    cfg.validate()?;
    if data.is_empty() {
        return invalid("train_dae: empty dataset");
    }
    if let Some(r) = data.iter().find(|r| r.len() != cfg.input_dim) {
        return invalid(format!("train_dae: row length {} vs input_dim {}", r.len(), cfg.input_dim));
    }
    if data.iter().flatten().any(|v| !v.is_finite()) {
        return invalid("train_dae: non-finite input");
    }
    let root = RngStream::new(cfg.seed, "dae");
    let init = DaeParams::init(cfg, &mut root.derive("init"))?;
    let mut params: Vec<Parameter> = init.tensors().into_iter().map(Parameter::new).collect();
    let mut shuffle_rng = root.derive("shuffle");
    let mut noise_rng = root.derive("noise");

    let mut eval_idx: Vec<usize> = (0..data.len()).collect();
    eval_idx.shuffle(&mut root.derive("eval"));
    eval_idx.truncate(cfg.eval_rows.max(1));
    let mut eval_noise_rng = root.derive("eval-noise");
    let eval_clean: Vec<Vec<f64>> = eval_idx.iter().map(|&i| data[i].clone()).collect();
    let eval_noisy: Vec<Vec<f64>> = eval_clean.iter().map(|r| corrupt(r, cfg.noise_sigma, &mut eval_noise_rng)).collect();

    let adam = AdamConfig::with_lr(cfg.lr);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut current = init;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(cfg.batch_size) {
            let clean: Vec<&[f64]> = chunk.iter().map(|&i| data[i].as_slice()).collect();
            let noisy_rows: Vec<Vec<f64>> = clean.iter().map(|r| corrupt(r, cfg.noise_sigma, &mut noise_rng)).collect();
            let noisy: Vec<&[f64]> = noisy_rows.iter().map(Vec::as_slice).collect();
            let mut tape = Tape::new();
            let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.value.clone())).collect();
            let xn = tape.leaf(batch_tensor(&noisy, cfg.input_dim)?);
            let xc = tape.leaf(batch_tensor(&clean, cfg.input_dim)?);
            let recon = current.record(&mut tape, xn, &vars)?;
            let loss = tape.mse(recon, xc)?;
            let mut grads = tape.backward(loss)?;
            for (p, v) in params.iter_mut().zip(&vars) {
                let g = grads.take(*v).unwrap_or_else(|| Tensor::zeros(p.value.shape()));
                p.set_grad(g)?;
            }
            let mut refs: Vec<&mut Parameter> = params.iter_mut().collect();
            adam_step(&mut refs, &adam)?;
            current = DaeParams::from_tensors(params.iter().map(|p| p.value.clone()).collect())?;
        }
        history.push(reconstruction_mse(&current, &eval_clean, &eval_noisy)?);
    }
    Ok((current, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;

    fn small() -> DaeConfig {
        DaeConfig { epochs: 3, batch_size: 16, eval_rows: 50, ..DaeConfig::default() }
    }

    #[test]
    fn shapes_and_determinism() {
        let p = DaeParams::init(&small(), &mut RngStream::new(1, "p")).unwrap();
        let x = [0.1, -0.2, 0.3, 1.0, -1.0];
        let z = encode(&x, &p).unwrap();
        assert_eq!(z.len(), 3);
        assert_eq!(encode(&x, &p).unwrap(), z);
        assert_eq!(decode(&z, &p).unwrap().len(), 5);
        assert!(encode(&x[..4], &p).is_err());
        assert!(decode(&x, &p).is_err());
    }

    #[test]
    fn zero_weights_zero_latent() {
        let p = DaeParams::init(&small(), &mut RngStream::new(1, "p")).unwrap();
        let zeros: Vec<Tensor> = p.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        let z = DaeParams::from_tensors(zeros).unwrap();
        assert_eq!(encode(&[0.0; 5], &z).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn corrupt_zero_sigma_is_identity() {
        let x = [1.0, 2.0, 3.0];
        assert_eq!(corrupt(&x, 0.0, &mut RngStream::new(0, "c")), x.to_vec());
    }

    #[test]
    fn tape_matches_fast_path() {
        let p = DaeParams::init(&small(), &mut RngStream::new(2, "p")).unwrap();
        let x = vec![0.5, -1.0, 0.25, 2.0, 0.0];
        let mut tape = Tape::new();
        let vars: Vec<Var> = p.tensors().into_iter().map(|t| tape.leaf(t)).collect();
        let xv = tape.leaf(Tensor::matrix(1, 5, x.clone()).unwrap());
        let r = p.record(&mut tape, xv, &vars).unwrap();
        let fast = decode(&encode(&x, &p).unwrap(), &p).unwrap();
        for (a, b) in tape.value(r).data().iter().zip(&fast) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let p = DaeParams::init(&small(), &mut RngStream::new(3, "p")).unwrap();
        let mut rng = RngStream::new(4, "x");
        let clean: Vec<f64> = (0..20).map(|_| rng.normal()).collect();
        let noisy = corrupt(&clean, 0.3, &mut rng);
        let worst = grad_check(
            |tape, vars| {
                let xn = tape.leaf(Tensor::matrix(4, 5, noisy.clone())?);
                let xc = tape.leaf(Tensor::matrix(4, 5, clean.clone())?);
                let r = p.record(tape, xn, vars)?;
                tape.mse(r, xc)
            },
            &p.tensors(),
            1e-6,
            40,
        )
        .unwrap();
        assert!(worst < 1e-4, "relative error {}", worst);
    }

    #[test]
    fn learns_constant_data() {
        let data = vec![vec![0.5, -0.5, 1.0, 0.0, 0.25]; 256];
        let cfg = DaeConfig { noise_sigma: 0.0, epochs: 150, batch_size: 32, lr: 1e-2, eval_rows: 32, ..DaeConfig::default() };
        let (_, hist) = train_dae(&data, &cfg).unwrap();
        assert_eq!(hist.len(), 150);
        assert!(*hist.last().unwrap() < 1e-3, "{:?}", hist.last());
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(matches!(train_dae(&[], &small()), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn params_roundtrip_file() {
        let p = DaeParams::init(&small(), &mut RngStream::new(5, "p")).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dae.bin");
        p.save(&path).unwrap();
        assert_eq!(DaeParams::load(&path).unwrap(), p);
    }

    #[test]
    fn non_mirror_rejected() {
        let p = DaeParams::init(&small(), &mut RngStream::new(5, "p")).unwrap();
        let mut ts = p.tensors();
        ts[6] = Tensor::zeros(&[16, 4]);
        ts[7] = Tensor::zeros(&[4]);
        assert!(DaeParams::from_tensors(ts).is_err());
    }
}
