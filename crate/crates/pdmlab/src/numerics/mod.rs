//! Dense tensor numerics: real FFT, activations, gradient tape, Adam, gradient checking.

pub mod activation;
pub mod fft;
pub mod gradcheck;
pub mod optim;
pub mod rng;
pub mod stats;
pub mod tape;
pub mod tensor;

pub use activation::{gelu, gelu_grad, log_softmax, logistic, normal_cdf, relu};
pub use fft::{irfft, rfft, ComplexSpectrum, TruncatedDft};
pub use gradcheck::grad_check;
pub use optim::{adam_step, AdamConfig, Parameter};
pub use rng::RngStream;
pub use stats::Standardizer;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use rand_distr::{Distribution, Normal, Uniform};

/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialization.
pub fn init_uniform(shape: &[usize], fan_in: usize, rng: &mut RngStream) -> Tensor {
    let b = 1.0 / (fan_in.max(1) as f64).sqrt();
    let d = Uniform::new_inclusive(-b, b);
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| d.sample(rng)).collect()).expect("shape product")
}

pub fn init_normal(shape: &[usize], std: f64, rng: &mut RngStream) -> Tensor {
    let d = Normal::new(0.0, std).expect("finite std");
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| d.sample(rng)).collect()).expect("shape product")
}

/// `x · w + b` for one row, with `w: [in, out]` and `b: [out]`.
pub fn dense_row(x: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (n_in, n_out) = w.dims2().expect("dense weight is 2-D");
    debug_assert_eq!(x.len(), n_in);
    let wd = w.data();
    let mut out = vec![0.0; n_out];
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &wd[i * n_out..(i + 1) * n_out];
        for (o, wv) in out.iter_mut().zip(row) {
            *o += xi * wv;
        }
    }
    // Bias last, matching the tape's `matmul` then `add_row` rounding.
    for (o, bv) in out.iter_mut().zip(b.data()) {
        *o += bv;
    }
    out
}
