//! Real FFT pair: iterative radix-2 for power-of-two lengths, direct DFT otherwise.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{invalid, Result};

/// One-sided spectrum of a real sequence of length `len`: `len/2 + 1` coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrum {
    len: usize,
    coeffs: Vec<Complex64>,
}

impl ComplexSpectrum {
    pub fn new(len: usize, coeffs: Vec<Complex64>) -> Result<Self> {
        if len == 0 || coeffs.len() != len / 2 + 1 {
            return invalid(format!(
                "spectrum of length {} needs {} coefficients, got {}",
                len,
                len / 2 + 1,
                coeffs.len()
            ));
        }
        Ok(Self { len, coeffs })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.coeffs.iter().map(|c| c.norm()).collect()
    }
}

/// Forward real DFT, coefficient k = sum_n x[n] exp(-2 pi i k n / L) for k = 0..=L/2.
pub fn rfft(x: &[f64]) -> Result<ComplexSpectrum> {
    let n = x.len();
    if n == 0 {
        return invalid("rfft of empty input");
    }
    let half = n / 2 + 1;
    let coeffs = if n.is_power_of_two() {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft_in_place(&mut buf, false);
        buf.truncate(half);
        buf
    } else {
        (0..half)
            .map(|k| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (j, &v) in x.iter().enumerate() {
                    let (s, c) = twiddle(k * j, n).sin_cos();
                    acc += Complex64::new(v * c, -v * s);
                }
                acc
            })
            .collect()
    };
    let mut spec = ComplexSpectrum { len: n, coeffs };
    // DC and Nyquist are real by symmetry; drop rounding residue.
    spec.coeffs[0].im = 0.0;
    if n % 2 == 0 {
        spec.coeffs[n / 2].im = 0.0;
    }
    Ok(spec)
}

/// Inverse of [`rfft`]. Imaginary parts of DC (and Nyquist for even L) are ignored.
pub fn irfft(spec: &ComplexSpectrum, len: usize) -> Result<Vec<f64>> {
    if len == 0 || spec.len != len || spec.coeffs.len() != len / 2 + 1 {
        return invalid(format!(
            "irfft length {} inconsistent with spectrum of length {} ({} coefficients)",
            len,
            spec.len,
            spec.coeffs.len()
        ));
    }
    let n = len;
    let mut full = vec![Complex64::new(0.0, 0.0); n];
    for (k, c) in spec.coeffs.iter().enumerate() {
        full[k] = *c;
    }
    full[0].im = 0.0;
    if n % 2 == 0 {
        full[n / 2].im = 0.0;
    }
    for k in 1..n.div_ceil(2) {
        full[n - k] = spec.coeffs[k].conj();
    }
    let inv_n = 1.0 / n as f64;
    if n.is_power_of_two() {
        fft_in_place(&mut full, true);
        Ok(full.iter().map(|c| c.re * inv_n).collect())
    } else {
        Ok((0..n)
            .map(|j| {
                let mut acc = 0.0;
                for (k, c) in full.iter().enumerate() {
                    let (s, co) = twiddle(k * j, n).sin_cos();
                    acc += c.re * co - c.im * s;
                }
                acc * inv_n
            })
            .collect())
    }
}

/// Angle 2 pi (m mod n) / n, reduced first to keep the argument small.
fn twiddle(m: usize, n: usize) -> f64 {
    2.0 * PI * ((m % n) as f64) / n as f64
}

fn fft_in_place(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut size = 2;
    while size <= n {
        let half = size / 2;
        for k in 0..half {
            let (s, c) = twiddle(k * (n / size), n).sin_cos();
            let w = Complex64::new(c, sign * s);
            let mut start = 0;
            while start < n {
                let a = buf[start + k];
                let b = buf[start + k + half] * w;
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
                start += size;
            }
        }
        size *= 2;
    }
}

/// Precomputed truncated real DFT of fixed length, for hot loops over short sequences.
///
/// `forward` yields the first `modes` coefficients; `inverse` synthesizes a real
/// sequence from them with all higher coefficients taken as zero.
#[derive(Debug, Clone)]
pub struct TruncatedDft {
    len: usize,
    modes: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
    weight: Vec<f64>,
}

impl TruncatedDft {
    pub fn new(len: usize, modes: usize) -> Result<Self> {
        if len == 0 || modes == 0 || modes > len / 2 + 1 {
            return invalid(format!("truncated DFT: {} modes invalid for length {}", modes, len));
        }
        let mut cos = Vec::with_capacity(modes * len);
        let mut sin = Vec::with_capacity(modes * len);
        for k in 0..modes {
            for t in 0..len {
                let (s, c) = twiddle(k * t, len).sin_cos();
                cos.push(c);
                sin.push(s);
            }
        }
        let weight = (0..modes)
            .map(|k| if k == 0 || (len % 2 == 0 && k == len / 2) { 1.0 } else { 2.0 })
            .collect();
        Ok(Self { len, modes, cos, sin, weight })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    /// Forward transform of a strided sequence `x[offset + t*stride]`.
    pub fn forward_strided(&self, x: &[f64], offset: usize, stride: usize, re: &mut [f64], im: &mut [f64]) {
        for k in 0..self.modes {
            let (mut a, mut b) = (0.0, 0.0);
            let c = &self.cos[k * self.len..(k + 1) * self.len];
            let s = &self.sin[k * self.len..(k + 1) * self.len];
            for t in 0..self.len {
                let v = x[offset + t * stride];
                a += v * c[t];
                b -= v * s[t];
            }
            re[k] = a;
            im[k] = b;
        }
    }

    /// Inverse transform accumulated into `y[offset + t*stride]`.
    pub fn inverse_strided_add(&self, re: &[f64], im: &[f64], y: &mut [f64], offset: usize, stride: usize) {
        let inv = 1.0 / self.len as f64;
        for k in 0..self.modes {
            let w = self.weight[k] * inv;
            // imaginary part is ignored at DC and Nyquist
            let bi = if self.weight[k] == 1.0 { 0.0 } else { im[k] };
            let c = &self.cos[k * self.len..(k + 1) * self.len];
            let s = &self.sin[k * self.len..(k + 1) * self.len];
            for t in 0..self.len {
                y[offset + t * stride] += w * (re[k] * c[t] - bi * s[t]);
            }
        }
    }

    /// Mode multiplicity in the full spectrum: 1 at DC/Nyquist, 2 elsewhere.
    pub fn weight(&self, k: usize) -> f64 {
        self.weight[k]
    }
}
