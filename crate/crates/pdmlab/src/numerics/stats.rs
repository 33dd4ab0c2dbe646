//! Per-column z-score normalization.

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fits column means and population standard deviations; constant columns get std 1.
    pub fn fit<'a, I>(rows: I, dim: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut n = 0usize;
        let mut mean = vec![0.0; dim];
        let mut m2 = vec![0.0; dim];
        for row in rows {
            if row.len() != dim {
                return invalid(format!("row of length {} vs dim {}", row.len(), dim));
            }
            n += 1;
            for j in 0..dim {
                let d = row[j] - mean[j];
                mean[j] += d / n as f64;
                m2[j] += d * (row[j] - mean[j]);
            }
        }
        if n == 0 {
            return invalid("cannot fit normalization on no rows");
        }
        let std = m2
            .iter()
            .map(|v| {
                let s = (v / n as f64).sqrt();
                if s > 1e-12 && s.is_finite() {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_in_place(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        let mut out = row.to_vec();
        self.apply_in_place(&mut out);
        out
    }

    /// Text form: one `index,mean,std` line per column.
    pub fn to_text(&self, names: Option<&[&str]>) -> String {
        let mut s = String::from("column,mean,std\n");
        for j in 0..self.dim() {
            let name = names.and_then(|n| n.get(j)).map(|n| n.to_string()).unwrap_or_else(|| j.to_string());
            s.push_str(&format!("{},{:.16e},{:.16e}\n", name, self.mean[j], self.std[j]));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut mean = Vec::new();
        let mut std = Vec::new();
        for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 3 {
                return invalid(format!("bad normalization line `{}`", line));
            }
            let p = |s: &str| s.trim().parse::<f64>().map_err(|_| crate::Error::Format(format!("bad number `{}`", s)));
            mean.push(p(parts[1])?);
            std.push(p(parts[2])?);
        }
        Ok(Self { mean, std })
    }
}
