use crate::error::{Error, Result};
use crate::kv_config;
use crate::numerics::rfft;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SpectralConfig {
    /// Amplitudes kept per channel.
    pub n_z_feat: usize,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self { n_z_feat: 10 }
    }
}

kv_config!(SpectralConfig, "spectral", {
    "n_z_feat" => n_z_feat,
});

impl SpectralConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_z_feat == 0 {
            return Err(Error::Config("spectral: n_z_feat must be >= 1".into()));
        }
        Ok(())
    }

    pub fn output_len(&self, channels: usize) -> usize {
        channels * self.n_z_feat
    }
}

/// Per-channel DFT amplitudes of a time-major window (`len × channels`, flat).
///
/// The first `n_z_feat` magnitudes of each channel are kept (zero-padded when
/// the window has fewer bins); channels are concatenated in order. Non-finite
/// amplitudes become 0.0, so a NaN-laced channel yields zeros.
pub fn spectral_branch(window: &[f64], channels: usize, cfg: &SpectralConfig) -> Vec<f64> {
    let n = cfg.n_z_feat;
    let mut out = vec![0.0; channels * n];
    if channels == 0 || window.is_empty() {
        return out;
    }
    let len = window.len() / channels;
    let mut col = vec![0.0; len];
    for c in 0..channels {
        for (t, v) in col.iter_mut().enumerate() {
            *v = window[t * channels + c];
        }
        let Ok(spec) = rfft(&col) else { continue };
        for (o, m) in out[c * n..(c + 1) * n].iter_mut().zip(spec.magnitudes()) {
            *o = if m.is_finite() { m } else { 0.0 };
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_channel_is_dc_only() {
        let w: Vec<f64> = (0..8).flat_map(|_| [2.5, 0.0]).collect();
        let f = spectral_branch(&w, 2, &SpectralConfig { n_z_feat: 5 });
        assert!((f[0] - 20.0).abs() < 1e-12);
        assert!(f[1..5].iter().all(|v| v.abs() < 1e-12));
        assert!(f[5..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn short_window_zero_padded() {
        let w = [1.0, -2.0, 0.5, 3.0];
        let f = spectral_branch(&w, 1, &SpectralConfig { n_z_feat: 5 });
        assert_eq!(f.len(), 5);
        assert!(f[0] > 0.0);
        assert_eq!(&f[3..], &[0.0, 0.0]);
    }

    #[test]
    fn nan_is_sanitized() {
        let mut w: Vec<f64> = (0..16).map(|i| i as f64).collect();
        w[4] = f64::NAN;
        let f = spectral_branch(&w, 2, &SpectralConfig::default());
        assert!(f.iter().all(|v| v.is_finite()));
        assert!(f[..10].iter().all(|v| *v == 0.0));
        assert!(f[10] > 0.0);
    }
}
