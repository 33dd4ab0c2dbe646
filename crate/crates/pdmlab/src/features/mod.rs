//! Hybrid temporal features: DFT amplitudes of the raw sensor window spliced
//! with a Fourier-neural-operator branch over autoencoder latents.

mod fno;
mod spectral;

pub use fno::{fno_branch, fno_layer, fuse, lift, record_fno_layer, spectral_conv, FnoConfig, FnoParams};
pub use spectral::{spectral_branch, SpectralConfig};

use crate::dae::{encode, DaeParams};
use crate::error::{invalid, Result};
use crate::numerics::Standardizer;

/// One fused feature vector with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridFeature {
    pub values: Vec<f64>,
    pub device_id: usize,
    /// Last step of the window.
    pub time_step: usize,
}

/// Frozen window → f_hybrid map.
///
/// `fno: None` drops the FNO branch (spectral amplitudes only); `dae: None`
/// feeds z-scored raw sensors to the FNO instead of latents.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    pub spectral: SpectralConfig,
    pub sensor_norm: Standardizer,
    pub dae: Option<DaeParams>,
    pub fno: Option<FnoParams>,
    pub channels: usize,
    pub window: usize,
}

impl FeatureExtractor {
    pub fn output_len(&self) -> usize {
        let spec = self.spectral.output_len(self.channels);
        match &self.fno {
            None => spec,
            Some(p) => match &p.fuse {
                Some((w, _)) => w.shape()[1],
                None => spec + p.out_dim(),
            },
        }
    }

    /// Latent (or normalized raw) sequence fed to the FNO branch, time-major.
    pub fn latent_sequence(&self, window: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for row in window.chunks(self.channels) {
            let z = self.sensor_norm.apply(row);
            match &self.dae {
                Some(d) => out.extend(encode(&z, d)?),
                None => {
                    if z.iter().any(|v| !v.is_finite()) {
                        return invalid("non-finite sensor reading");
                    }
                    out.extend(z)
                }
            }
        }
        Ok(out)
    }

    /// Features of one raw, time-major `window × channels` block.
    pub fn extract(&self, window: &[f64]) -> Result<Vec<f64>> {
        if window.len() != self.window * self.channels {
            return invalid(format!("window of {} values vs {}×{}", window.len(), self.window, self.channels));
        }
        let spec = spectral_branch(window, self.channels, &self.spectral);
        let Some(p) = &self.fno else { return Ok(spec) };
        let f = fno_branch(&self.latent_sequence(window)?, p)?;
        fuse(&spec, &f, p.fuse.as_ref())
    }

    pub fn hybrid(&self, window: &[f64], device_id: usize, time_step: usize) -> Result<HybridFeature> {
        Ok(HybridFeature { values: self.extract(window)?, device_id, time_step })
    }
}
