use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::features::FeatureExtractor;
use crate::graph::{gcn_forward, GcnParams};
use crate::numerics::{Standardizer, Tensor};

/// Frozen fleet-level state map: per-device windows → hybrid features →
/// graph convolution → per-device state vectors.
#[derive(Debug, Clone)]
pub struct StateEncoder {
    pub features: FeatureExtractor,
    /// z-score applied to every hybrid feature vector.
    pub feature_norm: Standardizer,
    /// Normalized adjacency over the fleet's devices.
    pub abar: Tensor,
    /// `None` drops the graph stage; the state is then the device's own features.
    pub gcn: Option<GcnParams>,
    /// Append the device's own normalized features to its graph embedding.
    pub append_own: bool,
    /// Append the window's last sensor reading, z-scored.
    pub append_current: bool,
}

impl StateEncoder {
    pub fn state_dim(&self) -> usize {
        let f = self.features.output_len();
        let base = match &self.gcn {
            None => f,
            Some(g) => g.out_dim() + if self.append_own { f } else { 0 },
        };
        base + if self.append_current { self.features.channels } else { 0 }
    }

    fn current(&self, window: &[f64]) -> Vec<f64> {
        let c = self.features.channels;
        self.features.sensor_norm.apply(&window[window.len() - c..])
    }

    pub fn devices(&self) -> usize {
        self.abar.shape()[0]
    }

    /// Normalized hybrid features per device; `None` where no full window exists.
    pub fn features(&self, windows: &[Option<&[f64]>]) -> Result<Vec<Option<Vec<f64>>>> {
        windows
            .par_iter()
            .map(|w| match w {
                None => Ok(None),
                Some(w) => Ok(Some(self.feature_norm.apply(&self.features.extract(w)?))),
            })
            .collect()
    }

    /// State vectors for every device at one time step. Devices without a
    /// window contribute a zero feature row to the graph and get `None`.
    pub fn encode(&self, windows: &[Option<&[f64]>]) -> Result<Vec<Option<Vec<f64>>>> {
        if windows.len() != self.devices() {
            return invalid(format!("{} windows for {} graph nodes", windows.len(), self.devices()));
        }
        let feats = self.features(windows)?;
        let with_current = |i: usize, mut s: Vec<f64>| {
            if self.append_current {
                if let Some(w) = windows[i] {
                    s.extend(self.current(w));
                }
            }
            s
        };
        let Some(gcn) = &self.gcn else {
            return Ok(feats.into_iter().enumerate().map(|(i, f)| f.map(|f| with_current(i, f))).collect());
        };
        let d = self.features.output_len();
        let mut x = Vec::with_capacity(feats.len() * d);
        for f in &feats {
            match f {
                Some(v) => x.extend_from_slice(v),
                None => x.extend(std::iter::repeat(0.0).take(d)),
            }
        }
        let x = Tensor::matrix(feats.len(), d, x)?;
        let e = gcn_forward(&x, &self.abar, gcn)?;
        Ok(feats
            .into_iter()
            .enumerate()
            .map(|(i, f)| {
                f.map(|f| {
                    let mut s = e.row(i).to_vec();
                    if self.append_own {
                        s.extend(f);
                    }
                    with_current(i, s)
                })
            })
            .collect())
    }
}
