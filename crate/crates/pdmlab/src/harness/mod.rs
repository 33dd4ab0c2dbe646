//! Run configuration, end-to-end training, evaluation and experiment drivers.
//!
//! A [`RunConfig`] merges every component's settings into one flat
//! `key = value` namespace (`fleet.*`, `dae.*`, `spectral.*`, `fno.*`,
//! `gcn.*`, `ppo.*`, `qlearn.*`, `eval.*`, `run.*`).

mod eval;
mod experiments;
mod pipeline;

pub use eval::{
    evaluate_policy, extract_policy_table, reports_json, ConstantPolicy, EvalReport, FleetPolicy, LearnedPolicy, TablePolicy,
};
pub use experiments::{ablation_csv, run_ablation, run_variant, sweep, sweep_csv, AblationSpec, SweepResult, Variant};
pub use pipeline::{train_pipeline, Artifacts, Pipeline};

use crate::config::parse_pairs;
use crate::dae::DaeConfig;
use crate::error::{Error, Result};
use crate::features::{FnoConfig, SpectralConfig};
use crate::graph::GcnConfig;
use crate::kv_config;
use crate::baseline::QLearningConfig;
use crate::plantsim::FleetConfig;
use crate::policy::PpoConfig;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalConfig {
    pub horizon: usize,
    pub seeds: Vec<u64>,
    /// States sampled per wear level for the policy table.
    pub table_samples: usize,
    /// Step budget of the policy-table state search.
    pub table_max_steps: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { horizon: 2000, seeds: vec![1001, 1002, 1003, 1004, 1005], table_samples: 100, table_max_steps: 20000 }
    }
}

kv_config!(EvalConfig, "eval", {
    "horizon" => horizon,
    "seeds" => seeds,
    "table_samples" => table_samples,
    "table_max_steps" => table_max_steps,
});

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RunSection {
    /// Seed for the FNO, GCN and actor-critic initializations.
    pub seed: u64,
    pub output_dir: String,
    /// Append each device's own normalized features to its graph embedding.
    pub append_own: bool,
    /// Append each device's latest z-scored sensor reading to its state.
    pub append_current: bool,
    /// Every n-th time step contributes windows to the feature normalizer fit.
    pub feature_fit_stride: usize,
    /// Write measured wall-clock seconds into reports (breaks byte-identity).
    pub record_timing: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { seed: 0, output_dir: "out".into(), append_own: true, append_current: true, feature_fit_stride: 4, record_timing: false }
    }
}

kv_config!(RunSection, "run", {
    "seed" => seed,
    "output_dir" => output_dir,
    "append_own" => append_own,
    "append_current" => append_current,
    "feature_fit_stride" => feature_fit_stride,
    "record_timing" => record_timing,
});

#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct RunConfig {
    pub fleet: FleetConfig,
    pub dae: DaeConfig,
    pub spectral: SpectralConfig,
    pub fno: FnoConfig,
    pub gcn: GcnConfig,
    pub ppo: PpoConfig,
    pub qlearn: QLearningConfig,
    pub eval: EvalConfig,
    pub run: RunSection,
}

impl RunConfig {
    /// 10 devices × 500 steps.
    pub fn desk() -> Self {
        let mut c = Self::default();
        c.fleet.devices = 10;
        c.fleet.steps = 500;
        c
    }

    /// Built-in presets: `default` and `desk`.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "default" => Some(Self::default()),
            "desk" => Some(Self::desk()),
            _ => None,
        }
    }

    /// Sets one fully qualified key; unknown keys are a config error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let hit = self.fleet.set_key(key, value)?
            || self.dae.set_key(key, value)?
            || self.spectral.set_key(key, value)?
            || self.fno.set_key(key, value)?
            || self.gcn.set_key(key, value)?
            || self.ppo.set_key(key, value)?
            || self.qlearn.set_key(key, value)?
            || self.eval.set_key(key, value)?
            || self.run.set_key(key, value)?;
        if hit {
            Ok(())
        } else {
            Err(Error::Config(format!("unknown key `{}`", key)))
        }
    }

    pub fn is_known_key(key: &str) -> bool {
        Self::default().entries().iter().any(|(k, _)| k == key)
    }

    /// Applies `key = value` text on top of `self`. A leading
    /// `preset = desk` line selects the base.
    pub fn apply_text(mut self, text: &str) -> Result<Self> {
        for (k, v) in parse_pairs(text)? {
            if k == "preset" {
                self = Self::preset(&v).ok_or_else(|| Error::Config(format!("unknown preset `{}`", v)))?;
                continue;
            }
            self.set(&k, &v)?;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::default().apply_text(text)
    }

    /// Reseeds the dataset, DAE, initializations, PPO and Q-learning.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.fleet.seed = seed;
        self.dae.seed = seed;
        self.ppo.seed = seed;
        self.qlearn.seed = seed;
        self.run.seed = seed;
        self
    }

    pub fn entries(&self) -> Vec<(String, String)> {
        let mut e = self.fleet.entries();
        e.extend(self.dae.entries());
        e.extend(self.spectral.entries());
        e.extend(self.fno.entries());
        e.extend(self.gcn.entries());
        e.extend(self.ppo.entries());
        e.extend(self.qlearn.entries());
        e.extend(self.eval.entries());
        e.extend(self.run.entries());
        e
    }

    /// Every key with its value; parses back to an equal config.
    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{} = {}\n", k, v)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.fleet.validate()?;
        self.dae.validate()?;
        self.spectral.validate()?;
        self.fno.validate()?;
        self.gcn.validate()?;
        self.ppo.validate()?;
        self.qlearn.validate()?;
        if self.eval.horizon == 0 || self.eval.seeds.is_empty() {
            return Err(Error::Config("eval: horizon and seeds must be non-empty".into()));
        }
        if self.run.feature_fit_stride == 0 {
            return Err(Error::Config("run: feature_fit_stride must be >= 1".into()));
        }
        if self.dae.input_dim != crate::plantsim::N_SENSORS {
            return Err(Error::Config(format!("dae: input_dim must equal the {} sensors", crate::plantsim::N_SENSORS)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_roundtrip_and_unknown_keys() {
        let c = RunConfig::desk().with_seed(7);
        let back = RunConfig::from_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert!(matches!(RunConfig::from_text("ppo.clipp = 0.1"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_text("ppo.clip = abc"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_text("ppo.clip = 1.5"), Err(Error::Config(_))));
        let d = RunConfig::from_text("preset = desk\nppo.clip = 0.1\n").unwrap();
        assert_eq!((d.fleet.devices, d.ppo.clip), (10, 0.1));
        assert!(RunConfig::is_known_key("gcn.layers") && !RunConfig::is_known_key("gcn.depth"));
    }
}
