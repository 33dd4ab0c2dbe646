use std::fs;
use std::path::Path;

use super::experiments::Variant;
use super::RunConfig;
use crate::dae::{train_dae, DaeParams};
use crate::error::{Error, Result};
use crate::features::{FeatureExtractor, FnoParams};
use crate::graph::{build_graph, normalize, GcnParams};
use crate::numerics::{RngStream, Standardizer};
use crate::plantsim::{Record, N_SENSORS, SENSOR_NAMES};
use crate::policy::{build_experience, train_ppo, ActorCritic, DeviceSeries, StateEncoder, TrainMetrics};

/// A trained state encoder and actor-critic.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub encoder: StateEncoder,
    pub actor: ActorCritic,
    /// Device group ids, one per graph node.
    pub groups: Vec<usize>,
}

/// Everything a training run produces.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub pipeline: Pipeline,
    pub metrics: TrainMetrics,
    /// Per-epoch DAE denoising MSE; empty when no DAE was trained.
    pub dae_history: Vec<f64>,
    pub experience_len: usize,
    pub skipped_transitions: usize,
}

const SENSOR_NORM_FILE: &str = "normalization.txt";
const FEATURE_NORM_FILE: &str = "feature_normalization.txt";
const GRAPH_FILE: &str = "graph.txt";

/// Dataset → sensor normalizer → DAE → frozen FNO/GCN → feature normalizer →
/// experience → PPO. `variant` removes one module; [`Variant::NoPpo`] is not a
/// pipeline variant and is rejected here.
pub fn train_pipeline(cfg: &RunConfig, records: &[Record], variant: Variant) -> Result<Artifacts> {
    cfg.validate()?;
    if variant == Variant::NoPpo {
        return Err(Error::InvalidArgument("the no-PPO variant has no learned pipeline".into()));
    }
    let series = DeviceSeries::new(records)?;
    let graph = build_graph(&series.groups);
    let abar = normalize(&graph.adjacency, cfg.gcn.self_loops)?;
    let sensor_norm = Standardizer::fit(records.iter().map(|r| &r.sensors[..]), N_SENSORS)?;
    let use_fno = variant != Variant::NoFno;
    let (dae, dae_history) = if use_fno && variant != Variant::NoDae {
        let data: Vec<Vec<f64>> = records.iter().map(|r| sensor_norm.apply(&r.sensors)).collect();
        let (p, h) = train_dae(&data, &cfg.dae)?;
        (Some(p), h)
    } else {
        (None, Vec::new())
    };
    let root = RngStream::new(cfg.run.seed, "pipeline");
    let fno = if use_fno {
        let in_dim = dae.as_ref().map_or(N_SENSORS, DaeParams::latent_dim);
        let spectral_len = cfg.spectral.output_len(N_SENSORS);
        Some(FnoParams::init(&cfg.fno, in_dim, spectral_len, &mut root.derive("fno"))?)
    } else {
        None
    };
    let features = FeatureExtractor {
        spectral: cfg.spectral.clone(),
        sensor_norm,
        dae,
        fno,
        channels: N_SENSORS,
        window: cfg.fno.window,
    };
    let feature_dim = features.output_len();
    let mut encoder = StateEncoder {
        features,
        feature_norm: Standardizer::identity(feature_dim),
        abar,
        gcn: None,
        append_own: cfg.run.append_own,
        append_current: cfg.run.append_current,
    };
    encoder.feature_norm = fit_feature_norm(&encoder, &series, cfg.run.feature_fit_stride)?;
    if variant != Variant::NoGnn {
        encoder.gcn = Some(GcnParams::init(&cfg.gcn, feature_dim, &mut root.derive("gcn"))?);
    }
    let init = ActorCritic::init(encoder.state_dim(), cfg.ppo.hidden, &mut root.derive("actor"))?;
    let experience = build_experience(records, &encoder, &init)?;
    let (actor, metrics) = train_ppo(&experience, &init, &cfg.ppo)?;
    Ok(Artifacts {
        pipeline: Pipeline { encoder, actor, groups: series.groups },
        metrics,
        dae_history,
        experience_len: experience.len(),
        skipped_transitions: experience.skipped,
    })
}

fn fit_feature_norm(encoder: &StateEncoder, series: &DeviceSeries, stride: usize) -> Result<Standardizer> {
    let len = encoder.features.window;
    let mut rows = Vec::new();
    for (k, t) in series.time_steps().into_iter().enumerate() {
        if k % stride != 0 {
            continue;
        }
        let windows: Vec<Option<Vec<f64>>> = (0..series.device_ids.len()).map(|d| series.window(d, t, len)).collect();
        let refs: Vec<Option<&[f64]>> = windows.iter().map(|w| w.as_deref()).collect();
        rows.extend(encoder.features(&refs)?.into_iter().flatten());
    }
    if rows.is_empty() {
        return Err(Error::InvalidArgument(format!("no device has {} consecutive records", len)));
    }
    Standardizer::fit(rows.iter().map(Vec::as_slice), encoder.features.output_len())
}

impl Pipeline {
    pub fn devices(&self) -> usize {
        self.groups.len()
    }

    pub fn window(&self) -> usize {
        self.encoder.features.window
    }

    /// Writes binary parameter files plus text normalization sidecars.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let f = &self.encoder.features;
        fs::write(dir.join(SENSOR_NORM_FILE), f.sensor_norm.to_text(Some(&SENSOR_NAMES)))?;
        fs::write(dir.join(FEATURE_NORM_FILE), self.encoder.feature_norm.to_text(None))?;
        let graph = format!(
            "groups = {}\nself_loops = {}\nappend_own = {}\nappend_current = {}\nwindow = {}\nn_z_feat = {}\n",
            crate::config::fmt_list(&self.groups),
            self.self_loops(),
            self.encoder.append_own,
            self.encoder.append_current,
            f.window,
            f.spectral.n_z_feat
        );
        fs::write(dir.join(GRAPH_FILE), graph)?;
        for (name, present) in [("dae.bin", f.dae.is_some()), ("fno.bin", f.fno.is_some()), ("gcn.bin", self.encoder.gcn.is_some())] {
            if !present && dir.join(name).exists() {
                fs::remove_file(dir.join(name))?;
            }
        }
        if let Some(d) = &f.dae {
            d.save(&dir.join("dae.bin"))?;
        }
        if let Some(p) = &f.fno {
            p.save(&dir.join("fno.bin"))?;
        }
        if let Some(g) = &self.encoder.gcn {
            g.save(&dir.join("gcn.bin"))?;
        }
        self.actor.save(&dir.join("actor_critic.bin"))
    }

    fn self_loops(&self) -> bool {
        self.encoder.abar.data().first().is_some_and(|&v| v != 0.0)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| fs::read_to_string(dir.join(name));
        let sensor_norm = Standardizer::from_text(&read(SENSOR_NORM_FILE)?)?;
        let feature_norm = Standardizer::from_text(&read(FEATURE_NORM_FILE)?)?;
        let mut groups = None;
        let (mut self_loops, mut append_own, mut append_current, mut window, mut n_z_feat) = (true, true, true, 0usize, 0usize);
        for (k, v) in crate::config::parse_pairs(&read(GRAPH_FILE)?)? {
            match k.as_str() {
                "groups" => groups = Some(crate::config::parse_list::<usize>(&k, &v)?),
                "self_loops" => self_loops = crate::config::parse_bool(&k, &v)?,
                "append_own" => append_own = crate::config::parse_bool(&k, &v)?,
                "append_current" => append_current = crate::config::parse_bool(&k, &v)?,
                "window" => window = crate::config::parse_value(&k, &v)?,
                "n_z_feat" => n_z_feat = crate::config::parse_value(&k, &v)?,
                _ => return Err(Error::Format(format!("unknown graph key `{}`", k))),
            }
        }
        let groups = groups.ok_or_else(|| Error::Format("graph file lacks groups".into()))?;
        let opt = |name: &str| dir.join(name).exists();
        let dae = if opt("dae.bin") { Some(DaeParams::load(&dir.join("dae.bin"))?) } else { None };
        let fno = if opt("fno.bin") { Some(FnoParams::load(&dir.join("fno.bin"))?) } else { None };
        let gcn = if opt("gcn.bin") { Some(GcnParams::load(&dir.join("gcn.bin"))?) } else { None };
        let features = FeatureExtractor {
            spectral: crate::features::SpectralConfig { n_z_feat },
            sensor_norm,
            dae,
            fno,
            channels: N_SENSORS,
            window,
        };
        let abar = normalize(&build_graph(&groups).adjacency, self_loops)?;
        let encoder = StateEncoder { features, feature_norm, abar, gcn, append_own, append_current };
        let actor = ActorCritic::load(&dir.join("actor_critic.bin"))?;
        if actor.state_dim() != encoder.state_dim() || encoder.feature_norm.dim() != encoder.features.output_len() {
            return Err(Error::Format("saved pipeline parts do not fit together".into()));
        }
        Ok(Self { encoder, actor, groups })
    }
}
