use std::collections::{BTreeMap, VecDeque};
use std::time::Instant;

use rayon::prelude::*;

use super::pipeline::Pipeline;
use crate::baseline::{discretize_wear, PolicyTable, N_LEVELS};
use crate::error::{invalid, Result};
use crate::numerics::RngStream;
use crate::plantsim::{DeviceState, Fleet, FleetConfig, MaintenanceAction, N_SENSORS};

/// Per-device sensor history, newest last.
pub type History = [VecDeque<[f64; N_SENSORS]>];

/// Maps the fleet's current states (and recent sensor history) to one action
/// per device.
pub trait FleetPolicy: Sync {
    fn label(&self) -> String;
    /// Sensor steps of history the policy reads; 0 for state-only policies.
    fn history_len(&self) -> usize {
        0
    }
    fn act(&self, states: &[DeviceState], history: &History) -> Result<Vec<MaintenanceAction>>;
}

pub struct ConstantPolicy(pub MaintenanceAction);

impl FleetPolicy for ConstantPolicy {
    fn label(&self) -> String {
        format!("always_{}", self.0.name())
    }

    fn act(&self, states: &[DeviceState], _: &History) -> Result<Vec<MaintenanceAction>> {
        Ok(vec![self.0; states.len()])
    }
}

/// Wear-level lookup (the tabular baseline). Unsampled levels do nothing.
pub struct TablePolicy {
    pub label: String,
    pub table: PolicyTable,
}

impl FleetPolicy for TablePolicy {
    fn label(&self) -> String {
        self.label.clone()
    }

    fn act(&self, states: &[DeviceState], _: &History) -> Result<Vec<MaintenanceAction>> {
        Ok(states
            .iter()
            .map(|s| self.table.action(discretize_wear(s)).unwrap_or(MaintenanceAction::DoNothing))
            .collect())
    }
}

/// Greedy actor over encoded sensor windows. Devices without a full window
/// yet do nothing.
pub struct LearnedPolicy<'a> {
    pub label: String,
    pub pipeline: &'a Pipeline,
}

impl LearnedPolicy<'_> {
    fn states(&self, history: &History) -> Result<Vec<Option<Vec<f64>>>> {
        let len = self.pipeline.window();
        let windows: Vec<Option<Vec<f64>>> = history
            .iter()
            .map(|h| (h.len() >= len).then(|| h.iter().skip(h.len() - len).flatten().copied().collect()))
            .collect();
        let refs: Vec<Option<&[f64]>> = windows.iter().map(|w| w.as_deref()).collect();
        self.pipeline.encoder.encode(&refs)
    }
}

impl FleetPolicy for LearnedPolicy<'_> {
    fn label(&self) -> String {
        self.label.clone()
    }

    fn history_len(&self) -> usize {
        self.pipeline.window()
    }

    fn act(&self, states: &[DeviceState], history: &History) -> Result<Vec<MaintenanceAction>> {
        if states.len() != self.pipeline.devices() {
            return invalid(format!("policy trained for {} devices, fleet has {}", self.pipeline.devices(), states.len()));
        }
        self.states(history)?
            .into_iter()
            .map(|s| match s {
                Some(s) => self.pipeline.actor.greedy(&s),
                None => Ok(MaintenanceAction::DoNothing),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub policy: String,
    /// Total cost / (devices × horizon × seeds).
    pub average_cost: f64,
    /// Mean per-device discounted return (−cost) from step 0.
    pub discounted_return: f64,
    pub total_cost: f64,
    pub failures: u64,
    pub action_histogram: BTreeMap<String, u64>,
    pub horizon: usize,
    pub devices: usize,
    pub seeds: Vec<u64>,
    pub seconds: f64,
}

impl EvalReport {
    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// A JSON array of reports, pretty-printed with a trailing newline.
pub fn reports_json(reports: &[EvalReport]) -> Result<String> {
    Ok(serde_json::to_string_pretty(reports)? + "\n")
}

struct Rollout {
    total: f64,
    discounted: f64,
    failures: u64,
    counts: [u64; 4],
}

fn rollout(policy: &dyn FleetPolicy, cfg: &FleetConfig, horizon: usize, gamma: f64, seed: u64) -> Result<Rollout> {
    let mut fleet = Fleet::new(cfg, seed, "eval", false);
    let keep = policy.history_len().max(1);
    let mut history: Vec<VecDeque<[f64; N_SENSORS]>> = vec![VecDeque::with_capacity(keep + 1); cfg.devices];
    let mut r = Rollout { total: 0.0, discounted: 0.0, failures: 0, counts: [0; 4] };
    let mut discount = 1.0;
    for _ in 0..horizon {
        for (h, s) in history.iter_mut().zip(fleet.states()) {
            h.push_back(s.sensors);
            if h.len() > keep {
                h.pop_front();
            }
        }
        let actions = policy.act(fleet.states(), &history)?;
        let step_cost: f64 = fleet
            .step(&actions)
            .into_iter()
            .map(|(c, failed)| {
                r.failures += failed as u64;
                c
            })
            .sum();
        for a in &actions {
            r.counts[a.index()] += 1;
        }
        r.total += step_cost;
        r.discounted += discount * step_cost;
        discount *= gamma;
    }
    Ok(r)
}

/// Rolls the policy out on a fresh fleet per seed (all devices new) and
/// aggregates costs. Seeds run in parallel; results combine in seed order.
pub fn evaluate_policy(
    policy: &dyn FleetPolicy,
    cfg: &FleetConfig,
    horizon: usize,
    seeds: &[u64],
    gamma: f64,
    record_timing: bool,
) -> Result<EvalReport> {
    if horizon == 0 || seeds.is_empty() {
        return invalid("evaluation needs horizon >= 1 and at least one seed");
    }
    let start = Instant::now();
    let runs: Vec<Rollout> = seeds.par_iter().map(|&s| rollout(policy, cfg, horizon, gamma, s)).collect::<Result<_>>()?;
    let steps = (cfg.devices * horizon * seeds.len()) as f64;
    let total: f64 = runs.iter().map(|r| r.total).sum();
    let discounted: f64 = runs.iter().map(|r| r.discounted).sum();
    let mut counts = [0u64; 4];
    for r in &runs {
        for (c, x) in counts.iter_mut().zip(r.counts) {
            *c += x;
        }
    }
    Ok(EvalReport {
        policy: policy.label(),
        average_cost: total / steps,
        discounted_return: -discounted / (cfg.devices * seeds.len()) as f64,
        total_cost: total,
        failures: runs.iter().map(|r| r.failures).sum(),
        action_histogram: MaintenanceAction::ALL.iter().map(|a| (a.name().to_string(), counts[a.index()])).collect(),
        horizon,
        devices: cfg.devices,
        seeds: seeds.to_vec(),
        seconds: if record_timing { start.elapsed().as_secs_f64() } else { 0.0 },
    })
}

/// Majority greedy action per wear level over sampled simulator states.
///
/// A fleet runs under the behavior policy, so every device's neighbors look
/// like the logged data. Each sampling episode picks one focal device (round
/// robin), resets it to uniformly random wear in [0, 1], lets it degrade
/// under do-nothing for one window, and classifies it by its state at the
/// window's last step (a failure during the window makes it a failed-level
/// sample). At most `samples` votes are taken per level within `max_steps`
/// fleet steps; a level never reached is reported unsampled. Returns the
/// table and the vote count per level.
pub fn extract_policy_table(
    pipeline: &Pipeline,
    cfg: &FleetConfig,
    samples: usize,
    max_steps: usize,
    seed: u64,
) -> Result<(PolicyTable, Vec<usize>)> {
    let policy = LearnedPolicy { label: String::new(), pipeline };
    let len = pipeline.window();
    let root = RngStream::new(seed, "policy-table");
    let mut rng = root.derive("focal");
    let mut behavior_rngs: Vec<RngStream> = (0..cfg.devices).map(|d| root.derive(&format!("behavior{}", d))).collect();
    let mut fleet = Fleet::new(cfg, seed, "policy-table", true);
    let mut history: Vec<VecDeque<[f64; N_SENSORS]>> = vec![VecDeque::with_capacity(len + 1); cfg.devices];
    let mut advance = |fleet: &mut Fleet, history: &mut Vec<VecDeque<[f64; N_SENSORS]>>, focal: Option<usize>| {
        let mut actions = fleet.behavior_actions(&mut behavior_rngs);
        if let Some(f) = focal {
            actions[f] = MaintenanceAction::DoNothing;
        }
        fleet.step(&actions);
        for (h, s) in history.iter_mut().zip(fleet.states()) {
            h.push_back(s.sensors);
            if h.len() > len {
                h.pop_front();
            }
        }
    };
    // burn-in so every device has a full window
    for _ in 0..len {
        advance(&mut fleet, &mut history, None);
    }
    let mut votes = vec![[0usize; 4]; N_LEVELS];
    let mut used = len;
    let mut episode = 0;
    while used + len <= max_steps && votes.iter().any(|v| v.iter().sum::<usize>() < samples) {
        let focal = episode % cfg.devices;
        fleet.set_wear(focal, rng.uniform());
        *history[focal].back_mut().expect("burned in") = fleet.states()[focal].sensors;
        for _ in 1..len {
            advance(&mut fleet, &mut history, Some(focal));
        }
        let level = discretize_wear(&fleet.states()[focal]).index();
        if votes[level].iter().sum::<usize>() < samples {
            if let Some(s) = &policy.states(&history)?[focal] {
                votes[level][pipeline.actor.greedy(s)?.index()] += 1;
            }
        }
        used += len - 1;
        episode += 1;
    }
    let actions = votes
        .iter()
        .map(|v| {
            let n: usize = v.iter().sum();
            if n == 0 {
                return Ok(None);
            }
            let best = (0..4).fold(0, |b, i| if v[i] > v[b] { i } else { b });
            MaintenanceAction::from_index(best).map(Some)
        })
        .collect::<Result<Vec<_>>>()?;
    let counts = votes.iter().map(|v| v.iter().sum()).collect();
    Ok((PolicyTable { actions }, counts))
}
