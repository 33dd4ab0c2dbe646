use std::collections::BTreeMap;

use super::encoder::StateEncoder;
use super::network::ActorCritic;
use crate::error::{invalid, Result};
use crate::plantsim::{MaintenanceAction, Record};

/// One logged transition. States live in the owning [`Experience`] pool and
/// are referenced by index.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperienceTuple {
    pub state: usize,
    pub action: MaintenanceAction,
    pub old_log_prob: f64,
    /// `−cost`.
    pub reward: f64,
    pub next_state: usize,
    /// The device is failed at the next step.
    pub done: bool,
    pub device_id: usize,
    pub time_step: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub states: Vec<Vec<f64>>,
    pub tuples: Vec<ExperienceTuple>,
    /// Transitions dropped because the next step's record was missing.
    pub skipped: usize,
}

impl Experience {
    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[self.tuples[i].state]
    }

    pub fn next_state(&self, i: usize) -> &[f64] {
        &self.states[self.tuples[i].next_state]
    }

    pub fn state_dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }
}

/// Records grouped by device (ascending id) and sorted by time.
pub struct DeviceSeries {
    pub device_ids: Vec<usize>,
    pub groups: Vec<usize>,
    pub series: Vec<Vec<Record>>,
}

impl DeviceSeries {
    pub fn new(records: &[Record]) -> Result<Self> {
        let mut by_dev: BTreeMap<usize, Vec<Record>> = BTreeMap::new();
        for r in records {
            by_dev.entry(r.device_id).or_default().push(r.clone());
        }
        let mut device_ids = Vec::new();
        let mut groups = Vec::new();
        let mut series = Vec::new();
        for (id, mut rs) in by_dev {
            rs.sort_by_key(|r| r.time_step);
            if rs.windows(2).any(|w| w[0].time_step == w[1].time_step) {
                return invalid(format!("device {} has duplicate time steps", id));
            }
            device_ids.push(id);
            groups.push(rs[0].group_id);
            series.push(rs);
        }
        Ok(Self { device_ids, groups, series })
    }

    /// Index of the record at time `t`, if present.
    pub fn position(&self, device: usize, t: usize) -> Option<usize> {
        self.series[device].binary_search_by_key(&t, |r| r.time_step).ok()
    }

    /// Time-major raw sensor window ending at `t` when all `len` steps exist.
    pub fn window(&self, device: usize, t: usize, len: usize) -> Option<Vec<f64>> {
        let end = self.position(device, t)?;
        let start = (end + 1).checked_sub(len)?;
        let rs = &self.series[device][start..=end];
        if rs[0].time_step + len - 1 != t {
            return None;
        }
        Some(rs.iter().flat_map(|r| r.sensors).collect())
    }

    pub fn time_steps(&self) -> Vec<usize> {
        let mut ts: Vec<usize> = self.series.iter().flatten().map(|r| r.time_step).collect();
        ts.sort_unstable();
        ts.dedup();
        ts
    }
}

/// Encodes every (device, step) with a complete window and pairs consecutive
/// steps into transitions.
pub fn build_experience(records: &[Record], encoder: &StateEncoder, actor: &ActorCritic) -> Result<Experience> {
    let ds = DeviceSeries::new(records)?;
    if ds.device_ids.len() != encoder.devices() {
        return invalid(format!("{} devices in records vs {} graph nodes", ds.device_ids.len(), encoder.devices()));
    }
    let n = ds.device_ids.len();
    let len = encoder.features.window;
    let times = ds.time_steps();
    let mut states = Vec::new();
    // per device: time → state index
    let mut index: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); n];
    for &t in &times {
        let windows: Vec<Option<Vec<f64>>> = (0..n).map(|d| ds.window(d, t, len)).collect();
        if windows.iter().all(Option::is_none) {
            continue;
        }
        let refs: Vec<Option<&[f64]>> = windows.iter().map(|w| w.as_deref()).collect();
        for (d, s) in encoder.encode(&refs)?.into_iter().enumerate() {
            if let Some(s) = s {
                index[d].insert(t, states.len());
                states.push(s);
            }
        }
    }
    let mut tuples = Vec::new();
    let mut skipped = 0;
    for d in 0..n {
        for (&t, &si) in &index[d] {
            let Some(&ni) = index[d].get(&(t + 1)) else {
                if index[d].range(t + 1..).next().is_some() {
                    skipped += 1;
                }
                continue;
            };
            let r = &ds.series[d][ds.position(d, t).expect("indexed")];
            let next = &ds.series[d][ds.position(d, t + 1).expect("indexed")];
            let lp = actor.actor_forward(&states[si])?[r.action.index()];
            tuples.push(ExperienceTuple {
                state: si,
                action: r.action,
                old_log_prob: lp,
                reward: -r.cost,
                next_state: ni,
                done: next.failed,
                device_id: r.device_id,
                time_step: t,
            });
        }
    }
    Ok(Experience { states, tuples, skipped })
}
