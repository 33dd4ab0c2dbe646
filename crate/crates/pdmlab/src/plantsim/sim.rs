use rand_distr::{Distribution, Normal};

use super::{behavior_policy, DeviceState, FleetConfig, MaintenanceAction, Record, N_SENSORS};
use crate::numerics::{logistic, RngStream};

/// Failure probability for a healthy device at wear `w`.
pub fn hazard(cfg: &FleetConfig, w: f64) -> f64 {
    let h = cfg.hazard_base
        + cfg.hazard_linear * w
        + cfg.hazard_max * logistic(cfg.hazard_steepness * (w - cfg.hazard_midpoint));
    h.clamp(0.0, 1.0)
}

/// Sensor vector for a device state: wear itself plus noisy monotone readouts.
/// `noise` scales the per-sensor noise levels (0.05, 1, 0.1, 0.02).
pub fn sensors_for(wear: f64, failed: bool, noise: f64, rng: &mut RngStream) -> [f64; N_SENSORS] {
    let vib = 0.2 + 1.5 * wear + noise * 0.05 * rng.normal();
    let temp = 40.0 + 30.0 * wear * wear + noise * rng.normal();
    let pres = 5.0 - 2.0 * wear + noise * 0.1 * rng.normal();
    let err_noise = noise * 0.02 * rng.normal();
    let err = if failed { 1.0 } else { (logistic(10.0 * (wear - 0.6)) + err_noise).clamp(0.0, 1.0) };
    [wear, vib, temp, pres, err]
}

pub fn initial_state(cfg: &FleetConfig, device_id: usize, group_id: usize, wear: f64, rng: &mut RngStream) -> DeviceState {
    let wear = wear.clamp(0.0, 1.0);
    let sensors = sensors_for(wear, false, cfg.sensor_noise, rng);
    DeviceState { device_id, group_id, wear, sensors, failed: false, age: 0 }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next: DeviceState,
    pub cost: f64,
    /// A healthy device failed during this step.
    pub failure: bool,
}

/// One transition. Order: degrade, apply the action, failure draw, cost.
///
/// Replace resets the unit and exempts it from the failure draw of the same
/// step. A failed device stays failed until replaced and pays the downtime
/// penalty every step it ends failed. Random draws are consumed in a fixed
/// order regardless of branch so paired runs stay aligned.
pub fn step(
    cfg: &FleetConfig,
    state: &DeviceState,
    action: MaintenanceAction,
    group_shock: f64,
    rng: &mut RngStream,
) -> StepOutcome {
    let noise = cfg.wear_noise * rng.normal();
    let u = rng.uniform();
    let mut wear = (state.wear + cfg.wear_rate + noise + group_shock).clamp(0.0, 1.0);
    let mut failed = state.failed;
    let mut age = state.age + 1;
    match action {
        MaintenanceAction::DoNothing => {}
        MaintenanceAction::MinorMaintenance => wear *= 1.0 - cfg.minor_repair,
        MaintenanceAction::MajorMaintenance => wear *= 1.0 - cfg.major_repair,
        MaintenanceAction::Replace => {
            wear = 0.0;
            failed = false;
            age = 0;
        }
    }
    let mut failure = false;
    if !failed && action != MaintenanceAction::Replace && u < hazard(cfg, wear) {
        failed = true;
        failure = true;
    }
    let cost = cfg.action_costs[action.index()] + if failed { cfg.downtime_penalty } else { 0.0 };
    let next = DeviceState {
        device_id: state.device_id,
        group_id: state.group_id,
        wear,
        sensors: sensors_for(wear, failed, cfg.sensor_noise, rng),
        failed,
        age,
    };
    StepOutcome { next, cost, failure }
}

/// A fleet stepped in lockstep, with shared per-group shocks each step.
#[derive(Debug, Clone)]
pub struct Fleet {
    cfg: FleetConfig,
    states: Vec<DeviceState>,
    device_rngs: Vec<RngStream>,
    shock_rngs: Vec<RngStream>,
    time: usize,
}

impl Fleet {
    /// Fresh fleet; `random_start` draws initial wear from `U(0, initial_wear_max)`,
    /// otherwise every device starts new.
    pub fn new(cfg: &FleetConfig, seed: u64, label: &str, random_start: bool) -> Self {
        let root = RngStream::new(seed, label);
        let mut device_rngs: Vec<RngStream> = (0..cfg.devices).map(|i| root.derive(&format!("device{}", i))).collect();
        let shock_rngs = (0..cfg.groups).map(|g| root.derive(&format!("group{}", g))).collect();
        let states = (0..cfg.devices)
            .map(|i| {
                let rng = &mut device_rngs[i];
                let w = if random_start { cfg.initial_wear_max * rng.uniform() } else { 0.0 };
                initial_state(cfg, i, cfg.group_of(i), w, rng)
            })
            .collect();
        Self { cfg: cfg.clone(), states, device_rngs, shock_rngs, time: 0 }
    }

    /// Puts one device back in service at the given wear (fresh sensors, age 0).
    pub fn set_wear(&mut self, device: usize, wear: f64) {
        let s = &self.states[device];
        self.states[device] = initial_state(&self.cfg, s.device_id, s.group_id, wear, &mut self.device_rngs[device]);
    }

    pub fn config(&self) -> &FleetConfig {
        &self.cfg
    }

    pub fn states(&self) -> &[DeviceState] {
        &self.states
    }

    pub fn time(&self) -> usize {
        self.time
    }

    /// Advances every device by one step; returns `(cost, failure)` per device.
    pub fn step(&mut self, actions: &[MaintenanceAction]) -> Vec<(f64, bool)> {
        assert_eq!(actions.len(), self.states.len(), "one action per device");
        let shocks: Vec<f64> = self.shock_rngs.iter_mut().map(|r| self.cfg.group_shock * r.normal()).collect();
        let mut out = Vec::with_capacity(actions.len());
        for (i, &a) in actions.iter().enumerate() {
            let s = &self.states[i];
            let o = step(&self.cfg, s, a, shocks[s.group_id], &mut self.device_rngs[i]);
            out.push((o.cost, o.failure));
            self.states[i] = o.next;
        }
        self.time += 1;
        out
    }

    /// Behavior-policy action for every device, drawn from per-device policy streams.
    pub fn behavior_actions(&self, policy_rngs: &mut [RngStream]) -> Vec<MaintenanceAction> {
        self.states.iter().zip(policy_rngs.iter_mut()).map(|(s, r)| behavior_policy(&self.cfg, s, r)).collect()
    }
}

/// Logged fleet history under the behavior policy: `devices × steps` records,
/// device-major order.
pub fn generate_dataset(cfg: &FleetConfig) -> Vec<Record> {
    let mut fleet = Fleet::new(cfg, cfg.seed, "dataset", true);
    let root = RngStream::new(cfg.seed, "behavior");
    let mut policy_rngs: Vec<RngStream> = (0..cfg.devices).map(|i| root.derive(&format!("device{}", i))).collect();
    let mut per_device: Vec<Vec<Record>> = (0..cfg.devices).map(|_| Vec::with_capacity(cfg.steps)).collect();
    for t in 0..cfg.steps {
        let actions = fleet.behavior_actions(&mut policy_rngs);
        let before: Vec<DeviceState> = fleet.states().to_vec();
        let outcomes = fleet.step(&actions);
        for (i, s) in before.iter().enumerate() {
            per_device[i].push(Record {
                device_id: s.device_id,
                time_step: t,
                group_id: s.group_id,
                sensors: s.sensors,
                action: actions[i],
                cost: outcomes[i].0,
                failed: s.failed,
            });
        }
    }
    per_device.into_iter().flatten().collect()
}

/// Single-device environment with its own group-shock draws, for tabular learning.
#[derive(Debug, Clone)]
pub struct DeviceEnv {
    cfg: FleetConfig,
    state: DeviceState,
    rng: RngStream,
    shock: Normal<f64>,
}

impl DeviceEnv {
    pub fn new(cfg: &FleetConfig, seed: u64) -> Self {
        let mut rng = RngStream::new(seed, "device-env");
        let state = initial_state(cfg, 0, 0, 0.0, &mut rng);
        let shock = Normal::new(0.0, cfg.group_shock).expect("finite shock sd");
        Self { cfg: cfg.clone(), state, rng, shock }
    }

    pub fn state(&self) -> &DeviceState {
        &self.state
    }

    pub fn reset(&mut self, wear: f64) {
        self.state = initial_state(&self.cfg, 0, 0, wear, &mut self.rng);
    }

    pub fn reset_random(&mut self) {
        let w = self.rng.uniform();
        self.state = initial_state(&self.cfg, 0, 0, w, &mut self.rng);
        if self.rng.uniform() < 0.1 {
            self.state.failed = true;
            self.state.sensors[4] = 1.0;
        }
    }

    pub fn step(&mut self, action: MaintenanceAction) -> (f64, bool) {
        let shock = self.shock.sample(&mut self.rng);
        let o = step(&self.cfg, &self.state, action, shock, &mut self.rng);
        self.state = o.next;
        (o.cost, o.failure)
    }

    pub fn rng(&mut self) -> &mut RngStream {
        &mut self.rng
    }
}
