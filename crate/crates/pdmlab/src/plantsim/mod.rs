//! Synthetic device fleet: degradation dynamics, failure hazard, costed
//! maintenance actions, a logged behavior policy, and CSV persistence.

mod behavior;
mod csvio;
mod sim;

pub use behavior::{behavior_policy, behavior_probs};
pub use csvio::{infer_fleet_config, read_csv, write_csv, CSV_HEADER};
pub use sim::{generate_dataset, hazard, initial_state, sensors_for, step, DeviceEnv, Fleet, StepOutcome};

use crate::error::{Error, Result};
use crate::kv_config;

pub const N_SENSORS: usize = 5;
pub const SENSOR_NAMES: [&str; N_SENSORS] = ["wear", "vibration", "temperature", "pressure", "error_rate"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum MaintenanceAction {
    DoNothing = 0,
    MinorMaintenance = 1,
    MajorMaintenance = 2,
    Replace = 3,
}

impl MaintenanceAction {
    pub const ALL: [MaintenanceAction; 4] = [
        MaintenanceAction::DoNothing,
        MaintenanceAction::MinorMaintenance,
        MaintenanceAction::MajorMaintenance,
        MaintenanceAction::Replace,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("action code {} out of range 0..=3", i)))
    }

    pub fn name(self) -> &'static str {
        match self {
            MaintenanceAction::DoNothing => "do_nothing",
            MaintenanceAction::MinorMaintenance => "minor_maintenance",
            MaintenanceAction::MajorMaintenance => "major_maintenance",
            MaintenanceAction::Replace => "replace",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown action name `{}`", s)))
    }
}

/// Fleet and dynamics parameters. All numeric dynamics are calibration choices.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FleetConfig {
    pub devices: usize,
    pub steps: usize,
    pub groups: usize,
    pub action_costs: [f64; 4],
    pub downtime_penalty: f64,
    /// Mean wear added per step.
    pub wear_rate: f64,
    /// Per-device, per-step wear noise σ.
    pub wear_noise: f64,
    /// Per-group, per-step shared shock σ.
    pub group_shock: f64,
    /// Wear-independent failure probability per step.
    pub hazard_base: f64,
    /// Linear-in-wear failure probability slope.
    pub hazard_linear: f64,
    /// Amplitude of the logistic wear-out term.
    pub hazard_max: f64,
    pub hazard_steepness: f64,
    pub hazard_midpoint: f64,
    pub minor_repair: f64,
    pub major_repair: f64,
    /// Multiplier on the per-sensor noise levels.
    pub sensor_noise: f64,
    /// Dataset devices start at wear ~ U(0, initial_wear_max).
    pub initial_wear_max: f64,
    /// Behavior policy: maintenance threshold of the most diligent device.
    pub behavior_threshold_min: f64,
    /// Behavior policy: maintenance threshold of the most lax device.
    pub behavior_threshold_max: f64,
    /// Behavior policy: wear above which maintenance escalates to major/replace.
    pub behavior_escalation: f64,
    /// Behavior policy: maintenance probability above the threshold.
    pub behavior_maintain_prob: f64,
    /// Behavior policy: maintenance probability below the threshold.
    pub behavior_idle_noise: f64,
    /// Behavior policy: replace probability for a failed device.
    pub behavior_failed_replace: f64,
    pub seed: u64,
}

impl Default for FleetConfig {
    fn default() -> Self {
        Self {
            devices: 50,
            steps: 2000,
            groups: 5,
            action_costs: [0.0, 100.0, 500.0, 2000.0],
            downtime_penalty: 3000.0,
            wear_rate: 0.015,
            wear_noise: 0.01,
            group_shock: 0.008,
            hazard_base: 0.012,
            hazard_linear: 0.05,
            hazard_max: 0.35,
            hazard_steepness: 15.0,
            hazard_midpoint: 0.75,
            minor_repair: 0.5,
            major_repair: 0.9,
            sensor_noise: 0.1,
            initial_wear_max: 0.3,
            behavior_threshold_min: 0.01,
            behavior_threshold_max: 0.7,
            behavior_escalation: 0.65,
            behavior_maintain_prob: 0.9,
            behavior_idle_noise: 0.03,
            behavior_failed_replace: 0.88,
            seed: 0,
        }
    }
}

kv_config!(FleetConfig, "fleet", {
    "devices" => devices,
    "steps" => steps,
    "groups" => groups,
    "action_costs" => action_costs,
    "downtime_penalty" => downtime_penalty,
    "wear_rate" => wear_rate,
    "wear_noise" => wear_noise,
    "group_shock" => group_shock,
    "hazard_base" => hazard_base,
    "hazard_linear" => hazard_linear,
    "hazard_max" => hazard_max,
    "hazard_steepness" => hazard_steepness,
    "hazard_midpoint" => hazard_midpoint,
    "minor_repair" => minor_repair,
    "major_repair" => major_repair,
    "sensor_noise" => sensor_noise,
    "initial_wear_max" => initial_wear_max,
    "behavior_threshold_min" => behavior_threshold_min,
    "behavior_threshold_max" => behavior_threshold_max,
    "behavior_escalation" => behavior_escalation,
    "behavior_maintain_prob" => behavior_maintain_prob,
    "behavior_idle_noise" => behavior_idle_noise,
    "behavior_failed_replace" => behavior_failed_replace,
    "seed" => seed,
});

impl FleetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("fleet: {}", m)));
        if self.devices == 0 || self.groups == 0 || self.steps == 0 {
            return bad("devices, groups and steps must be >= 1");
        }
        let c = &self.action_costs;
        if c.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || c.windows(2).any(|w| w[0] > w[1]) {
            return bad("action costs must be non-negative and non-decreasing");
        }
        for (name, v) in [
            ("minor_repair", self.minor_repair),
            ("major_repair", self.major_repair),
            ("behavior_maintain_prob", self.behavior_maintain_prob),
            ("behavior_idle_noise", self.behavior_idle_noise),
            ("behavior_failed_replace", self.behavior_failed_replace),
            ("initial_wear_max", self.initial_wear_max),
            ("behavior_threshold_min", self.behavior_threshold_min),
            ("behavior_threshold_max", self.behavior_threshold_max),
            ("behavior_escalation", self.behavior_escalation),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(&format!("{} must lie in [0,1]", name));
            }
        }
        if self.behavior_threshold_min > self.behavior_threshold_max {
            return bad("behavior_threshold_min must not exceed behavior_threshold_max");
        }
        for (name, v) in [
            ("downtime_penalty", self.downtime_penalty),
            ("sensor_noise", self.sensor_noise),
            ("wear_noise", self.wear_noise),
            ("group_shock", self.group_shock),
            ("hazard_base", self.hazard_base),
            ("hazard_linear", self.hazard_linear),
            ("hazard_max", self.hazard_max),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(&format!("{} must be finite and >= 0", name));
            }
        }
        Ok(())
    }

    /// Behavior-policy maintenance threshold of a device. Thresholds spread
    /// quadratically in device id, so most devices are kept at low wear while
    /// a few run far into degradation.
    pub fn behavior_threshold(&self, device: usize) -> f64 {
        let frac = if self.devices > 1 { device as f64 / (self.devices - 1) as f64 } else { 0.0 };
        self.behavior_threshold_min + (self.behavior_threshold_max - self.behavior_threshold_min) * frac * frac
    }

    pub fn group_of(&self, device: usize) -> usize {
        device % self.groups
    }
}

/// Live state of one device.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceState {
    pub device_id: usize,
    pub group_id: usize,
    pub wear: f64,
    pub sensors: [f64; N_SENSORS],
    pub failed: bool,
    pub age: u64,
}

/// One logged row: observed state at `time_step`, the action taken there and
/// the cost incurred by that transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub device_id: usize,
    pub time_step: usize,
    pub group_id: usize,
    pub sensors: [f64; N_SENSORS],
    pub action: MaintenanceAction,
    pub cost: f64,
    pub failed: bool,
}

impl Record {
    pub fn wear(&self) -> f64 {
        self.sensors[0]
    }
}
