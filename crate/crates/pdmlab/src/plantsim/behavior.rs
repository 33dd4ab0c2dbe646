use super::{DeviceState, FleetConfig, MaintenanceAction};
use crate::numerics::RngStream;

/// Action probabilities of the logging heuristic: idle below the device's
/// maintenance threshold, mostly minor maintenance past it, escalating past a
/// second threshold, and replacement of failed units with high probability.
pub fn behavior_probs(cfg: &FleetConfig, state: &DeviceState) -> [f64; 4] {
    if state.failed {
        let r = cfg.behavior_failed_replace;
        let q = 1.0 - r;
        return [q * 5.0 / 12.0, q * 3.0 / 12.0, q * 4.0 / 12.0, r];
    }
    let (p, mix) = if state.wear < cfg.behavior_threshold(state.device_id) {
        (cfg.behavior_idle_noise, [0.6, 0.3, 0.1])
    } else if state.wear < cfg.behavior_escalation {
        (cfg.behavior_maintain_prob, [0.85, 0.12, 0.03])
    } else {
        (cfg.behavior_maintain_prob, [0.3, 0.3, 0.4])
    };
    [1.0 - p, p * mix[0], p * mix[1], p * mix[2]]
}

/// Samples the logging heuristic.
pub fn behavior_policy(cfg: &FleetConfig, state: &DeviceState, rng: &mut RngStream) -> MaintenanceAction {
    let probs = behavior_probs(cfg, state);
    let u = rng.uniform();
    let mut acc = 0.0;
    for (a, p) in MaintenanceAction::ALL.iter().zip(probs) {
        acc += p;
        if u < acc {
            return *a;
        }
    }
    MaintenanceAction::Replace
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plantsim::initial_state;

    #[test]
    fn healthy_new_device_mostly_idle() {
        let cfg = FleetConfig::default();
        let mut rng = RngStream::new(0, "b");
        let s = initial_state(&cfg, 0, 0, 0.0, &mut rng);
        let p = behavior_probs(&cfg, &s);
        assert!(p[0] >= 0.95);
        let n = 20_000;
        let idle = (0..n).filter(|_| behavior_policy(&cfg, &s, &mut rng) == MaintenanceAction::DoNothing).count();
        assert!(idle as f64 / n as f64 >= 0.95);
    }

    #[test]
    fn failed_device_mostly_replaced() {
        let cfg = FleetConfig::default();
        let mut rng = RngStream::new(0, "b");
        let mut s = initial_state(&cfg, 0, 0, 0.7, &mut rng);
        s.failed = true;
        let p = behavior_probs(&cfg, &s);
        assert!(p[3] >= 0.8);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fixed_seed_fixed_actions() {
        let cfg = FleetConfig::default();
        let s = initial_state(&cfg, 0, 0, 0.3, &mut RngStream::new(0, "s"));
        let run = |seed| {
            let mut rng = RngStream::new(seed, "b");
            (0..50).map(|_| behavior_policy(&cfg, &s, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(run(9), run(9));
    }
}
