use pdmlab::baseline::{
    discretize, greedy_actions, q_learning_mdp, random_mdp, value_iteration, PolicyTable, QLearningConfig, N_LEVELS,
};
use pdmlab::numerics::RngStream;
use pdmlab::plantsim::MaintenanceAction;
use proptest::prelude::*;

#[test]
fn value_iteration_is_a_fixed_point() {
    let mut rng = RngStream::new(5, "mdp");
    for _ in 0..5 {
        let m = random_mdp(4, 3, &mut rng);
        let (v, p) = value_iteration(&m, 0.95, 1e-12).unwrap();
        let vp = m.evaluate_policy(&p, 0.95).unwrap();
        for (a, b) in v.iter().zip(&vp) {
            assert!((a - b).abs() < 1e-8);
        }
    }
}

#[test]
fn q_learning_recovers_optimal_policy() {
    let mut rng = RngStream::new(8, "mdp");
    let m = random_mdp(3, 2, &mut rng);
    let (_, p) = value_iteration(&m, 0.9, 1e-12).unwrap();
    let cfg = QLearningConfig { episodes: 50_000, episode_len: 20, gamma: 0.9, alpha_end: 0.001, ..QLearningConfig::default() };
    assert_eq!(greedy_actions(&q_learning_mdp(&m, 0.9, &cfg).unwrap()), p);
}

#[test]
fn policy_table_monotonicity() {
    use MaintenanceAction::*;
    let good = PolicyTable::complete([DoNothing, DoNothing, MinorMaintenance, MinorMaintenance, MajorMaintenance, Replace, Replace]);
    assert!(good.is_monotone());
    let bad = PolicyTable::complete([DoNothing, MinorMaintenance, DoNothing, DoNothing, DoNothing, DoNothing, Replace]);
    assert!(!bad.is_monotone());
    assert_eq!(PolicyTable::from_text(&good.to_text()).unwrap(), good);
}

proptest! {
    #[test]
    fn wear_bins_have_width_one_seventh(w in 0.0f64..1.0) {
        prop_assert_eq!(discretize(w, true).index(), N_LEVELS - 1);
        let l = discretize(w, false).index();
        prop_assert!(l as f64 / 7.0 <= w && (w < (l + 1) as f64 / 7.0 || l == N_LEVELS - 1));
    }
}
