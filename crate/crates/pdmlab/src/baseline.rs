//! Seven-level wear discretization, tabular Q-learning, and a value-iteration
//! oracle for small explicit MDPs.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{invalid, Error, Result};
use crate::kv_config;
use crate::plantsim::{DeviceEnv, DeviceState, FleetConfig, MaintenanceAction};
use crate::numerics::RngStream;

pub const N_LEVELS: usize = 7;
pub const N_ACTIONS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WearLevel(u8);

impl WearLevel {
    pub const FAILED: WearLevel = WearLevel(6);

    pub fn new(level: usize) -> Result<Self> {
        if level >= N_LEVELS {
            return invalid(format!("wear level {} out of range 0..=6", level));
        }
        Ok(Self(level as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> String {
        format!("Wear_{}", self.0)
    }

    pub fn all() -> impl Iterator<Item = WearLevel> {
        (0..N_LEVELS as u8).map(WearLevel)
    }
}

/// Uniform bins of width 1/7; a failed device is level 6.
pub fn discretize_wear(state: &DeviceState) -> WearLevel {
    discretize(state.wear, state.failed)
}

pub fn discretize(wear: f64, failed: bool) -> WearLevel {
    if failed {
        return WearLevel::FAILED;
    }
    let l = (wear.clamp(0.0, 1.0) * N_LEVELS as f64).floor() as usize;
    WearLevel(l.min(N_LEVELS - 1) as u8)
}

/// Action-value table with visit counts; rows are states.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
    visits: Vec<u64>,
}

impl QTable {
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        Self { n_states, n_actions, values: vec![0.0; n_states * n_actions], visits: vec![0; n_states * n_actions] }
    }

    /// The 7 × 4 wear-level table.
    pub fn wear_table() -> Self {
        Self::new(N_LEVELS, N_ACTIONS)
    }

    pub fn from_values(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_states * n_actions {
            return invalid("Q value count does not match table shape");
        }
        Ok(Self { n_states, n_actions, values, visits: vec![0; n_states * n_actions] })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    pub fn visits(&self, s: usize, a: usize) -> u64 {
        self.visits[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn max(&self, s: usize) -> f64 {
        self.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Greedy action; exact ties go to the lower index.
    pub fn argmax(&self, s: usize) -> usize {
        argmax_low(self.row(s))
    }

    /// `Q(s,a) += α (r + γ max Q(s',·) − Q(s,a))`; `next = None` for a terminal transition.
    pub fn update(&mut self, s: usize, a: usize, r: f64, next: Option<usize>, alpha: f64, gamma: f64) {
        let boot = next.map_or(0.0, |n| self.max(n));
        let i = s * self.n_actions + a;
        self.values[i] += alpha * (r + gamma * boot - self.values[i]);
        self.visits[i] += 1;
    }
}

fn argmax_low(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Per-level action; `None` marks a level that could not be sampled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyTable {
    pub actions: Vec<Option<MaintenanceAction>>,
}

impl PolicyTable {
    pub fn complete(actions: [MaintenanceAction; N_LEVELS]) -> Self {
        Self { actions: actions.iter().map(|&a| Some(a)).collect() }
    }

    pub fn action(&self, level: WearLevel) -> Option<MaintenanceAction> {
        self.actions[level.index()]
    }

    /// Severity never decreases with wear and every level is sampled.
    pub fn is_monotone(&self) -> bool {
        self.actions.iter().all(Option::is_some) && self.actions.windows(2).all(|w| w[0] <= w[1])
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (l, a) in self.actions.iter().enumerate() {
            let name = a.map_or("unsampled", |a| a.name());
            let _ = writeln!(s, "Wear_{},{}", l, name);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut actions = Vec::new();
        for (i, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
            let (lvl, act) = line
                .split_once(',')
                .ok_or_else(|| Error::Parse { row: i + 1, msg: format!("expected `level,action`, got `{}`", line) })?;
            if lvl.trim() != format!("Wear_{}", i) {
                return Err(Error::Parse { row: i + 1, msg: format!("expected Wear_{}, got `{}`", i, lvl) });
            }
            let act = act.trim();
            actions.push(if act == "unsampled" {
                None
            } else {
                Some(MaintenanceAction::from_name(act).map_err(|e| Error::Parse { row: i + 1, msg: e.to_string() })?)
            });
        }
        if actions.len() != N_LEVELS {
            return Err(Error::Parse { row: actions.len(), msg: format!("expected {} levels", N_LEVELS) });
        }
        Ok(Self { actions })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Argmax per level of a 7 × 4 table, ties toward lower severity.
pub fn greedy_policy(q: &QTable) -> Result<PolicyTable> {
    if q.n_states != N_LEVELS || q.n_actions != N_ACTIONS {
        return invalid("greedy_policy expects a 7×4 wear table");
    }
    let actions = (0..N_LEVELS)
        .map(|s| MaintenanceAction::from_index(q.argmax(s)).map(Some))
        .collect::<Result<_>>()?;
    Ok(PolicyTable { actions })
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct QLearningConfig {
    pub episodes: usize,
    pub episode_len: usize,
    pub gamma: f64,
    pub alpha_start: f64,
    pub alpha_end: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub seed: u64,
}

impl Default for QLearningConfig {
    fn default() -> Self {
        Self {
            episodes: 3000,
            episode_len: 200,
            gamma: 0.99,
            alpha_start: 0.5,
            alpha_end: 0.05,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            seed: 0,
        }
    }
}

kv_config!(QLearningConfig, "qlearn", {
    "episodes" => episodes,
    "episode_len" => episode_len,
    "gamma" => gamma,
    "alpha_start" => alpha_start,
    "alpha_end" => alpha_end,
    "epsilon_start" => epsilon_start,
    "epsilon_end" => epsilon_end,
    "seed" => seed,
});

impl QLearningConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("qlearn: {}", m)));
        if self.episodes == 0 || self.episode_len == 0 {
            return bad("episodes and episode_len must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0,1]");
        }
        for v in [self.alpha_start, self.alpha_end, self.epsilon_start, self.epsilon_end] {
            if !(0.0..=1.0).contains(&v) {
                return bad("learning and exploration rates must lie in [0,1]");
            }
        }
        Ok(())
    }

    /// ε decays linearly over the first half of the episodes, then holds.
    pub fn epsilon(&self, episode: usize) -> f64 {
        let half = (self.episodes / 2).max(1) as f64;
        let f = (episode as f64 / half).min(1.0);
        self.epsilon_start + f * (self.epsilon_end - self.epsilon_start)
    }

    /// α decays linearly over all episodes.
    pub fn alpha(&self, episode: usize) -> f64 {
        let f = episode as f64 / (self.episodes.max(2) - 1) as f64;
        self.alpha_start + f.min(1.0) * (self.alpha_end - self.alpha_start)
    }
}

fn epsilon_greedy(q: &QTable, s: usize, eps: f64, rng: &mut RngStream) -> usize {
    if rng.uniform() < eps {
        ((rng.uniform() * q.n_actions as f64) as usize).min(q.n_actions - 1)
    } else {
        q.argmax(s)
    }
}

/// Online tabular Q-learning against the single-device simulator, with
/// rewards = −cost and wear levels as states. Episodes start from a random
/// wear (occasionally already failed) so every level is visited.
pub fn q_learning(fleet: &FleetConfig, cfg: &QLearningConfig) -> Result<QTable> {
    cfg.validate()?;
    let mut env = DeviceEnv::new(fleet, cfg.seed);
    let mut rng = RngStream::new(cfg.seed, "qlearn/explore");
    let mut q = QTable::wear_table();
    for ep in 0..cfg.episodes {
        let (eps, alpha) = (cfg.epsilon(ep), cfg.alpha(ep));
        env.reset_random();
        let mut s = discretize_wear(env.state()).index();
        for _ in 0..cfg.episode_len {
            let a = epsilon_greedy(&q, s, eps, &mut rng);
            let (cost, _) = env.step(MaintenanceAction::from_index(a)?);
            let s2 = discretize_wear(env.state()).index();
            q.update(s, a, -cost, Some(s2), alpha, cfg.gamma);
            s = s2;
        }
    }
    Ok(q)
}

/// Offline replay variant: sweeps logged `(level, action, reward, next level)`
/// transitions with the same α schedule.
pub fn q_learning_offline(transitions: &[(usize, usize, f64, usize)], cfg: &QLearningConfig) -> Result<QTable> {
    cfg.validate()?;
    let mut q = QTable::wear_table();
    for ep in 0..cfg.episodes {
        let alpha = cfg.alpha(ep);
        for &(s, a, r, s2) in transitions {
            if s >= N_LEVELS || a >= N_ACTIONS || s2 >= N_LEVELS {
                return invalid("transition outside the wear table");
            }
            q.update(s, a, r, Some(s2), alpha, cfg.gamma);
        }
    }
    Ok(q)
}

/// A small MDP with explicit `P[s][a][s']` and `R[s][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplicitMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub transition: Vec<f64>,
    pub reward: Vec<f64>,
}

impl ExplicitMdp {
    pub fn new(n_states: usize, n_actions: usize, transition: Vec<f64>, reward: Vec<f64>) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return invalid("MDP needs at least one state and action");
        }
        if transition.len() != n_states * n_actions * n_states || reward.len() != n_states * n_actions {
            return invalid("MDP tensor sizes do not match its shape");
        }
        let m = Self { n_states, n_actions, transition, reward };
        m.check_stochastic()?;
        Ok(m)
    }

    pub fn p(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + s2]
    }

    pub fn r(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    fn check_stochastic(&self) -> Result<()> {
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let row = &self.transition[(s * self.n_actions + a) * self.n_states..][..self.n_states];
                let sum: f64 = row.iter().sum();
                if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                    return invalid(format!("transition row (s={}, a={}) is not a distribution (sum {})", s, a, sum));
                }
            }
        }
        if self.reward.iter().any(|r| !r.is_finite()) {
            return invalid("non-finite reward");
        }
        Ok(())
    }

    fn q_value(&self, v: &[f64], s: usize, a: usize, gamma: f64) -> f64 {
        self.r(s, a) + gamma * (0..self.n_states).map(|s2| self.p(s, a, s2) * v[s2]).sum::<f64>()
    }

    /// Samples a successor state.
    pub fn sample_next(&self, s: usize, a: usize, rng: &mut RngStream) -> usize {
        let u = rng.uniform();
        let mut acc = 0.0;
        for s2 in 0..self.n_states {
            acc += self.p(s, a, s2);
            if u < acc {
                return s2;
            }
        }
        self.n_states - 1
    }

    /// Exact discounted values of a deterministic policy (Gaussian elimination on `(I − γP)V = R`).
    pub fn evaluate_policy(&self, policy: &[usize], gamma: f64) -> Result<Vec<f64>> {
        let n = self.n_states;
        if policy.len() != n || policy.iter().any(|&a| a >= self.n_actions) {
            return invalid("policy does not match the MDP");
        }
        let mut m = vec![0.0; n * (n + 1)];
        for s in 0..n {
            for s2 in 0..n {
                m[s * (n + 1) + s2] = if s == s2 { 1.0 } else { 0.0 } - gamma * self.p(s, policy[s], s2);
            }
            m[s * (n + 1) + n] = self.r(s, policy[s]);
        }
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&a, &b| m[a * (n + 1) + col].abs().total_cmp(&m[b * (n + 1) + col].abs()))
                .expect("non-empty range");
            if m[piv * (n + 1) + col].abs() < 1e-14 {
                return Err(Error::State("singular policy-evaluation system (gamma = 1 with a recurrent policy?)".into()));
            }
            for k in 0..=n {
                m.swap(col * (n + 1) + k, piv * (n + 1) + k);
            }
            for r in 0..n {
                if r != col {
                    let f = m[r * (n + 1) + col] / m[col * (n + 1) + col];
                    for k in col..=n {
                        m[r * (n + 1) + k] -= f * m[col * (n + 1) + k];
                    }
                }
            }
        }
        Ok((0..n).map(|s| m[s * (n + 1) + n] / m[s * (n + 1) + s]).collect())
    }
}

/// Bellman-optimality iteration until the max value change is below `tol`.
/// Returns optimal values and the greedy policy (ties to the lower action
/// within 1e-9 relative).
pub fn value_iteration(mdp: &ExplicitMdp, gamma: f64, tol: f64) -> Result<(Vec<f64>, Vec<usize>)> {
    mdp.check_stochastic()?;
    if !(0.0..1.0).contains(&gamma) {
        return invalid("value iteration needs 0 <= gamma < 1");
    }
    let n = mdp.n_states;
    let mut v = vec![0.0; n];
    loop {
        let next: Vec<f64> = (0..n)
            .map(|s| (0..mdp.n_actions).map(|a| mdp.q_value(&v, s, a, gamma)).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let gap = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if gap < tol {
            break;
        }
    }
    let policy = (0..n)
        .map(|s| {
            let qs: Vec<f64> = (0..mdp.n_actions).map(|a| mdp.q_value(&v, s, a, gamma)).collect();
            let best = qs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let slack = 1e-9 * best.abs().max(1.0);
            qs.iter().position(|&q| q >= best - slack).expect("non-empty")
        })
        .collect();
    Ok((v, policy))
}

/// Q-learning on an explicit MDP with uniformly random episode starts.
pub fn q_learning_mdp(mdp: &ExplicitMdp, gamma: f64, cfg: &QLearningConfig) -> Result<QTable> {
    cfg.validate()?;
    let mut rng = RngStream::new(cfg.seed, "qlearn/mdp");
    let mut q = QTable::new(mdp.n_states, mdp.n_actions);
    for ep in 0..cfg.episodes {
        let (eps, alpha) = (cfg.epsilon(ep), cfg.alpha(ep));
        let mut s = ((rng.uniform() * mdp.n_states as f64) as usize).min(mdp.n_states - 1);
        for _ in 0..cfg.episode_len {
            let a = epsilon_greedy(&q, s, eps, &mut rng);
            let s2 = mdp.sample_next(s, a, &mut rng);
            q.update(s, a, mdp.r(s, a), Some(s2), alpha, gamma);
            s = s2;
        }
    }
    Ok(q)
}

/// Greedy policy of an arbitrary Q table.
pub fn greedy_actions(q: &QTable) -> Vec<usize> {
    (0..q.n_states()).map(|s| q.argmax(s)).collect()
}

/// Random MDP with Dirichlet(1) transition rows and rewards in `[-10, 0]`.
pub fn random_mdp(n_states: usize, n_actions: usize, rng: &mut RngStream) -> ExplicitMdp {
    let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        let row: Vec<f64> = (0..n_states).map(|_| -(1.0 - rng.uniform()).ln()).collect();
        let sum: f64 = row.iter().sum();
        transition.extend(row.iter().map(|x| x / sum));
    }
    let reward = (0..n_states * n_actions).map(|_| -10.0 * rng.uniform()).collect();
    ExplicitMdp::new(n_states, n_actions, transition, reward).expect("normalized rows")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn discretization_examples() {
        assert_eq!(discretize(0.0, false).index(), 0);
        assert_eq!(discretize(0.3, true).index(), 6);
        assert_eq!(discretize(0.5, false).index(), 3);
        assert_eq!(discretize(1.0, false).index(), 6);
    }

    proptest! {
        #[test]
        fn discretization_monotone(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(discretize(lo, false) <= discretize(hi, false));
        }

        #[test]
        fn greedy_invariant_to_positive_scaling(vals in proptest::collection::vec(-100.0f64..100.0, 28), k in 0.01f64..100.0) {
            let q = QTable::from_values(7, 4, vals.clone()).unwrap();
            let q2 = QTable::from_values(7, 4, vals.iter().map(|v| v * k).collect()).unwrap();
            prop_assert_eq!(greedy_policy(&q).unwrap(), greedy_policy(&q2).unwrap());
        }
    }

    #[test]
    fn single_update() {
        let mut q = QTable::new(3, 2);
        q.update(1, 0, -7.5, Some(2), 1.0, 0.0);
        assert_eq!(q.get(1, 0), -7.5);
        assert_eq!(q.visits(1, 0), 1);
    }

    #[test]
    fn tie_goes_to_do_nothing() {
        let mut vals = vec![-1.0; 28];
        vals[1] = 0.0;
        vals[0] = 0.0;
        let p = greedy_policy(&QTable::from_values(7, 4, vals).unwrap()).unwrap();
        assert_eq!(p.actions[0], Some(MaintenanceAction::DoNothing));
    }

    #[test]
    fn policy_text_roundtrip() {
        use MaintenanceAction::*;
        let p = PolicyTable::complete([DoNothing, DoNothing, MinorMaintenance, MinorMaintenance, MajorMaintenance, Replace, Replace]);
        let t = p.to_text();
        assert_eq!(t.lines().count(), 7);
        assert_eq!(t.lines().last(), Some("Wear_6,replace"));
        assert_eq!(PolicyTable::from_text(&t).unwrap(), p);
        assert!(p.is_monotone());
    }

    #[test]
    fn single_state_vi() {
        let m = ExplicitMdp::new(1, 2, vec![1.0, 1.0], vec![0.0, -5.0]).unwrap();
        let (v, p) = value_iteration(&m, 0.9, 1e-12).unwrap();
        assert!(v[0].abs() < 1e-12);
        assert_eq!(p, vec![0]);
    }

    #[test]
    fn deterministic_chain_closed_form() {
        // state 0 → 1 → 1 (absorbing); rewards r0 = -1, r1 = -2
        let m = ExplicitMdp::new(2, 1, vec![0.0, 1.0, 0.0, 1.0], vec![-1.0, -2.0]).unwrap();
        let g: f64 = 0.8;
        let (v, _) = value_iteration(&m, g, 1e-13).unwrap();
        let v1 = -2.0 / (1.0 - g);
        assert!((v[1] - v1).abs() < 1e-9);
        assert!((v[0] - (-1.0 + g * v1)).abs() < 1e-9);
    }

    #[test]
    fn non_stochastic_rows_rejected() {
        assert!(matches!(ExplicitMdp::new(1, 1, vec![0.5], vec![0.0]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn vi_matches_enumeration() {
        let mut rng = RngStream::new(11, "mdp");
        for _ in 0..5 {
            let m = random_mdp(5, 2, &mut rng);
            let (v, p) = value_iteration(&m, 0.9, 1e-12).unwrap();
            let mut best: Option<(Vec<usize>, Vec<f64>)> = None;
            for code in 0..32usize {
                let pol: Vec<usize> = (0..5).map(|s| (code >> s) & 1).collect();
                let vals = m.evaluate_policy(&pol, 0.9).unwrap();
                let better = match &best {
                    None => true,
                    Some((_, bv)) => vals.iter().sum::<f64>() > bv.iter().sum::<f64>() + 1e-9,
                };
                if better {
                    best = Some((pol, vals));
                }
            }
            let (bp, bv) = best.unwrap();
            assert_eq!(p, bp);
            for (a, b) in v.iter().zip(&bv) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn q_learning_matches_vi_small() {
        // hand-built 3-state, 2-action MDP
        let t = vec![
            0.9, 0.1, 0.0, /* s0 a0 */ 0.0, 0.0, 1.0, /* s0 a1 */
            0.0, 0.5, 0.5, /* s1 a0 */ 1.0, 0.0, 0.0, /* s1 a1 */
            0.0, 0.0, 1.0, /* s2 a0 */ 1.0, 0.0, 0.0, /* s2 a1 */
        ];
        let r = vec![-1.0, -4.0, -2.0, -3.0, -10.0, -6.0];
        let m = ExplicitMdp::new(3, 2, t, r).unwrap();
        let (_, p) = value_iteration(&m, 0.9, 1e-12).unwrap();
        let cfg = QLearningConfig { episodes: 20_000, episode_len: 20, alpha_end: 0.01, ..QLearningConfig::default() };
        let q = q_learning_mdp(&m, 0.9, &cfg).unwrap();
        assert_eq!(greedy_actions(&q), p);
    }

    #[test]
    fn contraction() {
        let m = random_mdp(4, 3, &mut RngStream::new(3, "c"));
        let g = 0.9;
        let mut v = vec![0.0; 4];
        let mut prev_gap = f64::INFINITY;
        for _ in 0..50 {
            let next: Vec<f64> = (0..4)
                .map(|s| (0..3).map(|a| m.q_value(&v, s, a, g)).fold(f64::NEG_INFINITY, f64::max))
                .collect();
            let gap = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(gap <= g * prev_gap + 1e-12);
            prev_gap = gap;
            v = next;
        }
    }
}
