use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;

use super::experience::Experience;
use super::network::ActorCritic;
use crate::error::{invalid, Error, Result};
use crate::kv_config;
use crate::numerics::{adam_step, AdamConfig, Parameter, RngStream, Standardizer, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PpoConfig {
    pub clip: f64,
    pub gamma: f64,
    /// Inner epochs K per iteration.
    pub epochs: usize,
    /// Experience samples drawn per iteration (without replacement).
    pub sample_cap: usize,
    pub iterations: usize,
    pub c1: f64,
    pub c2: f64,
    pub lr: f64,
    /// Per-iteration multiplier on the learning rate (1 keeps it constant).
    pub lr_decay: f64,
    pub minibatch: usize,
    pub adv_eps: f64,
    pub hidden: usize,
    /// Multiplier applied to rewards before advantage and target computation.
    pub reward_scale: f64,
    /// Stop bootstrapping at transitions into a failed state.
    pub terminal_on_failure: bool,
    /// Minibatch steps of fitted TD evaluation of the critic before the
    /// first iteration.
    pub critic_warmup_steps: usize,
    pub critic_warmup_lr: f64,
    /// Minibatch steps of behavior cloning (cross-entropy on the logged
    /// actions) that initialize the actor before the first iteration.
    pub bc_steps: usize,
    pub bc_lr: f64,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            gamma: 0.99,
            epochs: 4,
            sample_cap: 1024,
            iterations: 20,
            c1: 0.5,
            c2: 0.01,
            lr: 2e-3,
            lr_decay: 0.7,
            minibatch: 256,
            adv_eps: 1e-8,
            hidden: 64,
            reward_scale: 1e-3,
            terminal_on_failure: false,
            critic_warmup_steps: 12000,
            critic_warmup_lr: 1e-3,
            bc_steps: 1200,
            bc_lr: 1e-3,
            seed: 0,
        }
    }
}

kv_config!(PpoConfig, "ppo", {
    "clip" => clip,
    "gamma" => gamma,
    "epochs" => epochs,
    "sample_cap" => sample_cap,
    "iterations" => iterations,
    "c1" => c1,
    "c2" => c2,
    "lr" => lr,
    "lr_decay" => lr_decay,
    "minibatch" => minibatch,
    "adv_eps" => adv_eps,
    "hidden" => hidden,
    "reward_scale" => reward_scale,
    "terminal_on_failure" => terminal_on_failure,
    "critic_warmup_steps" => critic_warmup_steps,
    "critic_warmup_lr" => critic_warmup_lr,
    "bc_steps" => bc_steps,
    "bc_lr" => bc_lr,
    "seed" => seed,
});

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("ppo: {}", m)));
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad("clip must lie in (0,1)");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0,1]");
        }
        if self.epochs == 0 || self.sample_cap == 0 || self.iterations == 0 || self.minibatch == 0 || self.hidden == 0 {
            return bad("epochs, sample_cap, iterations, minibatch and hidden must be >= 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return bad("lr and reward_scale must be > 0");
        }
        if !(self.critic_warmup_lr > 0.0 && self.critic_warmup_lr.is_finite()) || !(self.bc_lr > 0.0 && self.bc_lr.is_finite()) {
            return bad("critic_warmup_lr and bc_lr must be > 0");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must lie in (0,1]");
        }
        Ok(())
    }
}

/// One-step TD target and advantage: `Q̂ = r + γ V' (1 − done)`, `A = Q̂ − V`.
pub fn advantage(r: f64, v: f64, v_next: f64, done: bool, gamma: f64) -> (f64, f64) {
    let q = r + if done { 0.0 } else { gamma * v_next };
    (q, q - v)
}

/// `(x − mean) / (std + eps)` with the population std.
pub fn normalize(xs: &[f64], eps: f64) -> Vec<f64> {
    if xs.is_empty() {
        return Vec::new();
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
    xs.iter().map(|x| (x - mean) / (std + eps)).collect()
}

/// k1 estimator `mean(logp_old − logp_new)` over taken actions.
pub fn approx_kl(logp_old: &[f64], logp_new: &[f64]) -> Result<f64> {
    if logp_old.len() != logp_new.len() || logp_old.is_empty() {
        return invalid("approx_kl needs equal, non-empty batches");
    }
    Ok(logp_old.iter().zip(logp_new).map(|(a, b)| a - b).sum::<f64>() / logp_old.len() as f64)
}

/// A minibatch with normalized states and precomputed targets.
#[derive(Debug, Clone)]
pub struct PpoBatch {
    /// `[B, state_dim]`, already normalized.
    pub states: Tensor,
    pub actions: Vec<usize>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub targets: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoLosses {
    pub total: f64,
    pub actor: f64,
    pub critic: f64,
    pub entropy: f64,
}

/// Vars of the recorded loss terms.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub actor: Var,
    pub critic: Var,
    pub entropy: Var,
    pub log_probs: Var,
}

/// Records `L_total = −L_actor + c1 L_critic − c2 L_entropy` for a batch.
pub fn record_ppo_losses(tape: &mut Tape, vars: &[Var], batch: &PpoBatch, clip: f64, c1: f64, c2: f64) -> Result<LossVars> {
    let b = batch.actions.len();
    if b == 0 || batch.old_log_probs.len() != b || batch.advantages.len() != b || batch.targets.len() != b {
        return invalid("inconsistent PPO batch");
    }
    let s = tape.leaf(batch.states.clone());
    let (logp, v) = ActorCritic::record(tape, s, vars)?;
    let lp = tape.gather(logp, &batch.actions)?;
    let old = tape.leaf(Tensor::vector(batch.old_log_probs.clone()));
    let adv = tape.leaf(Tensor::vector(batch.advantages.clone()));
    let diff = tape.sub(lp, old)?;
    let ratio = tape.exp(diff)?;
    let s1 = tape.mul(ratio, adv)?;
    let clipped = tape.clamp(ratio, 1.0 - clip, 1.0 + clip)?;
    let s2 = tape.mul(clipped, adv)?;
    let surr = tape.minimum(s1, s2)?;
    let actor = tape.mean(surr)?;
    let targets = tape.leaf(Tensor::vector(batch.targets.clone()));
    let critic = tape.mse(v, targets)?;
    let p = tape.exp(logp)?;
    let plogp = tape.mul(p, logp)?;
    let sum = tape.sum(plogp)?;
    let entropy = tape.scale(sum, -1.0 / b as f64)?;
    let na = tape.scale(actor, -1.0)?;
    let cc = tape.scale(critic, c1)?;
    let ce = tape.scale(entropy, -c2)?;
    let t1 = tape.add(na, cc)?;
    let total = tape.add(t1, ce)?;
    Ok(LossVars { total, actor, critic, entropy, log_probs: lp })
}

/// Loss values for a batch under `params` (no gradient).
pub fn ppo_losses(batch: &PpoBatch, params: &ActorCritic, cfg: &PpoConfig) -> Result<PpoLosses> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.tensors().into_iter().map(|t| tape.leaf(t)).collect();
    let l = record_ppo_losses(&mut tape, &vars, batch, cfg.clip, cfg.c1, cfg.c2)?;
    Ok(PpoLosses {
        total: tape.value(l.total).item(),
        actor: tape.value(l.actor).item(),
        critic: tape.value(l.critic).item(),
        entropy: tape.value(l.entropy).item(),
    })
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub mean_advantage: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainMetrics {
    pub rows: Vec<IterationMetrics>,
}

pub const METRICS_HEADER: &str = "iteration,actor_loss,critic_loss,entropy,approx_kl,mean_advantage,seconds";

impl TrainMetrics {
    /// CSV text; with `timing = false` the seconds column is written as 0 so
    /// that reruns are byte-identical.
    pub fn to_csv(&self, timing: bool) -> String {
        let mut s = String::from(METRICS_HEADER);
        s.push('\n');
        for r in &self.rows {
            let secs = if timing { r.seconds } else { 0.0 };
            let _ = writeln!(
                s,
                "{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.6}",
                r.iteration, r.actor_loss, r.critic_loss, r.entropy, r.approx_kl, r.mean_advantage, secs
            );
        }
        s
    }

    pub fn kl(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.approx_kl).collect()
    }
}

/// Observer for the first minibatch ratios of each iteration (testing hook).
pub type RatioProbe<'a> = Option<&'a mut dyn FnMut(usize, &[f64])>;

/// Clipped-PPO over a frozen experience pool.
///
/// The state normalizer is refitted on the pool's states. Each iteration draws
/// up to `sample_cap` tuples without replacement, refreshes old log-probs,
/// values and advantages under the current parameters, and runs `epochs`
/// passes of shuffled minibatch Adam updates on `L_total`.
pub fn train_ppo(exp: &Experience, init: &ActorCritic, cfg: &PpoConfig) -> Result<(ActorCritic, TrainMetrics)> {
    train_ppo_probe(exp, init, cfg, None)
}

pub fn train_ppo_probe(
    exp: &Experience,
    init: &ActorCritic,
    cfg: &PpoConfig,
    mut probe: RatioProbe<'_>,
) -> Result<(ActorCritic, TrainMetrics)> {
    cfg.validate()?;
    if exp.is_empty() {
        return invalid("train_ppo: empty experience");
    }
    if exp.state_dim() != init.state_dim() {
        return invalid(format!("experience states of dim {} vs network input {}", exp.state_dim(), init.state_dim()));
    }
    let mut ac = init.clone();
    ac.norm = Standardizer::fit(exp.states.iter().map(Vec::as_slice), exp.state_dim())?;
    let normed: Vec<Vec<f64>> = exp.states.iter().map(|s| ac.norm.apply(s)).collect();
    let mut params: Vec<Parameter> = ac.tensors().into_iter().map(Parameter::new).collect();
    let root = RngStream::new(cfg.seed, "ppo");
    let mut sample_rng = root.derive("sample");
    let mut shuffle_rng = root.derive("shuffle");
    let mut metrics = TrainMetrics::default();
    let n = exp.len();
    let dim = exp.state_dim();
    // Evaluation without normalization: the pool is already normalized.
    let eval_net = |ac: &ActorCritic| {
        let mut a = ac.clone();
        a.norm = Standardizer::identity(dim);
        a
    };

    clone_behavior(exp, &normed, &mut params, cfg, &mut shuffle_rng)?;
    warm_up_critic(exp, &normed, &mut params, cfg, &mut shuffle_rng)?;
    ac.set_tensors(params.iter().map(|p| p.value.clone()).collect())?;
    for it in 0..cfg.iterations {
        let start = Instant::now();
        let idx: Vec<usize> = rand::seq::index::sample(&mut sample_rng, n, cfg.sample_cap.min(n)).into_vec();
        let net = eval_net(&ac);
        let mut old_lp = Vec::with_capacity(idx.len());
        let mut targets = Vec::with_capacity(idx.len());
        let mut raw_adv = Vec::with_capacity(idx.len());
        for &i in &idx {
            let t = &exp.tuples[i];
            old_lp.push(net.actor_forward(&normed[t.state])?[t.action.index()]);
            let v = net.critic_forward(&normed[t.state])?;
            let vn = net.critic_forward(&normed[t.next_state])?;
            let done = cfg.terminal_on_failure && t.done;
            let (q, a) = advantage(t.reward * cfg.reward_scale, v, vn, done, cfg.gamma);
            targets.push(q);
            raw_adv.push(a);
        }
        let adv = normalize(&raw_adv, cfg.adv_eps);
        let lr = cfg.lr * cfg.lr_decay.powi(it as i32);
        let adam = AdamConfig::with_lr(lr);
        let mut order: Vec<usize> = (0..idx.len()).collect();
        let (mut sa, mut sc, mut se, mut count) = (0.0, 0.0, 0.0, 0usize);
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut shuffle_rng);
            for (mb, chunk) in order.chunks(cfg.minibatch).enumerate() {
                let batch = PpoBatch {
                    states: Tensor::matrix(chunk.len(), dim, chunk.iter().flat_map(|&j| normed[exp.tuples[idx[j]].state].iter().copied()).collect())?,
                    actions: chunk.iter().map(|&j| exp.tuples[idx[j]].action.index()).collect(),
                    old_log_probs: chunk.iter().map(|&j| old_lp[j]).collect(),
                    advantages: chunk.iter().map(|&j| adv[j]).collect(),
                    targets: chunk.iter().map(|&j| targets[j]).collect(),
                };
                let mut tape = Tape::new();
                let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.value.clone())).collect();
                let l = record_ppo_losses(&mut tape, &vars, &batch, cfg.clip, cfg.c1, cfg.c2)?;
                if epoch == 0 && mb == 0 {
                    if let Some(p) = probe.as_mut() {
                        let ratios: Vec<f64> = tape
                            .value(l.log_probs)
                            .data()
                            .iter()
                            .zip(&batch.old_log_probs)
                            .map(|(a, b)| (a - b).exp())
                            .collect();
                        p(it, &ratios);
                    }
                }
                sa += tape.value(l.actor).item();
                sc += tape.value(l.critic).item();
                se += tape.value(l.entropy).item();
                count += 1;
                let mut grads = tape.backward(l.total)?;
                for (p, v) in params.iter_mut().zip(&vars) {
                    let g = grads.take(*v).unwrap_or_else(|| Tensor::zeros(p.value.shape()));
                    p.set_grad(g)?;
                }
                let mut refs: Vec<&mut Parameter> = params.iter_mut().collect();
                adam_step(&mut refs, &adam)?;
            }
        }
        ac.set_tensors(params.iter().map(|p| p.value.clone()).collect())?;
        let net = eval_net(&ac);
        let new_lp: Vec<f64> = idx
            .iter()
            .map(|&i| net.actor_forward(&normed[exp.tuples[i].state]).map(|l| l[exp.tuples[i].action.index()]))
            .collect::<Result<_>>()?;
        let kl = approx_kl(&old_lp, &new_lp)?;
        if !kl.is_finite() {
            return Err(Error::State(format!("approximate KL diverged at iteration {}", it)));
        }
        metrics.rows.push(IterationMetrics {
            iteration: it + 1,
            actor_loss: sa / count as f64,
            critic_loss: sc / count as f64,
            entropy: se / count as f64,
            approx_kl: kl,
            mean_advantage: raw_adv.iter().sum::<f64>() / raw_adv.len() as f64,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok((ac, metrics))
}

fn batch_values(critic: &[Parameter], rows: &[&[f64]]) -> Result<Vec<f64>> {
    let dim = critic[0].value.shape()[0];
    let mut tape = Tape::new();
    let vars: Vec<Var> = critic.iter().map(|p| tape.leaf(p.value.clone())).collect();
    let s = tape.leaf(Tensor::matrix(rows.len(), dim, rows.iter().flat_map(|r| r.iter().copied()).collect())?);
    let v = ActorCritic::record_critic(&mut tape, s, &vars)?;
    Ok(tape.value(v).data().to_vec())
}

/// Maximum-likelihood fit of the actor to the logged actions.
fn clone_behavior(
    exp: &Experience,
    normed: &[Vec<f64>],
    params: &mut [Parameter],
    cfg: &PpoConfig,
    rng: &mut RngStream,
) -> Result<()> {
    let adam = AdamConfig::with_lr(cfg.bc_lr);
    let dim = exp.state_dim();
    let mut order: Vec<usize> = (0..exp.len()).collect();
    let mut steps = 0;
    while steps < cfg.bc_steps {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.minibatch).take(cfg.bc_steps - steps) {
            steps += 1;
            let mut tape = Tape::new();
            let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.value.clone())).collect();
            let rows: Vec<f64> = chunk.iter().flat_map(|&j| normed[exp.tuples[j].state].iter().copied()).collect();
            let s = tape.leaf(Tensor::matrix(chunk.len(), dim, rows)?);
            let (logp, _) = ActorCritic::record(&mut tape, s, &vars)?;
            let actions: Vec<usize> = chunk.iter().map(|&j| exp.tuples[j].action.index()).collect();
            let lp = tape.gather(logp, &actions)?;
            let ll = tape.mean(lp)?;
            let nll = tape.scale(ll, -1.0)?;
            let mut grads = tape.backward(nll)?;
            for (p, var) in params[..4].iter_mut().zip(&vars) {
                let g = grads.take(*var).unwrap_or_else(|| Tensor::zeros(p.value.shape()));
                p.set_grad(g)?;
            }
            let mut refs: Vec<&mut Parameter> = params[..4].iter_mut().collect();
            adam_step(&mut refs, &adam)?;
        }
    }
    Ok(())
}

/// Fitted TD evaluation of the logged policy: each pass recomputes the
/// one-step targets over the whole pool, then takes shuffled minibatch Adam
/// steps on the critic alone.
fn warm_up_critic(
    exp: &Experience,
    normed: &[Vec<f64>],
    params: &mut [Parameter],
    cfg: &PpoConfig,
    rng: &mut RngStream,
) -> Result<()> {
    if cfg.critic_warmup_steps == 0 {
        return Ok(());
    }
    let adam = AdamConfig::with_lr(cfg.critic_warmup_lr);
    let dim = exp.state_dim();
    let mut order: Vec<usize> = (0..exp.len()).collect();
    let mut steps = 0;
    while steps < cfg.critic_warmup_steps {
        let next: Vec<&[f64]> = exp.tuples.iter().map(|t| normed[t.next_state].as_slice()).collect();
        let v_next = batch_values(&params[4..], &next)?;
        let targets: Vec<f64> = exp
            .tuples
            .iter()
            .zip(&v_next)
            .map(|(t, &vn)| advantage(t.reward * cfg.reward_scale, 0.0, vn, cfg.terminal_on_failure && t.done, cfg.gamma).0)
            .collect();
        order.shuffle(rng);
        for chunk in order.chunks(cfg.minibatch).take(cfg.critic_warmup_steps - steps) {
            let mut tape = Tape::new();
            let vars: Vec<Var> = params[4..].iter().map(|p| tape.leaf(p.value.clone())).collect();
            let rows: Vec<f64> = chunk.iter().flat_map(|&j| normed[exp.tuples[j].state].iter().copied()).collect();
            let s = tape.leaf(Tensor::matrix(chunk.len(), dim, rows)?);
            let v = ActorCritic::record_critic(&mut tape, s, &vars)?;
            let y = tape.leaf(Tensor::vector(chunk.iter().map(|&j| targets[j]).collect()));
            let loss = tape.mse(v, y)?;
            let mut grads = tape.backward(loss)?;
            for (p, var) in params[4..].iter_mut().zip(&vars) {
                let g = grads.take(*var).unwrap_or_else(|| Tensor::zeros(p.value.shape()));
                p.set_grad(g)?;
            }
            let mut refs: Vec<&mut Parameter> = params[4..].iter_mut().collect();
            adam_step(&mut refs, &adam)?;
            steps += 1;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, log_softmax};
    use crate::plantsim::MaintenanceAction;
    use crate::policy::ExperienceTuple;

    fn zero_net(dim: usize) -> ActorCritic {
        let mut ac = ActorCritic::init(dim, 8, &mut RngStream::new(0, "t")).unwrap();
        let zeros: Vec<Tensor> = ac.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        ac.set_tensors(zeros).unwrap();
        ac
    }

    fn batch(dim: usize, old: Vec<f64>, adv: Vec<f64>, rng: &mut RngStream) -> PpoBatch {
        let b = old.len();
        PpoBatch {
            states: Tensor::matrix(b, dim, (0..b * dim).map(|_| rng.normal()).collect()).unwrap(),
            actions: (0..b).map(|i| i % N).collect(),
            old_log_probs: old,
            advantages: adv,
            targets: vec![0.0; b],
        }
    }

    const N: usize = 4;

    fn synthetic(n: usize, dim: usize, seed: u64) -> Experience {
        let mut rng = RngStream::new(seed, "synthetic");
        let states: Vec<Vec<f64>> = (0..n + 1).map(|_| (0..dim).map(|_| rng.normal() * 3.0 + 1.0).collect()).collect();
        let tuples = (0..n)
            .map(|i| {
                let a = (rng.uniform() * 4.0) as usize % 4;
                ExperienceTuple {
                    state: i,
                    action: MaintenanceAction::from_index(a).unwrap(),
                    old_log_prob: -(4f64).ln(),
                    reward: -(states[i][0].abs() * 100.0 + a as f64 * 50.0),
                    next_state: i + 1,
                    done: rng.uniform() < 0.05,
                    device_id: 0,
                    time_step: i,
                }
            })
            .collect();
        Experience { states, tuples, skipped: 0 }
    }

    #[test]
    fn td_advantage_example() {
        let (q, a) = advantage(1.0, 1.0, 2.0, false, 0.99);
        assert!((q - 2.98).abs() < 1e-12 && (a - 1.98).abs() < 1e-12);
        assert_eq!(advantage(1.0, 1.0, 2.0, true, 0.99), (1.0, 0.0));
    }

    #[test]
    fn normalized_advantages_are_standard() {
        let z = normalize(&[1.0, 2.0, 3.0, 10.0], 1e-8);
        let m: f64 = z.iter().sum::<f64>() / 4.0;
        let v: f64 = z.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 4.0;
        assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-6);
        assert_eq!(normalize(&[5.0, 5.0], 1e-8), vec![0.0, 0.0]);
    }

    #[test]
    fn clipped_surrogate_and_uniform_entropy() {
        let mut rng = RngStream::new(1, "b");
        let lu = -(4f64).ln();
        let net = zero_net(3);
        let cfg = PpoConfig::default();
        // ratio 1.5 with A = 1 is capped at 1.2
        let b = batch(3, vec![lu - 1.5f64.ln()], vec![1.0], &mut rng);
        let l = ppo_losses(&b, &net, &cfg).unwrap();
        assert!((l.actor - 1.2).abs() < 1e-12, "{}", l.actor);
        assert!((l.entropy - 4f64.ln()).abs() < 1e-12);
        // negative advantage keeps the pessimistic unclipped term
        let b = batch(3, vec![lu - 1.5f64.ln()], vec![-1.0], &mut rng);
        assert!((ppo_losses(&b, &net, &cfg).unwrap().actor + 1.5).abs() < 1e-12);
    }

    fn actor_grads(b: &PpoBatch, net: &ActorCritic, clip: f64) -> Vec<Tensor> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = net.tensors().into_iter().map(|t| tape.leaf(t)).collect();
        let l = record_ppo_losses(&mut tape, &vars, b, clip, 0.0, 0.0).unwrap();
        let mut g = tape.backward(l.actor).unwrap();
        vars[..4].iter().zip(net.tensors()).map(|(v, t)| g.take(*v).unwrap_or_else(|| Tensor::zeros(t.shape()))).collect()
    }

    #[test]
    fn clip_dead_zone_has_no_actor_gradient() {
        let mut rng = RngStream::new(2, "b");
        let net = ActorCritic::init(5, 8, &mut rng).unwrap();
        let mut b = batch(5, vec![0.0; 6], vec![1.0; 6], &mut rng);
        for i in 0..6 {
            let cur = net.actor_forward(b.states.row(i)).unwrap()[b.actions[i]];
            b.old_log_probs[i] = cur - 1.5f64.ln();
        }
        for g in actor_grads(&b, &net, 0.2) {
            assert_eq!(g.max_abs(), 0.0);
        }
    }

    #[test]
    fn unit_ratio_gives_vanilla_policy_gradient() {
        let mut rng = RngStream::new(3, "b");
        let net = ActorCritic::init(5, 8, &mut rng).unwrap();
        let mut b = batch(5, vec![0.0; 8], (0..8).map(|i| i as f64 - 3.5).collect(), &mut rng);
        for i in 0..8 {
            b.old_log_probs[i] = net.actor_forward(b.states.row(i)).unwrap()[b.actions[i]];
        }
        let ppo = actor_grads(&b, &net, 0.2);
        // mean(A · log π(a|s))
        let mut tape = Tape::new();
        let vars: Vec<Var> = net.tensors().into_iter().map(|t| tape.leaf(t)).collect();
        let s = tape.leaf(b.states.clone());
        let (logp, _) = ActorCritic::record(&mut tape, s, &vars).unwrap();
        let lp = tape.gather(logp, &b.actions).unwrap();
        let adv = tape.leaf(Tensor::vector(b.advantages.clone()));
        let prod = tape.mul(lp, adv).unwrap();
        let pg = tape.mean(prod).unwrap();
        let mut g = tape.backward(pg).unwrap();
        for (v, p) in vars[..4].iter().zip(&ppo) {
            let vg = g.take(*v).unwrap();
            assert!(vg.sub(p).unwrap().max_abs() < 1e-12);
        }
    }

    #[test]
    fn total_loss_gradients_match_finite_differences() {
        for seed in 0..3 {
            let mut rng = RngStream::new(seed, "gc");
            let mut net = ActorCritic::init(6, 10, &mut rng).unwrap();
            // O(1) weights everywhere so no coordinate's gradient sits at round-off level
            let ts = net
                .tensors()
                .iter()
                .map(|t| Tensor::new(t.shape().to_vec(), (0..t.len()).map(|_| 0.5 * rng.normal()).collect()).unwrap())
                .collect();
            net.set_tensors(ts).unwrap();
            let mut b = batch(6, vec![0.0; 12], (0..12).map(|_| rng.normal()).collect(), &mut rng);
            b.targets = (0..12).map(|_| rng.normal()).collect();
            for i in 0..12 {
                let cur = net.actor_forward(b.states.row(i)).unwrap()[b.actions[i]];
                // ratios well inside the clip interval or well outside it
                b.old_log_probs[i] = cur + if i % 3 == 0 { 0.5 } else { 0.05 * rng.normal() };
            }
            let worst = grad_check(
                |t, v| Ok(record_ppo_losses(t, v, &b, 0.2, 0.5, 0.01)?.total),
                &net.tensors(),
                1e-6,
                40,
            )
            .unwrap();
            assert!(worst < 1e-4, "seed {}: {}", seed, worst);
        }
    }

    #[test]
    fn k1_estimator_tracks_exact_kl() {
        let p_old = log_softmax(&[0.3, -0.2, 1.0, 0.0]);
        let p_new = log_softmax(&[0.35, -0.1, 0.9, 0.05]);
        let exact: f64 = p_old.iter().zip(&p_new).map(|(a, b)| a.exp() * (a - b)).sum();
        let mut rng = RngStream::new(9, "kl");
        let (mut old, mut new) = (Vec::new(), Vec::new());
        for _ in 0..200_000 {
            let u = rng.uniform();
            let mut acc = 0.0;
            let mut k = 3;
            for (i, l) in p_old.iter().enumerate() {
                acc += l.exp();
                if u < acc {
                    k = i;
                    break;
                }
            }
            old.push(p_old[k]);
            new.push(p_new[k]);
        }
        let est = approx_kl(&old, &new).unwrap();
        assert!((est - exact).abs() < 0.1 * exact + 1e-4, "{} vs {}", est, exact);
        assert!(approx_kl(&[], &[]).is_err());
    }

    #[test]
    fn first_minibatch_ratios_are_one_and_runs_repeat() {
        let exp = synthetic(600, 7, 4);
        let init = ActorCritic::init(7, 16, &mut RngStream::new(5, "init")).unwrap();
        let cfg = PpoConfig { iterations: 4, sample_cap: 300, minibatch: 64, seed: 11, ..PpoConfig::default() };
        let mut seen = Vec::new();
        let mut probe = |it: usize, r: &[f64]| {
            assert!(r.iter().all(|&x| x == 1.0), "iteration {}", it);
            seen.push(it);
        };
        let (a1, m1) = train_ppo_probe(&exp, &init, &cfg, Some(&mut probe)).unwrap();
        assert_eq!(seen, vec![0, 1, 2, 3]);
        let (a2, m2) = train_ppo(&exp, &init, &cfg).unwrap();
        assert_eq!(a1, a2);
        assert_eq!(m1.to_csv(false), m2.to_csv(false));
        assert_eq!(m1.rows.len(), 4);
        assert!(m1.rows.iter().all(|r| r.approx_kl.is_finite() && r.entropy > 0.0));
        assert!(m1.to_csv(false).starts_with(METRICS_HEADER));
    }

    #[test]
    fn critic_learns_with_more_updates() {
        let exp = synthetic(400, 5, 6);
        let init = ActorCritic::init(5, 16, &mut RngStream::new(1, "init")).unwrap();
        let cfg = PpoConfig { iterations: 30, lr: 3e-3, minibatch: 64, ..PpoConfig::default() };
        let (_, m) = train_ppo(&exp, &init, &cfg).unwrap();
        assert!(m.rows.last().unwrap().critic_loss < m.rows[0].critic_loss);
    }

    #[test]
    fn rejects_bad_inputs() {
        let exp = synthetic(10, 3, 0);
        let init = ActorCritic::init(4, 8, &mut RngStream::new(0, "i")).unwrap();
        assert!(train_ppo(&exp, &init, &PpoConfig::default()).is_err());
        let bad = PpoConfig { clip: 0.0, ..PpoConfig::default() };
        assert!(bad.validate().is_err());
        let mut c = PpoConfig::default();
        assert!(c.set_key("ppo.clip", "0.1").unwrap());
        assert!(!c.set_key("ppo.nope", "1").unwrap());
    }
}
