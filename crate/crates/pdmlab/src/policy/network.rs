use std::path::Path;

use crate::error::{invalid, Error, Result};
use crate::numerics::{dense_row, init_uniform, log_softmax, RngStream, Standardizer, Tape, Tensor, Var};
use crate::persist;
use crate::plantsim::MaintenanceAction;

pub const N_ACTIONS: usize = 4;

/// Actor `s → tanh(64) → 4 logits` and critic `s → tanh(64) → 1`, both
/// reading states through a fixed z-score normalizer.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic {
    pub norm: Standardizer,
    /// `w1, b1, w2, b2`.
    pub actor: Vec<Tensor>,
    /// `w1, b1, w2, b2`.
    pub critic: Vec<Tensor>,
}

const PARAMS_KIND: &str = "actor_critic";

impl ActorCritic {
    /// Uniform `±1/sqrt(fan_in)` hidden layers; the actor head is scaled by
    /// 0.01 so the initial policy is close to uniform.
    pub fn init(state_dim: usize, hidden: usize, rng: &mut RngStream) -> Result<Self> {
        if state_dim == 0 || hidden == 0 {
            return invalid("actor-critic dims must be >= 1");
        }
        let head = |out: usize, scale: f64, rng: &mut RngStream| {
            vec![
                init_uniform(&[state_dim, hidden], state_dim, rng),
                Tensor::zeros(&[hidden]),
                init_uniform(&[hidden, out], hidden, rng).scale(scale),
                Tensor::zeros(&[out]),
            ]
        };
        let actor = head(N_ACTIONS, 0.01, rng);
        let critic = head(1, 1.0, rng);
        Ok(Self { norm: Standardizer::identity(state_dim), actor, critic })
    }

    pub fn state_dim(&self) -> usize {
        self.actor[0].shape()[0]
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.actor.iter().chain(&self.critic).cloned().collect()
    }

    pub fn set_tensors(&mut self, ts: Vec<Tensor>) -> Result<()> {
        if ts.len() != 8 || ts.iter().zip(self.tensors()).any(|(a, b)| a.shape() != b.shape()) {
            return invalid("actor-critic tensor list does not match");
        }
        let mut ts = ts;
        self.critic = ts.split_off(4);
        self.actor = ts;
        Ok(())
    }

    fn check(&self, s: &[f64]) -> Result<Vec<f64>> {
        if s.len() != self.state_dim() {
            return invalid(format!("state of length {} vs {}", s.len(), self.state_dim()));
        }
        Ok(self.norm.apply(s))
    }

    fn mlp(layers: &[Tensor], x: &[f64]) -> Vec<f64> {
        let h: Vec<f64> = dense_row(x, &layers[0], &layers[1]).into_iter().map(f64::tanh).collect();
        dense_row(&h, &layers[2], &layers[3])
    }

    pub fn logits(&self, s: &[f64]) -> Result<Vec<f64>> {
        Ok(Self::mlp(&self.actor, &self.check(s)?))
    }

    /// Log-probabilities over the four actions.
    pub fn actor_forward(&self, s: &[f64]) -> Result<Vec<f64>> {
        Ok(log_softmax(&self.logits(s)?))
    }

    pub fn critic_forward(&self, s: &[f64]) -> Result<f64> {
        Ok(Self::mlp(&self.critic, &self.check(s)?)[0])
    }

    /// Most probable action; ties toward lower severity.
    pub fn greedy(&self, s: &[f64]) -> Result<MaintenanceAction> {
        let l = self.logits(s)?;
        let mut best = 0;
        for i in 1..l.len() {
            if l[i] > l[best] {
                best = i;
            }
        }
        MaintenanceAction::from_index(best)
    }

    /// Samples an action from the policy with one uniform draw.
    pub fn sample(&self, s: &[f64], rng: &mut RngStream) -> Result<MaintenanceAction> {
        let lp = self.actor_forward(s)?;
        let u = rng.uniform();
        let mut acc = 0.0;
        for (i, l) in lp.iter().enumerate() {
            acc += l.exp();
            if u < acc {
                return MaintenanceAction::from_index(i);
            }
        }
        MaintenanceAction::from_index(N_ACTIONS - 1)
    }

    /// Records log-probs `[B, 4]` and values `[B]` for a batch of normalized
    /// states; `vars` bind the eight tensors in [`ActorCritic::tensors`] order.
    pub fn record(tape: &mut Tape, states: Var, vars: &[Var]) -> Result<(Var, Var)> {
        if vars.len() != 8 {
            return invalid("actor-critic needs eight parameter vars");
        }
        let mlp = |tape: &mut Tape, v: &[Var]| -> Result<Var> {
            let h = tape.affine(states, v[0], v[1])?;
            let h = tape.tanh(h)?;
            tape.affine(h, v[2], v[3])
        };
        let logits = mlp(tape, &vars[..4])?;
        let logp = tape.log_softmax(logits)?;
        let v = mlp(tape, &vars[4..])?;
        let b = tape.value(v).shape()[0];
        let v = tape.reshape(v, vec![b])?;
        Ok((logp, v))
    }

    /// Records values `[B]` only; `vars` bind the four critic tensors.
    pub fn record_critic(tape: &mut Tape, states: Var, vars: &[Var]) -> Result<Var> {
        if vars.len() != 4 {
            return invalid("critic needs four parameter vars");
        }
        let h = tape.affine(states, vars[0], vars[1])?;
        let h = tape.tanh(h)?;
        let v = tape.affine(h, vars[2], vars[3])?;
        let b = tape.value(v).shape()[0];
        tape.reshape(v, vec![b])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut ts = vec![Tensor::vector(self.norm.mean.clone()), Tensor::vector(self.norm.std.clone())];
        ts.extend(self.tensors());
        persist::write_params(path, PARAMS_KIND, &ts)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut ts = persist::read_params(path, PARAMS_KIND)?;
        if ts.len() != 10 {
            return Err(Error::Format(format!("expected 10 actor-critic tensors, found {}", ts.len())));
        }
        let rest = ts.split_off(2);
        let norm = Standardizer { mean: ts[0].data().to_vec(), std: ts[1].data().to_vec() };
        let state_dim = rest[0].shape().first().copied().unwrap_or(0);
        let hidden = rest[0].shape().get(1).copied().unwrap_or(0);
        let mut ac = Self::init(state_dim, hidden, &mut RngStream::new(0, "load"))?;
        ac.set_tensors(rest)?;
        if norm.dim() != state_dim {
            return Err(Error::Format("normalizer width does not match the state dim".into()));
        }
        ac.norm = norm;
        Ok(ac)
    }
}
