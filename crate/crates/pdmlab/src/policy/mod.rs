//! Actor-critic maintenance policy trained with clipped PPO on logged fleet
//! experience.
//!
//! States come from a frozen [`StateEncoder`]: hybrid per-device features,
//! z-scored, passed through the device graph convolution.

mod encoder;
mod experience;
mod network;
mod ppo;

pub use encoder::StateEncoder;
pub use experience::{build_experience, DeviceSeries, Experience, ExperienceTuple};
pub use network::{ActorCritic, N_ACTIONS};
pub use ppo::{
    advantage, approx_kl, normalize, ppo_losses, record_ppo_losses, train_ppo, train_ppo_probe, IterationMetrics,
    LossVars, PpoBatch, PpoConfig, PpoLosses, RatioProbe, TrainMetrics, METRICS_HEADER,
};
