//! From-scratch learners and the traffic observation/reward designs they
//! train on.

pub mod buffer;
pub mod dqn;
pub mod mlp;
pub mod obs;
pub mod ppo;
pub mod train;

use serde::{Deserialize, Serialize};

pub use buffer::{ReplayBuffer, RolloutStream, Transition};
pub use dqn::{DqnConfig, DqnLearner};
pub use mlp::{Adam, Gradients, NetworkRole, PolicyParams};
pub use obs::ObsConfig;
pub use ppo::{PpoBatch, PpoConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Dqn,
    Ppo,
}

impl std::fmt::Display for Algo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Algo::Dqn => write!(f, "dqn"),
            Algo::Ppo => write!(f, "ppo"),
        }
    }
}

impl std::str::FromStr for Algo {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> crate::error::Result<Self> {
        match s {
            "dqn" => Ok(Algo::Dqn),
            "ppo" => Ok(Algo::Ppo),
            other => Err(crate::error::Error::Config(format!("unknown algo '{other}'"))),
        }
    }
}

/// Everything the trainer needs to know, checkpointable alongside the
/// parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub gamma: f64,
    pub hidden: Vec<usize>,
    pub iterations: usize,
    pub parallel_episodes: usize,
    /// Control horizon T in seconds per episode.
    pub horizon: u32,
    pub dqn: DqnConfig,
    pub ppo: PpoConfig,
    pub obs: ObsConfig,
}

impl Hyperparams {
    pub fn defaults(algo: Algo) -> Self {
        Self {
            learning_rate: match algo {
                Algo::Dqn => 1e-3,
                Algo::Ppo => 3e-4,
            },
            gamma: 0.99,
            hidden: vec![64, 64],
            iterations: 150,
            parallel_episodes: 18,
            horizon: 1800,
            dqn: DqnConfig::default(),
            ppo: PpoConfig::default(),
            obs: ObsConfig::default(),
        }
    }
}
