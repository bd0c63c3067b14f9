//! One training iteration: roll out parallel episodes with the frozen
//! policy, extend the trajectory store, and apply the algorithm's update.

use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::episode::{
    run_episode, ActionMode, ControlWindow, DrlSpec, EpisodeOptions, EpisodeOutcome, MethodSpec,
    ObsFlavor,
};
use crate::error::{Error, Result};
use crate::network::IntersectionIdx;
use crate::rl::buffer::{ReplayBuffer, Transition};
use crate::rl::mlp::{Adam, NetworkRole, PolicyParams};
use crate::rl::ppo::{gae, normalize, ppo_update, PpoBatch};
use crate::rl::{Algo, DqnLearner, Hyperparams};
use crate::scenario::Scenario;
use crate::sim::EmissionModel;

/// Deterministic seed mixing (splitmix64 over the parts).
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut z = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        z ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Everything fixed across a training run.
#[derive(Debug, Clone)]
pub struct TrainSetup {
    pub scenario: Arc<Scenario>,
    pub controlled: Vec<IntersectionIdx>,
    /// Sensing window per incoming road of each controlled intersection.
    pub windows: Vec<Vec<f64>>,
    pub window: ControlWindow,
    pub algo: Algo,
    pub flavor: ObsFlavor,
    pub hp: Hyperparams,
    pub base_seed: u64,
    pub emission: EmissionModel,
}

impl TrainSetup {
    pub fn obs_dim(&self) -> usize {
        self.flavor.dim(&self.hp.obs)
    }
}

/// Mutable learner state: parameters plus algorithm-specific extras.
#[derive(Debug, Clone)]
pub enum LearnerState {
    Dqn {
        learner: DqnLearner,
        replay: ReplayBuffer,
    },
    Ppo {
        net: PolicyParams,
        opt: Adam,
    },
}

impl LearnerState {
    pub fn init(setup: &TrainSetup) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(mix_seed(&[setup.base_seed, 0xA11]));
        match setup.algo {
            Algo::Dqn => {
                let net = PolicyParams::new(
                    setup.obs_dim(),
                    &setup.hp.hidden,
                    2,
                    NetworkRole::QNetwork,
                    &mut rng,
                );
                LearnerState::Dqn {
                    learner: DqnLearner::new(net),
                    replay: ReplayBuffer::new(setup.hp.dqn.replay_capacity),
                }
            }
            Algo::Ppo => {
                let net = PolicyParams::new(
                    setup.obs_dim(),
                    &setup.hp.hidden,
                    3,
                    NetworkRole::PolicyAndValue,
                    &mut rng,
                );
                let opt = Adam::new(&net);
                LearnerState::Ppo { net, opt }
            }
        }
    }

    pub fn policy(&self) -> &PolicyParams {
        match self {
            LearnerState::Dqn { learner, .. } => &learner.net,
            LearnerState::Ppo { net, .. } => net,
        }
    }
}

/// Per-iteration training log row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub mean_episode_reward: f64,
    pub std_episode_reward: f64,
    pub wall_seconds: f64,
}

/// A full training run's state, resumable from a checkpoint.
#[derive(Debug)]
pub struct Trainer {
    pub setup: TrainSetup,
    pub state: LearnerState,
    pub iteration: usize,
}

impl Trainer {
    pub fn new(setup: TrainSetup) -> Result<Self> {
        if setup.controlled.is_empty() {
            return Err(Error::Config("no controlled intersections".into()));
        }
        if setup.controlled.len() != setup.windows.len() {
            return Err(Error::Config("one sensing-window list per intersection".into()));
        }
        let state = LearnerState::init(&setup);
        Ok(Self {
            setup,
            state,
            iteration: 0,
        })
    }

    /// Collect `parallel_episodes` rollouts with the frozen policy, extend
    /// the store, apply one update phase, and report reward statistics.
    pub fn run_iteration(&mut self) -> Result<IterationStats> {
        let start = Instant::now();
        let setup = &self.setup;
        if setup.window.is_empty() {
            return Err(Error::EmptyIteration);
        }
        let iteration = self.iteration;
        let epsilon = setup
            .hp
            .dqn
            .epsilon_at(iteration, setup.hp.iterations.max(1));
        let mode = match setup.algo {
            Algo::Dqn => ActionMode::Sample { epsilon },
            Algo::Ppo => ActionMode::Sample { epsilon: 0.0 },
        };
        let policy = self.state.policy().clone();
        let opts = EpisodeOptions {
            horizon: Some(setup.window.end),
            collect_series: false,
            collect_signal_log: false,
            emission: setup.emission,
            ..EpisodeOptions::default()
        };

        let outcomes: Result<Vec<EpisodeOutcome>> = (0..setup.hp.parallel_episodes)
            .into_par_iter()
            .map(|ep| {
                let spec = MethodSpec::Drl(DrlSpec {
                    policy: &policy,
                    algo: setup.algo,
                    flavor: setup.flavor,
                    controlled: &setup.controlled,
                    windows: &setup.windows,
                    window: setup.window,
                    mode,
                    obs_cfg: setup.hp.obs,
                    collect: true,
                });
                run_episode(
                    &setup.scenario,
                    &spec,
                    &opts,
                    mix_seed(&[setup.base_seed, iteration as u64, ep as u64]),
                )
            })
            .collect();
        let outcomes = outcomes?;

        let rewards: Vec<f64> = outcomes.iter().map(|o| o.episode_reward).collect();
        let n = rewards.len() as f64;
        let mean = rewards.iter().sum::<f64>() / n;
        let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;

        let mut update_rng =
            ChaCha12Rng::seed_from_u64(mix_seed(&[setup.base_seed, iteration as u64, 0x0BDA7E]));
        match &mut self.state {
            LearnerState::Ppo { net, opt } => {
                let mut batch = PpoBatch {
                    obs_dim: setup.flavor.dim(&setup.hp.obs),
                    ..Default::default()
                };
                for o in &outcomes {
                    for s in &o.streams {
                        let (adv, ret) = gae(
                            &s.rewards,
                            &s.values,
                            &s.dones,
                            0.0,
                            setup.hp.gamma,
                            setup.hp.ppo.gae_lambda,
                        );
                        for (i, obs) in s.obs.iter().enumerate() {
                            batch.obs.extend_from_slice(obs);
                            batch.actions.push(s.actions[i]);
                            batch.old_log_probs.push(s.log_probs[i]);
                            batch.advantages.push(adv[i]);
                            batch.returns.push(ret[i]);
                        }
                    }
                }
                if batch.is_empty() {
                    return Err(Error::EmptyIteration);
                }
                normalize(&mut batch.advantages);
                ppo_update(
                    net,
                    opt,
                    &batch,
                    &setup.hp.ppo,
                    setup.hp.learning_rate,
                    &mut update_rng,
                );
            }
            LearnerState::Dqn { learner, replay } => {
                for o in &outcomes {
                    for (slot, s) in o.streams.iter().enumerate() {
                        for i in 0..s.len() {
                            let s_next = if i + 1 < s.len() {
                                s.obs[i + 1].clone()
                            } else {
                                o.final_obs[slot].clone()
                            };
                            replay.push(Transition {
                                s: s.obs[i].clone(),
                                a: s.actions[i],
                                r: s.rewards[i],
                                s_next,
                                done: s.dones[i],
                            });
                        }
                    }
                }
                if replay.is_empty() {
                    return Err(Error::EmptyIteration);
                }
                for _ in 0..setup.hp.dqn.updates_per_iteration {
                    if replay.len() < setup.hp.dqn.batch_size {
                        break;
                    }
                    learner.update(
                        replay,
                        setup.hp.gamma,
                        setup.hp.learning_rate,
                        &setup.hp.dqn,
                        &mut update_rng,
                    )?;
                }
            }
        }

        self.iteration += 1;
        Ok(IterationStats {
            iteration,
            mean_episode_reward: mean,
            std_episode_reward: var.sqrt(),
            wall_seconds: start.elapsed().as_secs_f64(),
        })
    }

    pub fn policy(&self) -> &PolicyParams {
        self.state.policy()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let (policy, adam, dqn_target, dqn_updates, replay) = match &self.state {
            LearnerState::Ppo { net, opt } => (net.clone(), opt.clone(), None, 0, None),
            LearnerState::Dqn { learner, replay } => (
                learner.net.clone(),
                learner.opt.clone(),
                Some(learner.target.clone()),
                learner.updates,
                Some(replay.clone()),
            ),
        };
        Checkpoint {
            version: 1,
            algo: self.setup.algo,
            flavor: self.setup.flavor,
            hp: self.setup.hp.clone(),
            base_seed: self.setup.base_seed,
            iteration: self.iteration,
            controlled: self.setup.controlled.iter().map(|j| j.0).collect(),
            windows: self.setup.windows.clone(),
            window_start: self.setup.window.start,
            window_end: self.setup.window.end,
            policy,
            adam,
            dqn_target,
            dqn_updates,
            replay,
        }
    }

    pub fn from_checkpoint(ck: Checkpoint, scenario: Arc<Scenario>, emission: EmissionModel) -> Result<Self> {
        if ck.version != 1 {
            return Err(Error::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        let state = match ck.algo {
            Algo::Ppo => LearnerState::Ppo {
                net: ck.policy,
                opt: ck.adam,
            },
            Algo::Dqn => LearnerState::Dqn {
                learner: DqnLearner {
                    target: ck
                        .dqn_target
                        .ok_or_else(|| Error::Checkpoint("missing target network".into()))?,
                    net: ck.policy,
                    opt: ck.adam,
                    updates: ck.dqn_updates,
                },
                replay: ck
                    .replay
                    .ok_or_else(|| Error::Checkpoint("missing replay store".into()))?,
            },
        };
        Ok(Self {
            setup: TrainSetup {
                scenario,
                controlled: ck.controlled.into_iter().map(IntersectionIdx).collect(),
                windows: ck.windows,
                window: ControlWindow {
                    start: ck.window_start,
                    end: ck.window_end,
                },
                algo: ck.algo,
                flavor: ck.flavor,
                hp: ck.hp,
                base_seed: ck.base_seed,
                emission,
            },
            state,
            iteration: ck.iteration,
        })
    }
}

/// Versioned dump of parameters, optimizer state, and trainer position.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub algo: Algo,
    pub flavor: ObsFlavor,
    pub hp: Hyperparams,
    pub base_seed: u64,
    pub iteration: usize,
    pub controlled: Vec<usize>,
    pub windows: Vec<Vec<f64>>,
    pub window_start: u32,
    pub window_end: u32,
    pub policy: PolicyParams,
    pub adam: Adam,
    pub dqn_target: Option<PolicyParams>,
    pub dqn_updates: u64,
    pub replay: Option<ReplayBuffer>,
}

impl Checkpoint {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string(self)
            .map_err(|e| Error::Checkpoint(format!("serialize: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let json = std::fs::read_to_string(path)?;
        serde_json::from_str(&json).map_err(|e| Error::Checkpoint(format!("parse: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{generate_grid, GridSpec};
    use crate::rl::obs::full_windows;

    fn tiny_setup(algo: Algo) -> TrainSetup {
        let spec = GridSpec {
            rows: 4,
            cols: 4,
            demand_count: 80,
            horizon: 300,
            seed: 5,
            closure: Some((60, 240)),
            ..GridSpec::default()
        };
        let (scenario, _) = generate_grid(&spec).unwrap();
        let scenario = Arc::new(scenario);
        let controlled: Vec<IntersectionIdx> =
            (0..scenario.network.intersections().len()).map(IntersectionIdx).collect();
        let windows = controlled
            .iter()
            .map(|&j| full_windows(&scenario, j))
            .collect();
        let mut hp = Hyperparams::defaults(algo);
        hp.parallel_episodes = 4;
        hp.iterations = 3;
        hp.horizon = 200;
        hp.ppo.minibatch = 64;
        hp.dqn.updates_per_iteration = 20;
        TrainSetup {
            scenario,
            controlled,
            windows,
            window: ControlWindow { start: 100, end: 300 },
            algo,
            flavor: ObsFlavor::Lean,
            hp,
            base_seed: 42,
            emission: EmissionModel::default(),
        }
    }

    #[test]
    fn iteration_reports_stats_over_parallel_episodes() {
        let mut t = Trainer::new(tiny_setup(Algo::Ppo)).unwrap();
        let stats = t.run_iteration().unwrap();
        assert_eq!(stats.iteration, 0);
        assert!(stats.mean_episode_reward <= 0.0);
        assert!(stats.std_episode_reward >= 0.0);
        let stats2 = t.run_iteration().unwrap();
        assert_eq!(stats2.iteration, 1);
    }

    #[test]
    fn empty_window_is_rejected() {
        let mut setup = tiny_setup(Algo::Ppo);
        setup.window = ControlWindow { start: 100, end: 100 };
        let mut t = Trainer::new(setup).unwrap();
        assert!(matches!(t.run_iteration(), Err(Error::EmptyIteration)));
    }

    #[test]
    fn zero_learning_rate_keeps_params_bit_identical() {
        let mut setup = tiny_setup(Algo::Ppo);
        setup.hp.learning_rate = 0.0;
        let mut t = Trainer::new(setup).unwrap();
        let before = t.policy().clone();
        t.run_iteration().unwrap();
        assert_eq!(*t.policy(), before);
    }

    #[test]
    fn dqn_iteration_fills_replay_and_updates() {
        let mut t = Trainer::new(tiny_setup(Algo::Dqn)).unwrap();
        let before = t.policy().clone();
        t.run_iteration().unwrap();
        match &t.state {
            LearnerState::Dqn { replay, learner } => {
                assert!(replay.len() > 0);
                assert!(learner.updates > 0);
            }
            _ => unreachable!(),
        }
        assert_ne!(*t.policy(), before);
    }

    #[test]
    fn checkpoint_resume_reproduces_uninterrupted_run() {
        // Run A: 3 iterations straight. Run B: 2 iterations, checkpoint,
        // resume, 1 more. Stats and parameters must match bit for bit.
        let run_a = {
            let mut t = Trainer::new(tiny_setup(Algo::Ppo)).unwrap();
            let mut stats = Vec::new();
            for _ in 0..3 {
                stats.push(t.run_iteration().unwrap());
            }
            (stats, t.policy().clone())
        };
        let run_b = {
            let setup = tiny_setup(Algo::Ppo);
            let scenario = Arc::clone(&setup.scenario);
            let emission = setup.emission;
            let mut t = Trainer::new(setup).unwrap();
            let mut stats = Vec::new();
            for _ in 0..2 {
                stats.push(t.run_iteration().unwrap());
            }
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("ck.json");
            t.checkpoint().save(&path).unwrap();
            let ck = Checkpoint::load(&path).unwrap();
            let mut resumed = Trainer::from_checkpoint(ck, scenario, emission).unwrap();
            stats.push(resumed.run_iteration().unwrap());
            (stats, resumed.policy().clone())
        };
        for (a, b) in run_a.0.iter().zip(&run_b.0) {
            assert_eq!(a.iteration, b.iteration);
            assert_eq!(a.mean_episode_reward, b.mean_episode_reward);
            assert_eq!(a.std_episode_reward, b.std_episode_reward);
        }
        assert_eq!(run_a.1, run_b.1);
    }
}
