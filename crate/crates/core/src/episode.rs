//! Episode execution: drives one simulated run under a control method,
//! producing metric series, per-vehicle ledgers, signal logs, and (for
//! learners) collected trajectories.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::network::IntersectionIdx;
use crate::rl::mlp::PolicyParams;
use crate::rl::obs::{
    full_windows, intellilight_observe, intellilight_reward, observe, reward, ObsConfig,
    INTELLILIGHT_WEIGHTS,
};
use crate::rl::{dqn, ppo, Algo, RolloutStream};
use crate::scenario::Scenario;
use crate::sim::{EmissionModel, LedgerEntry, WorldState};
use crate::signals::{scats_select, SignalCommand, SignalPlan, SubState};

/// Which observation/reward design a learner runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObsFlavor {
    /// Phase one-hot + per-road occupancy and normalized speed; reward is
    /// the negative max occupancy.
    Lean,
    /// Queue/count/waiting plus position grid; reward penalizes queues,
    /// waiting, and switching.
    Rich,
}

impl ObsFlavor {
    pub fn dim(&self, cfg: &ObsConfig) -> usize {
        match self {
            ObsFlavor::Lean => cfg.lean_dim(),
            ObsFlavor::Rich => cfg.rich_dim(),
        }
    }
}

/// Half-open control interval in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ControlWindow {
    pub start: u32,
    pub end: u32,
}

impl ControlWindow {
    pub fn contains(&self, t: u32) -> bool {
        self.start <= t && t < self.end
    }

    pub fn len(&self) -> u32 {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActionMode {
    /// On-policy sampling (PPO) or epsilon-greedy (DQN).
    Sample { epsilon: f64 },
    /// Deterministic evaluation policy.
    Greedy,
}

/// A learner-driven controller over a set of covered intersections.
#[derive(Debug, Clone)]
pub struct DrlSpec<'a> {
    pub policy: &'a PolicyParams,
    pub algo: Algo,
    pub flavor: ObsFlavor,
    pub controlled: &'a [IntersectionIdx],
    /// Sensing window (meters) per incoming road of each controlled
    /// intersection.
    pub windows: &'a [Vec<f64>],
    pub window: ControlWindow,
    pub mode: ActionMode,
    pub obs_cfg: ObsConfig,
    /// Record trajectories for training.
    pub collect: bool,
}

/// How signals are driven for one episode.
#[derive(Debug, Clone)]
pub enum MethodSpec<'a> {
    /// Every intersection runs its static plan.
    Static,
    /// Saturation-based plan reselection at every cycle boundary.
    Scats,
    Drl(DrlSpec<'a>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesRow {
    pub t: u32,
    pub running: usize,
    pub arrived: usize,
    pub mean_occupancy: f64,
    pub max_occupancy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalLogRow {
    pub t: u32,
    pub intersection: String,
    pub plan: String,
    pub phase: usize,
    pub sub: SubState,
    pub controlled: bool,
}

#[derive(Debug, Default)]
pub struct EpisodeOutcome {
    pub series: Vec<SeriesRow>,
    pub ledger: Vec<LedgerEntry>,
    pub signal_log: Vec<SignalLogRow>,
    /// One rollout stream per controlled intersection, in `controlled` order.
    pub streams: Vec<RolloutStream>,
    /// Observation of the post-episode state per stream (DQN bootstrap).
    pub final_obs: Vec<Vec<f64>>,
    pub episode_reward: f64,
    pub ticks: u32,
}

#[derive(Debug, Clone, Copy)]
pub struct EpisodeOptions {
    /// Stop after this many ticks; `None` runs until every vehicle arrives.
    pub horizon: Option<u32>,
    /// Hard safety limit for open-horizon runs.
    pub max_ticks: u32,
    pub collect_series: bool,
    pub collect_signal_log: bool,
    pub emission: EmissionModel,
}

impl Default for EpisodeOptions {
    fn default() -> Self {
        Self {
            horizon: None,
            max_ticks: 50_000,
            collect_series: true,
            collect_signal_log: false,
            emission: EmissionModel::default(),
        }
    }
}

/// Runs one episode to completion. Fully deterministic given (scenario,
/// spec, options, seed).
pub fn run_episode(
    scenario: &Arc<Scenario>,
    spec: &MethodSpec<'_>,
    opts: &EpisodeOptions,
    seed: u64,
) -> Result<EpisodeOutcome> {
    let mut world = WorldState::new(Arc::clone(scenario), opts.emission);
    let n_int = scenario.network.intersections().len();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut outcome = EpisodeOutcome::default();

    let scats_candidates: Vec<Vec<SignalPlan>> = match spec {
        MethodSpec::Scats => (0..n_int)
            .map(|j| scenario.plan_of(IntersectionIdx(j)).scats_variants())
            .collect(),
        _ => Vec::new(),
    };

    if let MethodSpec::Drl(d) = spec {
        if d.collect {
            outcome.streams = vec![RolloutStream::default(); d.controlled.len()];
        }
    }
    let mut handed_back = false;
    let mut commands = vec![SignalCommand::Fixed; n_int];
    if opts.collect_series {
        let (mean_occ, max_occ) = world.occupancy_summary();
        outcome.series.push(SeriesRow {
            t: 0,
            running: 0,
            arrived: 0,
            mean_occupancy: mean_occ,
            max_occupancy: max_occ,
        });
    }

    loop {
        let t = world.clock;
        if let Some(h) = opts.horizon {
            if t >= h {
                break;
            }
        } else if world.drained() {
            break;
        }
        if t >= opts.max_ticks {
            return Err(Error::Stalled(opts.max_ticks));
        }

        commands.fill(SignalCommand::Fixed);
        let mut pending_obs: Vec<(usize, Vec<f64>, u8, f64, f64)> = Vec::new();

        match spec {
            MethodSpec::Static => {}
            MethodSpec::Scats => {
                for j in 0..n_int {
                    if let Some(m) = world.take_measurement(IntersectionIdx(j)) {
                        let selected = scats_select(&scats_candidates[j], &m)?;
                        if selected.id != world.machines[j].plan.id {
                            world.stage_plan(IntersectionIdx(j), selected.clone());
                        }
                    }
                }
            }
            MethodSpec::Drl(d) => {
                if d.window.contains(t) {
                    for (slot, &j) in d.controlled.iter().enumerate() {
                        let o = match d.flavor {
                            ObsFlavor::Lean => observe(&world, j, &d.windows[slot], &d.obs_cfg),
                            ObsFlavor::Rich => intellilight_observe(&world, j, &d.obs_cfg),
                        };
                        let (action, log_prob, value) = match (d.algo, d.mode) {
                            (Algo::Ppo, ActionMode::Sample { .. }) => {
                                ppo::sample_action(d.policy, &o, &mut rng)?
                            }
                            (Algo::Ppo, ActionMode::Greedy) => {
                                (ppo::greedy_action(d.policy, &o)?, 0.0, 0.0)
                            }
                            (Algo::Dqn, ActionMode::Sample { epsilon }) => {
                                (dqn::act(d.policy, &o, epsilon, &mut rng)?, 0.0, 0.0)
                            }
                            (Algo::Dqn, ActionMode::Greedy) => {
                                (dqn::act(d.policy, &o, 0.0, &mut rng)?, 0.0, 0.0)
                            }
                        };
                        commands[j.0] = SignalCommand::Act(action);
                        if d.collect {
                            pending_obs.push((slot, o, action, log_prob, value));
                        }
                    }
                } else if t >= d.window.end && !handed_back && !d.window.is_empty() {
                    for &j in d.controlled {
                        world.reset_signal(j);
                    }
                    handed_back = true;
                }
            }
        }

        world.step(&commands);

        if let MethodSpec::Drl(d) = spec {
            if d.window.contains(t) {
                let done = t + 1 == d.window.end;
                if d.collect {
                    for (slot, o, action, log_prob, value) in pending_obs.drain(..) {
                        outcome.streams[slot].push(o, action, log_prob, value);
                    }
                }
                for (slot, &j) in d.controlled.iter().enumerate() {
                    let r = match d.flavor {
                        ObsFlavor::Lean => reward(&world, j, &d.windows[slot]),
                        ObsFlavor::Rich => intellilight_reward(
                            &world,
                            j,
                            world.switched_this_tick[j.0],
                            INTELLILIGHT_WEIGHTS,
                        ),
                    };
                    outcome.episode_reward += r;
                    if d.collect {
                        outcome.streams[slot].push_outcome(r, done);
                    }
                }
                if d.collect {
                    if done {
                        outcome.final_obs = d
                            .controlled
                            .iter()
                            .enumerate()
                            .map(|(slot, &j)| match d.flavor {
                                ObsFlavor::Lean => {
                                    observe(&world, j, &d.windows[slot], &d.obs_cfg)
                                }
                                ObsFlavor::Rich => intellilight_observe(&world, j, &d.obs_cfg),
                            })
                            .collect();
                    }
                }
            }
        }

        if opts.collect_series {
            let (mean_occ, max_occ) = world.occupancy_summary();
            outcome.series.push(SeriesRow {
                t: world.clock,
                running: world.running_vehicle_count(),
                arrived: world.arrived_count(),
                mean_occupancy: mean_occ,
                max_occupancy: max_occ,
            });
        }
        if opts.collect_signal_log {
            let controlled_now: Vec<bool> = match spec {
                MethodSpec::Drl(d) => {
                    let mut flags = vec![false; n_int];
                    if d.window.contains(t) {
                        for &j in d.controlled {
                            flags[j.0] = true;
                        }
                    }
                    flags
                }
                _ => vec![false; n_int],
            };
            for j in 0..n_int {
                let m = &world.machines[j];
                outcome.signal_log.push(SignalLogRow {
                    t,
                    intersection: scenario
                        .network
                        .node_id(scenario.network.intersection(IntersectionIdx(j)).node)
                        .to_string(),
                    plan: m.plan.id.clone(),
                    phase: m.phase,
                    sub: m.sub,
                    controlled: controlled_now[j],
                });
            }
        }
    }

    outcome.ticks = world.clock;
    outcome.ledger = world.ledger.clone();
    Ok(outcome)
}

/// Sensing windows for a whole-road camera view (used by the rich variant
/// and by unconstrained baselines).
pub fn full_length_windows(
    scenario: &Scenario,
    controlled: &[IntersectionIdx],
) -> Vec<Vec<f64>> {
    controlled
        .iter()
        .map(|&j| full_windows(scenario, j))
        .collect()
}
