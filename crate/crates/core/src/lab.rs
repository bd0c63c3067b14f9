//! Experiment orchestration: the five compared control methods, their
//! training setups, and the 10-episode evaluation harness.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::episode::{
    run_episode, ActionMode, ControlWindow, DrlSpec, EpisodeOptions, EpisodeOutcome, MethodSpec,
    ObsFlavor,
};
use crate::error::{Error, Result};
use crate::metrics::{aggregate_emissions, average_reports, travel_time_stats, EpisodeReport};
use crate::network::IntersectionIdx;
use crate::rl::mlp::PolicyParams;
use crate::rl::train::{mix_seed, TrainSetup, Trainer};
use crate::rl::{Algo, Hyperparams};
use crate::scenario::Scenario;
use crate::sim::EmissionModel;
use crate::uav::{select_intersections, sensing_windows, dispatch, UavConfig};

/// The compared control methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Regular traffic, static signals, no closure.
    Original,
    /// Closure applied, static signals.
    Congestion,
    /// Closure applied, saturation-based plan reselection.
    Scats,
    /// Closure applied, rich-state DQN control from fixed cameras
    /// (no flight window).
    IntelliLight,
    /// Closure applied, lean-state control inside the drone window.
    Avars,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Method::Original => "original",
            Method::Congestion => "congestion",
            Method::Scats => "scats",
            Method::IntelliLight => "intellilight",
            Method::Avars => "avars",
        };
        write!(f, "{s}")
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(Method::Original),
            "congestion" => Ok(Method::Congestion),
            "scats" => Ok(Method::Scats),
            "intellilight" => Ok(Method::IntelliLight),
            "avars" => Ok(Method::Avars),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

impl Method {
    pub fn is_learned(&self) -> bool {
        matches!(self, Method::IntelliLight | Method::Avars)
    }

    /// Default algorithm pairing from the comparison study.
    pub fn default_algo(&self) -> Algo {
        match self {
            Method::IntelliLight => Algo::Dqn,
            _ => Algo::Ppo,
        }
    }
}

/// Full experiment configuration shared by training and evaluation.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub method: Method,
    pub algo: Algo,
    pub seed: u64,
    pub uav: UavConfig,
    /// Number of drones (controlled intersections).
    pub uav_count: usize,
    pub hp: Hyperparams,
    pub emission: EmissionModel,
    pub eval_episodes: usize,
}

impl ExperimentConfig {
    pub fn new(method: Method) -> Self {
        let algo = method.default_algo();
        Self {
            method,
            algo,
            seed: 7,
            uav: UavConfig::default(),
            uav_count: 6,
            hp: Hyperparams::defaults(algo),
            emission: EmissionModel::default(),
            eval_episodes: 10,
        }
    }
}

/// The drone plan for a scenario: which intersections, what sensing reach,
/// and when control runs.
#[derive(Debug, Clone)]
pub struct ControlPlan {
    pub controlled: Vec<IntersectionIdx>,
    pub windows: Vec<Vec<f64>>,
    pub window: ControlWindow,
}

/// Builds the control plan for a learned method: impact-ranked intersection
/// selection, camera coverage, and the battery-bounded window.
pub fn control_plan(scenario: &Arc<Scenario>, cfg: &ExperimentConfig) -> Result<ControlPlan> {
    let closure = scenario
        .closures
        .first()
        .ok_or_else(|| Error::Config("scenario has no closure to react to".into()))?
        .clone();
    let controlled = select_intersections(scenario, &closure, cfg.uav_count, cfg.emission)?;
    let d = dispatch(&cfg.uav, &closure, &controlled, &scenario.network)?;
    let window = match cfg.method {
        // Fixed cameras watch the whole episode and the full road length.
        Method::IntelliLight => ControlWindow {
            start: 0,
            end: d.control_end,
        },
        _ => ControlWindow {
            start: d.control_start,
            end: d.control_end,
        },
    };
    let windows = controlled
        .iter()
        .map(|&j| match cfg.method {
            Method::IntelliLight => scenario
                .network
                .intersection(j)
                .incoming
                .iter()
                .map(|&s| scenario.network.segment(s).length)
                .collect(),
            _ => sensing_windows(&scenario.network, j, &cfg.uav),
        })
        .collect();
    Ok(ControlPlan {
        controlled,
        windows,
        window,
    })
}

/// Builds a trainer for a learned method on this scenario.
pub fn build_trainer(scenario: &Arc<Scenario>, cfg: &ExperimentConfig) -> Result<Trainer> {
    if !cfg.method.is_learned() {
        return Err(Error::Config(format!(
            "method '{}' has nothing to train",
            cfg.method
        )));
    }
    let plan = control_plan(scenario, cfg)?;
    Trainer::new(TrainSetup {
        scenario: Arc::clone(scenario),
        controlled: plan.controlled,
        windows: plan.windows,
        window: plan.window,
        algo: cfg.algo,
        flavor: match cfg.method {
            Method::IntelliLight => ObsFlavor::Rich,
            _ => ObsFlavor::Lean,
        },
        hp: cfg.hp.clone(),
        base_seed: cfg.seed,
        emission: cfg.emission,
    })
}

/// Evaluation product: the averaged report plus one representative episode
/// (they are identical under identical seeds when the policy is greedy).
#[derive(Debug)]
pub struct Evaluation {
    pub report: EpisodeReport,
    pub episodes: Vec<EpisodeOutcome>,
}

/// Runs the method over `eval_episodes` full episodes (greedy policy, fresh
/// seeds) and averages the per-episode statistics.
pub fn evaluate(
    scenario: &Arc<Scenario>,
    cfg: &ExperimentConfig,
    policy: Option<&PolicyParams>,
    log_signals: bool,
) -> Result<Evaluation> {
    let eval_scenario = match cfg.method {
        Method::Original => Arc::new(scenario.without_closures()),
        _ => Arc::clone(scenario),
    };
    let plan = match cfg.method {
        Method::IntelliLight | Method::Avars => Some(control_plan(scenario, cfg)?),
        _ => None,
    };
    let policy = match cfg.method {
        Method::IntelliLight | Method::Avars => Some(
            policy.ok_or_else(|| Error::Config("learned method needs a checkpoint".into()))?,
        ),
        _ => None,
    };

    let opts = EpisodeOptions {
        horizon: None,
        collect_series: true,
        collect_signal_log: log_signals,
        emission: cfg.emission,
        ..EpisodeOptions::default()
    };

    let outcomes: Result<Vec<EpisodeOutcome>> = (0..cfg.eval_episodes)
        .into_par_iter()
        .map(|i| {
            let spec = match cfg.method {
                Method::Original | Method::Congestion => MethodSpec::Static,
                Method::Scats => MethodSpec::Scats,
                Method::IntelliLight | Method::Avars => {
                    let plan = plan.as_ref().unwrap();
                    MethodSpec::Drl(DrlSpec {
                        policy: policy.unwrap(),
                        algo: cfg.algo,
                        flavor: if cfg.method == Method::IntelliLight {
                            ObsFlavor::Rich
                        } else {
                            ObsFlavor::Lean
                        },
                        controlled: &plan.controlled,
                        windows: &plan.windows,
                        window: plan.window,
                        mode: ActionMode::Greedy,
                        obs_cfg: cfg.hp.obs,
                        collect: false,
                    })
                }
            };
            run_episode(
                &eval_scenario,
                &spec,
                &opts,
                mix_seed(&[cfg.seed, 0xE7A1, i as u64]),
            )
        })
        .collect();
    let outcomes = outcomes?;

    let per_episode: Result<Vec<_>> = outcomes
        .iter()
        .map(|o| {
            let times: Vec<f64> = o.ledger.iter().map(|e| e.travel_time as f64).collect();
            let stats = travel_time_stats(&times)?;
            let (fuel, co2) = aggregate_emissions(&o.ledger, cfg.emission.co2_per_liter)?;
            let series: Vec<usize> = o.series.iter().map(|r| r.running).collect();
            Ok((stats, fuel, co2, series))
        })
        .collect();
    let report = average_reports(&cfg.method.to_string(), &per_episode?)?;
    Ok(Evaluation {
        report,
        episodes: outcomes,
    })
}
