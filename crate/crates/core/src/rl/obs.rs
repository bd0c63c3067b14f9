//! Observation and reward design for controlled intersections.
//!
//! The lean state is the current phase one-hot plus, per incoming road, its
//! occupancy and its mean speed normalized by the speed limit, zero-padded to
//! a fixed road count. The reward is the negative maximum incoming occupancy.
//!
//! The rich variant adds queue length, vehicle count, accumulated waiting
//! time, and a coarse per-road position grid, and penalizes queues, waiting,
//! and switching; it exists to reproduce the stability contrast against the
//! lean design.

use serde::{Deserialize, Serialize};

use crate::network::IntersectionIdx;
use crate::sim::{
    entrance_positions, sensed_mean_speed, sensed_occupancy, WorldState,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObsConfig {
    /// Fixed observation width in roads; extra slots are zero.
    pub max_roads: usize,
    pub max_phases: usize,
    /// Normalization caps for the rich state.
    pub queue_cap: f64,
    pub count_cap: f64,
    pub wait_cap: f64,
    /// Position-grid cells per road in the rich state.
    pub cells: usize,
}

impl Default for ObsConfig {
    fn default() -> Self {
        Self {
            max_roads: 4,
            max_phases: 4,
            queue_cap: 30.0,
            count_cap: 30.0,
            wait_cap: 300.0,
            cells: 5,
        }
    }
}

impl ObsConfig {
    pub fn lean_dim(&self) -> usize {
        self.max_phases + 2 * self.max_roads
    }

    pub fn rich_dim(&self) -> usize {
        self.max_phases + self.max_roads * (3 + self.cells)
    }
}

/// Default weights for the rich reward: (queue, waiting, switch).
pub const INTELLILIGHT_WEIGHTS: (f64, f64, f64) = (1.0, 0.1, 1.0);

fn phase_onehot(world: &WorldState, j: IntersectionIdx, max_phases: usize, out: &mut Vec<f64>) {
    let phase = world.machines[j.0].phase;
    for p in 0..max_phases {
        out.push(if p == phase { 1.0 } else { 0.0 });
    }
}

/// Lean observation. `windows[i]` is the sensing window in meters for the
/// i-th incoming road (the camera's reach, capped at the road length).
pub fn observe(
    world: &WorldState,
    j: IntersectionIdx,
    windows: &[f64],
    cfg: &ObsConfig,
) -> Vec<f64> {
    let incoming = &world.scenario().network.intersection(j).incoming;
    debug_assert_eq!(incoming.len(), windows.len());
    let mut out = Vec::with_capacity(cfg.lean_dim());
    phase_onehot(world, j, cfg.max_phases, &mut out);
    for slot in 0..cfg.max_roads {
        match incoming.get(slot) {
            Some(&seg) => {
                let w = windows[slot];
                out.push(sensed_occupancy(world, seg, w));
                let limit = world.scenario().network.segment(seg).speed_limit;
                out.push(sensed_mean_speed(world, seg, w) / limit);
            }
            None => {
                out.push(0.0);
                out.push(0.0);
            }
        }
    }
    out
}

/// Negative maximum occupancy over the incoming roads; range [-1, 0].
pub fn reward(world: &WorldState, j: IntersectionIdx, windows: &[f64]) -> f64 {
    let incoming = &world.scenario().network.intersection(j).incoming;
    let max_occ = incoming
        .iter()
        .zip(windows)
        .map(|(&seg, &w)| sensed_occupancy(world, seg, w))
        .fold(0.0_f64, f64::max);
    -max_occ
}

/// Queue length (stopped vehicles), total vehicle count, and accumulated
/// waiting seconds for one road.
fn road_counts(world: &WorldState, seg: crate::network::SegmentIdx) -> (usize, usize, f64) {
    let clockf = world.clock as f64;
    let mut stopped = 0usize;
    let mut waiting = 0.0;
    let mut prev_stopped = false;
    let q = &world.segment_states[seg.0].queue;
    for &v in q {
        let veh = &world.vehicles[v];
        let is_stopped = veh.earliest_exit <= clockf || prev_stopped;
        prev_stopped = is_stopped;
        if is_stopped {
            stopped += 1;
        }
        waiting += veh.stopped_streak as f64;
    }
    (stopped, q.len(), waiting)
}

/// Rich observation: per road (queue, count, waiting) normalized by caps,
/// a position grid of per-cell occupancies, and the phase one-hot.
pub fn intellilight_observe(world: &WorldState, j: IntersectionIdx, cfg: &ObsConfig) -> Vec<f64> {
    let incoming = &world.scenario().network.intersection(j).incoming;
    let mut out = Vec::with_capacity(cfg.rich_dim());
    phase_onehot(world, j, cfg.max_phases, &mut out);
    for slot in 0..cfg.max_roads {
        match incoming.get(slot) {
            Some(&seg) => {
                let (queue, count, waiting) = road_counts(world, seg);
                out.push((queue as f64 / cfg.queue_cap).min(1.0));
                out.push((count as f64 / cfg.count_cap).min(1.0));
                out.push((waiting / cfg.wait_cap).min(1.0));
                let s = world.scenario().network.segment(seg);
                let cell_len = s.length / cfg.cells as f64;
                let mut cells = vec![0.0; cfg.cells];
                for (v, pos) in entrance_positions(world, seg) {
                    let idx = ((pos / cell_len).floor() as usize).min(cfg.cells - 1);
                    cells[idx] += world.vehicles[v].length;
                }
                for c in cells {
                    out.push((c / (cell_len * s.lanes as f64)).min(1.0));
                }
            }
            None => out.extend(std::iter::repeat_n(0.0, 3 + cfg.cells)),
        }
    }
    out
}

/// Weighted penalty on queues, waiting time, and switching.
pub fn intellilight_reward(
    world: &WorldState,
    j: IntersectionIdx,
    switched: bool,
    weights: (f64, f64, f64),
) -> f64 {
    let incoming = &world.scenario().network.intersection(j).incoming;
    let mut queue_sum = 0.0;
    let mut wait_sum = 0.0;
    for &seg in incoming {
        let (queue, _, waiting) = road_counts(world, seg);
        queue_sum += queue as f64;
        wait_sum += waiting;
    }
    -(weights.0 * queue_sum + weights.1 * wait_sum + weights.2 * if switched { 1.0 } else { 0.0 })
}

/// Full-length sensing windows (no camera range cap) for an intersection.
pub fn full_windows(scenario: &crate::scenario::Scenario, j: IntersectionIdx) -> Vec<f64> {
    scenario
        .network
        .intersection(j)
        .incoming
        .iter()
        .map(|&s| scenario.network.segment(s).length)
        .collect()
}
