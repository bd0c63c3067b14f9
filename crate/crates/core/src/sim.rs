//! Deterministic 1-second-step queue-based traffic dynamics.
//!
//! Each segment is a FIFO queue with finite storage (lane-meters). A vehicle
//! entering a segment may reach the stop line after the free-flow traversal
//! time; it crosses when it is at the head of the queue, its approach shows
//! green (or it is leaving the network), the downstream segment has room, and
//! the stop line has accumulated enough saturation headway (2 s of green per
//! vehicle per lane).

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::network::{active_closures, shortest_path, IntersectionIdx, SegmentIdx};
use crate::scenario::Scenario;
use crate::signals::{LoopMeasurement, PhaseMachine, SignalCommand, SignalPlan};

/// Fixed vehicle length in meters.
pub const VEHICLE_LENGTH: f64 = 5.0;
/// Saturation discharge headway: seconds of green per vehicle per lane.
pub const SATURATION_HEADWAY: f64 = 2.0;

/// Proportional fuel model; CO2 is derived from fuel at reporting time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmissionModel {
    /// Liters per second spent stopped.
    pub idle_rate: f64,
    /// Liters per meter travelled.
    pub moving_rate: f64,
    /// Grams of CO2 per liter of fuel.
    pub co2_per_liter: f64,
}

impl Default for EmissionModel {
    fn default() -> Self {
        Self {
            idle_rate: 3.0e-4,
            moving_rate: 2.014e-4,
            co2_per_liter: 2326.8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VehicleStatus {
    Pending,
    Running,
    Arrived,
}

#[derive(Debug, Clone)]
pub struct Vehicle {
    pub id: String,
    pub length: f64,
    pub route: Vec<SegmentIdx>,
    pub route_index: usize,
    pub segment_enter_time: u32,
    /// Earliest second at which the stop line can be crossed.
    pub earliest_exit: f64,
    pub status: VehicleStatus,
    /// Actual injection second (storage-delayed departures shift this).
    pub depart_time: u32,
    pub arrival_time: u32,
    pub distance_traveled: f64,
    pub fuel_used: f64,
    pub time_idling: u32,
    /// Consecutive stopped seconds on the current segment.
    pub stopped_streak: u32,
    /// Meters already credited on the current segment.
    seg_credited: f64,
    /// Tick of the last stop-line crossing; crossing and driving never both
    /// accrue in one tick.
    last_cross_tick: u32,
}

/// One segment's runtime queue.
#[derive(Debug, Clone)]
pub struct SegmentState {
    /// Vehicle indices in entry order (head discharges first).
    pub queue: VecDeque<usize>,
    pub occupied_len: f64,
    /// Discharge budget in vehicles; refills at 1/headway per lane of green.
    sat_credit: f64,
}

/// Completed-trip record for the per-vehicle ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub vehicle_id: String,
    pub depart: u32,
    pub arrive: u32,
    pub travel_time: u32,
    pub distance_m: f64,
    pub fuel_l: f64,
}

/// Full simulation state at one 1-second tick.
#[derive(Debug, Clone)]
pub struct WorldState {
    pub clock: u32,
    scenario: Arc<Scenario>,
    pub vehicles: Vec<Vehicle>,
    pub segment_states: Vec<SegmentState>,
    pub machines: Vec<PhaseMachine>,
    /// Index of the approach each segment feeds, if its end is signalized.
    approach_of: Vec<Option<(IntersectionIdx, usize)>>,
    /// Demand entries not yet injected, already due (storage-delayed).
    waiting: Vec<usize>,
    next_demand: usize,
    running: usize,
    arrived: usize,
    pub emission: EmissionModel,
    pub ledger: Vec<LedgerEntry>,
    /// Per intersection, per phase: vehicles discharged this cycle.
    cycle_counts: Vec<Vec<u32>>,
    /// Measurement from the most recently completed cycle, until consumed.
    fresh_measurements: Vec<Option<LoopMeasurement>>,
    /// Whether a controlled switch happened this tick, per intersection.
    pub switched_this_tick: Vec<bool>,
}

impl WorldState {
    pub fn new(scenario: Arc<Scenario>, emission: EmissionModel) -> Self {
        let net = &scenario.network;
        let mut approach_of = vec![None; net.segments().len()];
        for (j, t) in net.intersections().iter().enumerate() {
            for (slot, &seg) in t.incoming.iter().enumerate() {
                approach_of[seg.0] = Some((IntersectionIdx(j), slot));
            }
        }
        let machines: Vec<PhaseMachine> = net
            .intersections()
            .iter()
            .map(|t| PhaseMachine::new(scenario.plans[&t.plan_id].clone()))
            .collect();
        let cycle_counts = machines
            .iter()
            .map(|m| vec![0; m.plan.phases.len()])
            .collect();
        let segment_states = net
            .segments()
            .iter()
            .map(|s| SegmentState {
                queue: VecDeque::new(),
                occupied_len: 0.0,
                sat_credit: s.lanes as f64,
            })
            .collect();
        let n_int = machines.len();
        Self {
            clock: 0,
            scenario,
            vehicles: Vec::new(),
            segment_states,
            machines,
            approach_of,
            waiting: Vec::new(),
            next_demand: 0,
            running: 0,
            arrived: 0,
            emission,
            ledger: Vec::new(),
            cycle_counts,
            fresh_measurements: vec![None; n_int],
            switched_this_tick: vec![false; n_int],
        }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn running_vehicle_count(&self) -> usize {
        self.running
    }

    pub fn arrived_count(&self) -> usize {
        self.arrived
    }

    pub fn pending_count(&self) -> usize {
        self.scenario.demand.len() - self.vehicles.len()
    }

    /// True once every demand entry has completed its trip.
    pub fn drained(&self) -> bool {
        self.arrived == self.scenario.demand.len()
    }

    /// Consume the loop measurement from the last completed cycle, if any.
    pub fn take_measurement(&mut self, j: IntersectionIdx) -> Option<LoopMeasurement> {
        self.fresh_measurements[j.0].take()
    }

    /// Stage a plan change at the next cycle boundary.
    pub fn stage_plan(&mut self, j: IntersectionIdx, plan: SignalPlan) {
        self.machines[j.0].stage_plan(plan);
    }

    /// Hand an intersection back to its static plan at phase 0.
    pub fn reset_signal(&mut self, j: IntersectionIdx) {
        let plan = self.scenario.plan_of(j).clone();
        self.machines[j.0].reset_to(plan);
        self.cycle_counts[j.0] = vec![0; self.machines[j.0].plan.phases.len()];
    }

    /// Advance the world by one second.
    pub fn step(&mut self, controls: &[SignalCommand]) {
        assert_eq!(
            controls.len(),
            self.machines.len(),
            "controls must cover every signalized intersection"
        );
        let scenario = Arc::clone(&self.scenario);
        let clock = self.clock;
        let clockf = clock as f64;
        let closed = active_closures(&scenario.closures, clock);

        // 1. Signals advance; completed cycles publish loop measurements.
        for (j, (machine, &cmd)) in self.machines.iter_mut().zip(controls).enumerate() {
            let out = machine.tick(cmd);
            self.switched_this_tick[j] = out.switched;
            if out.cycle_completed {
                let counts = &mut self.cycle_counts[j];
                let eff: Vec<f64> = counts
                    .iter()
                    .zip(&machine.plan.phases)
                    .map(|(&c, p)| (SATURATION_HEADWAY * c as f64).min(p.green as f64))
                    .collect();
                self.fresh_measurements[j] = Some(LoopMeasurement {
                    effective_green: eff,
                    cycle_end_time: clock,
                });
                // The staged plan may have been installed at the wrap.
                counts.clear();
                counts.resize(machine.plan.phases.len(), 0);
            }
        }

        // 2. Stop-line discharge, segment by segment in id order.
        for s in 0..self.segment_states.len() {
            let seg = scenario.network.segment(SegmentIdx(s));
            let lanes = seg.lanes as f64;
            let green = match self.approach_of[s] {
                None => true,
                Some((j, slot)) => self.machines[j.0].is_green(slot),
            };
            {
                let st = &mut self.segment_states[s];
                st.sat_credit = if green {
                    (st.sat_credit + lanes / SATURATION_HEADWAY).min(lanes)
                } else {
                    lanes
                };
            }

            loop {
                let Some(&v) = self.segment_states[s].queue.front() else {
                    break;
                };
                if self.vehicles[v].earliest_exit > clockf {
                    break;
                }
                let exiting = self.vehicles[v].route_index + 1 == self.vehicles[v].route.len();
                if exiting {
                    self.finish_vehicle(s, v, clock);
                    continue;
                }
                // Reroute on encountering a closed next segment at its
                // upstream node.
                let mut next = self.vehicles[v].route[self.vehicles[v].route_index + 1];
                if closed.binary_search(&next).is_ok() {
                    match self.reroute_head(v, &closed) {
                        Some(n) => next = n,
                        None => break,
                    }
                }
                if !green {
                    break;
                }
                let next_seg = scenario.network.segment(next);
                let veh_len = self.vehicles[v].length;
                if self.segment_states[next.0].occupied_len + veh_len
                    > next_seg.storage_capacity()
                {
                    break;
                }
                if self.segment_states[s].sat_credit < 1.0 {
                    break;
                }
                // Cross the stop line.
                self.segment_states[s].sat_credit -= 1.0;
                self.segment_states[s].queue.pop_front();
                self.segment_states[s].occupied_len -= veh_len;
                if let Some((j, _)) = self.approach_of[s] {
                    let phase = self.machines[j.0].phase;
                    self.cycle_counts[j.0][phase] += 1;
                }
                let closeout = seg.length - self.vehicles[v].seg_credited;
                let moving_rate = self.emission.moving_rate;
                {
                    let veh = &mut self.vehicles[v];
                    veh.distance_traveled += closeout;
                    veh.fuel_used += moving_rate * closeout;
                    veh.route_index += 1;
                    veh.segment_enter_time = clock;
                    veh.earliest_exit = clockf + next_seg.free_flow_time();
                    veh.seg_credited = 0.0;
                    veh.stopped_streak = 0;
                    veh.last_cross_tick = clock;
                }
                self.segment_states[next.0].queue.push_back(v);
                self.segment_states[next.0].occupied_len += veh_len;
            }
        }

        // 3. Injection of due demand, storage permitting.
        while self.next_demand < scenario.demand.len()
            && scenario.demand[self.next_demand].depart <= clock
        {
            self.waiting.push(self.next_demand);
            self.next_demand += 1;
        }
        let due = std::mem::take(&mut self.waiting);
        for d in due {
            if !self.try_inject(d, clock, &closed) {
                self.waiting.push(d);
            }
        }

        // 4. Per-vehicle accrual: idle seconds or credited meters.
        for s in 0..self.segment_states.len() {
            let seg = scenario.network.segment(SegmentIdx(s));
            let mut prev_stopped = false;
            // Queue entries are copied out to keep the borrow checker happy;
            // queues are short-lived per tick.
            let q: Vec<usize> = self.segment_states[s].queue.iter().copied().collect();
            for v in q {
                let stopped = self.vehicles[v].earliest_exit <= clockf || prev_stopped;
                prev_stopped = stopped;
                if self.vehicles[v].last_cross_tick == clock {
                    continue;
                }
                let (moved, idled) = if stopped {
                    (0.0, true)
                } else {
                    let remaining = seg.length - self.vehicles[v].seg_credited;
                    (seg.speed_limit.min(remaining), false)
                };
                let veh = &mut self.vehicles[v];
                veh.seg_credited += moved;
                if idled {
                    veh.time_idling += 1;
                    veh.stopped_streak += 1;
                } else {
                    veh.stopped_streak = 0;
                }
                accrue_emissions(veh, moved, idled, &self.emission);
            }
        }

        self.clock = clock + 1;
    }

    fn finish_vehicle(&mut self, s: usize, v: usize, clock: u32) {
        let seg = self.scenario.network.segment(SegmentIdx(s));
        self.segment_states[s].queue.pop_front();
        self.segment_states[s].occupied_len -= self.vehicles[v].length;
        let closeout = seg.length - self.vehicles[v].seg_credited;
        let moving_rate = self.emission.moving_rate;
        let veh = &mut self.vehicles[v];
        veh.distance_traveled += closeout;
        veh.fuel_used += moving_rate * closeout;
        veh.seg_credited = seg.length;
        veh.status = VehicleStatus::Arrived;
        veh.arrival_time = clock;
        veh.last_cross_tick = clock;
        self.running -= 1;
        self.arrived += 1;
        self.ledger.push(LedgerEntry {
            vehicle_id: veh.id.clone(),
            depart: veh.depart_time,
            arrive: clock,
            travel_time: clock - veh.depart_time,
            distance_m: veh.distance_traveled,
            fuel_l: veh.fuel_used,
        });
    }

    /// Recompute the route of the queue head at `v` from its upcoming node,
    /// keeping the travelled prefix. Returns the new next segment, or `None`
    /// if every alternative is closed.
    fn reroute_head(&mut self, v: usize, closed: &[SegmentIdx]) -> Option<SegmentIdx> {
        let veh = &self.vehicles[v];
        let here = self.scenario.network.segment(veh.route[veh.route_index]).to;
        let dest = self
            .scenario
            .network
            .segment(*veh.route.last().expect("route is never empty"))
            .to;
        let suffix = shortest_path(&self.scenario.network, here, dest, closed).ok()?;
        let next = *suffix.first()?;
        let veh = &mut self.vehicles[v];
        veh.route.truncate(veh.route_index + 1);
        veh.route.extend(suffix);
        Some(next)
    }

    fn try_inject(&mut self, d: usize, clock: u32, closed: &[SegmentIdx]) -> bool {
        let entry = &self.scenario.demand[d];
        let mut route = match shortest_path(
            &self.scenario.network,
            entry.origin,
            entry.destination,
            &[],
        ) {
            Ok(r) => r,
            Err(_) => return false,
        };
        if route.iter().any(|s| closed.binary_search(s).is_ok()) {
            match shortest_path(&self.scenario.network, entry.origin, entry.destination, closed) {
                Ok(r) => route = r,
                Err(_) => return false,
            }
        }
        let first = route[0];
        let seg = self.scenario.network.segment(first);
        let st = &mut self.segment_states[first.0];
        if st.occupied_len + VEHICLE_LENGTH > seg.storage_capacity() {
            return false;
        }
        let v = self.vehicles.len();
        st.queue.push_back(v);
        st.occupied_len += VEHICLE_LENGTH;
        self.vehicles.push(Vehicle {
            id: entry.vehicle_id.clone(),
            length: VEHICLE_LENGTH,
            route,
            route_index: 0,
            segment_enter_time: clock,
            earliest_exit: clock as f64 + seg.free_flow_time(),
            status: VehicleStatus::Running,
            depart_time: clock,
            arrival_time: 0,
            distance_traveled: 0.0,
            fuel_used: 0.0,
            time_idling: 0,
            stopped_streak: 0,
            seg_credited: 0.0,
            last_cross_tick: u32::MAX,
        });
        self.running += 1;
        true
    }

    /// Mean and max occupancy over all segments.
    pub fn occupancy_summary(&self) -> (f64, f64) {
        let n = self.segment_states.len().max(1) as f64;
        let mut sum = 0.0;
        let mut max = 0.0_f64;
        for s in 0..self.segment_states.len() {
            let o = occupancy(self, SegmentIdx(s));
            sum += o;
            max = max.max(o);
        }
        (sum / n, max)
    }
}

/// Ratio of stored vehicle length to storage capacity, clamped to `[0, 1]`.
pub fn occupancy(world: &WorldState, seg: SegmentIdx) -> f64 {
    let s = world.scenario().network.segment(seg);
    (world.segment_states[seg.0].occupied_len / s.storage_capacity()).clamp(0.0, 1.0)
}

/// Average speed over vehicles on the segment: the speed limit while still
/// traversing and not queued behind a stopped vehicle, else 0. An empty
/// segment reports the speed limit.
pub fn mean_speed(world: &WorldState, seg: SegmentIdx) -> f64 {
    let s = world.scenario().network.segment(seg);
    let st = &world.segment_states[seg.0];
    if st.queue.is_empty() {
        return s.speed_limit;
    }
    let clockf = world.clock as f64;
    let mut prev_stopped = false;
    let mut total = 0.0;
    for &v in &st.queue {
        let stopped = world.vehicles[v].earliest_exit <= clockf || prev_stopped;
        prev_stopped = stopped;
        if !stopped {
            total += s.speed_limit;
        }
    }
    total / st.queue.len() as f64
}

/// Estimated distance of each queued vehicle from the stop line: the larger
/// of its remaining free-flow driving distance and the stacked length of the
/// vehicles ahead of it.
fn stopline_distances(world: &WorldState, seg: SegmentIdx) -> Vec<(usize, f64)> {
    let s = world.scenario().network.segment(seg);
    let clockf = world.clock as f64;
    let mut stacked = 0.0;
    let mut out = Vec::with_capacity(world.segment_states[seg.0].queue.len());
    for &v in &world.segment_states[seg.0].queue {
        let veh = &world.vehicles[v];
        let driving = (veh.earliest_exit - clockf).max(0.0) * s.speed_limit;
        out.push((v, driving.max(stacked).min(s.length)));
        stacked += veh.length;
    }
    out
}

/// Occupancy over only the `window` meters nearest the stop line.
pub fn sensed_occupancy(world: &WorldState, seg: SegmentIdx, window: f64) -> f64 {
    let s = world.scenario().network.segment(seg);
    let window = window.min(s.length);
    if window <= 0.0 {
        return 0.0;
    }
    let sensed_len: f64 = stopline_distances(world, seg)
        .iter()
        .filter(|&&(_, d)| d <= window)
        .map(|&(v, _)| world.vehicles[v].length)
        .sum();
    (sensed_len / (s.lanes as f64 * window)).clamp(0.0, 1.0)
}

/// Mean speed over only vehicles within `window` meters of the stop line.
pub fn sensed_mean_speed(world: &WorldState, seg: SegmentIdx, window: f64) -> f64 {
    let s = world.scenario().network.segment(seg);
    let window = window.min(s.length);
    let clockf = world.clock as f64;
    let mut prev_stopped = false;
    let mut total = 0.0;
    let mut count = 0usize;
    for (v, d) in stopline_distances(world, seg) {
        let stopped = world.vehicles[v].earliest_exit <= clockf || prev_stopped;
        prev_stopped = stopped;
        if d <= window {
            count += 1;
            if !stopped {
                total += s.speed_limit;
            }
        }
    }
    if count == 0 {
        s.speed_limit
    } else {
        total / count as f64
    }
}

/// Position of each vehicle measured from the segment entrance, for
/// grid-cell image features.
pub fn entrance_positions(world: &WorldState, seg: SegmentIdx) -> Vec<(usize, f64)> {
    let s = world.scenario().network.segment(seg);
    stopline_distances(world, seg)
        .into_iter()
        .map(|(v, d)| (v, (s.length - d).clamp(0.0, s.length)))
        .collect()
}

/// Adds one tick of fuel use: `moving_rate x moved` plus the idle rate when
/// the vehicle spent the tick stopped.
pub fn accrue_emissions(vehicle: &mut Vehicle, moved: f64, idled: bool, model: &EmissionModel) {
    debug_assert!(moved >= 0.0);
    vehicle.fuel_used += model.moving_rate * moved + if idled { model.idle_rate } else { 0.0 };
    vehicle.distance_traveled += moved;
}
