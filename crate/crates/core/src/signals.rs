//! Traffic-light plans, runtime phase machines, and saturation-based plan
//! selection.
//!
//! A plan is an ordered list of green phases. Every green is followed by a
//! fixed 3-second yellow and, where configured, a 5-second all-red before the
//! next phase begins. Under external binary control the green holds until a
//! switch command arrives; the interphases are never skippable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const YELLOW_SECONDS: u32 = 3;
pub const ALLRED_SECONDS: u32 = 5;
/// Floor on controlled green length; blocks per-second switch thrashing.
pub const DEFAULT_MIN_GREEN: u32 = 5;

/// One green phase: duration plus the approaches it releases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub green: u32,
    /// One flag per incoming approach, in the intersection's declared order.
    pub mask: Vec<bool>,
    pub allred_after: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalPlan {
    pub id: String,
    pub phases: Vec<Phase>,
}

impl SignalPlan {
    pub fn cycle_length(&self) -> u32 {
        self.phases
            .iter()
            .map(|p| p.green + YELLOW_SECONDS + if p.allred_after { ALLRED_SECONDS } else { 0 })
            .sum()
    }

    /// Returns an error unless every approach in `0..width` gets green in at
    /// least one phase and every mask matches `width`.
    pub fn validate(&self, width: usize) -> Result<()> {
        if self.phases.is_empty() {
            return Err(Error::Validation(format!("plan '{}' has no phases", self.id)));
        }
        let mut served = vec![false; width];
        for (i, p) in self.phases.iter().enumerate() {
            if p.green == 0 {
                return Err(Error::Validation(format!(
                    "plan '{}' phase {i} has zero green",
                    self.id
                )));
            }
            if p.mask.len() != width {
                return Err(Error::Validation(format!(
                    "plan '{}' phase {i} mask width {} does not match {} approaches",
                    self.id,
                    p.mask.len(),
                    width
                )));
            }
            for (s, &m) in served.iter_mut().zip(&p.mask) {
                *s |= m;
            }
        }
        if let Some(miss) = served.iter().position(|s| !s) {
            return Err(Error::Validation(format!(
                "plan '{}' never gives green to approach {miss}",
                self.id
            )));
        }
        Ok(())
    }

    /// SCATS candidate set: the base plan plus one variant per phase with that
    /// phase's green grown 20% at the expense of the others, cycle length
    /// preserved.
    pub fn scats_variants(&self) -> Vec<SignalPlan> {
        let mut out = vec![self.clone()];
        let n = self.phases.len();
        if n < 2 {
            return out;
        }
        for boosted in 0..n {
            let delta = ((self.phases[boosted].green as f64) * 0.2).round() as u32;
            if delta == 0 {
                continue;
            }
            let mut variant = self.clone();
            variant.id = format!("{}+{}", self.id, boosted);
            // Spread the donated green over the other phases, floored at 5 s.
            let mut remaining = delta;
            let share = delta / (n as u32 - 1);
            for (i, phase) in variant.phases.iter_mut().enumerate() {
                if i == boosted {
                    continue;
                }
                let take = share.min(phase.green.saturating_sub(5)).min(remaining);
                phase.green -= take;
                remaining -= take;
            }
            // Leftover from rounding/floors goes back to the last donor.
            for (i, phase) in variant.phases.iter_mut().enumerate().rev() {
                if remaining == 0 {
                    break;
                }
                if i == boosted {
                    continue;
                }
                let take = remaining.min(phase.green.saturating_sub(5));
                phase.green -= take;
                remaining -= take;
            }
            variant.phases[boosted].green += delta - remaining;
            if variant.cycle_length() == self.cycle_length() && variant != *self {
                out.push(variant);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubState {
    Green,
    Yellow,
    AllRed,
}

/// Per-tick command for one intersection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalCommand {
    /// Advance the fixed cycle.
    Fixed,
    /// Binary control: 0 holds the current green, 1 requests the next phase.
    Act(u8),
}

/// Runtime state of one intersection's signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseMachine {
    pub plan: SignalPlan,
    pub phase: usize,
    pub sub: SubState,
    pub elapsed: u32,
    pub min_green: u32,
    /// Installed at the next cycle boundary.
    pending_plan: Option<SignalPlan>,
}

/// What a single tick did; the simulator uses these to drive loop
/// measurements and signal logs.
#[derive(Debug, Clone, Copy, Default)]
pub struct TickOutcome {
    pub cycle_completed: bool,
    /// A controlled switch out of green began this tick.
    pub switched: bool,
}

impl PhaseMachine {
    pub fn new(plan: SignalPlan) -> Self {
        Self {
            plan,
            phase: 0,
            sub: SubState::Green,
            elapsed: 0,
            min_green: DEFAULT_MIN_GREEN,
            pending_plan: None,
        }
    }

    /// True when `approach` (index into the intersection's incoming order)
    /// currently has a green signal.
    pub fn is_green(&self, approach: usize) -> bool {
        self.sub == SubState::Green && self.plan.phases[self.phase].mask[approach]
    }

    /// Stage a plan to take over at the next cycle boundary.
    pub fn stage_plan(&mut self, plan: SignalPlan) {
        self.pending_plan = Some(plan);
    }

    pub fn pending_plan_id(&self) -> Option<&str> {
        self.pending_plan.as_ref().map(|p| p.id.as_str())
    }

    /// Reset to the start of the given plan (green of phase 0).
    pub fn reset_to(&mut self, plan: SignalPlan) {
        self.plan = plan;
        self.phase = 0;
        self.sub = SubState::Green;
        self.elapsed = 0;
        self.pending_plan = None;
    }

    /// Advance one second on the fixed cycle.
    pub fn tick_fixed(&mut self) -> TickOutcome {
        self.tick(SignalCommand::Fixed)
    }

    /// Advance one second under binary control. Action 1 during green ends the
    /// green once `min_green` is satisfied; otherwise it is ignored. The
    /// interphases always run to completion.
    pub fn apply_action(&mut self, action: u8) -> TickOutcome {
        self.tick(SignalCommand::Act(action))
    }

    pub fn tick(&mut self, cmd: SignalCommand) -> TickOutcome {
        let mut outcome = TickOutcome::default();
        self.elapsed += 1;
        match self.sub {
            SubState::Green => {
                let expire = match cmd {
                    SignalCommand::Fixed => self.elapsed >= self.plan.phases[self.phase].green,
                    SignalCommand::Act(a) => a == 1 && self.elapsed >= self.min_green,
                };
                if expire {
                    self.sub = SubState::Yellow;
                    self.elapsed = 0;
                    outcome.switched = matches!(cmd, SignalCommand::Act(_));
                }
            }
            SubState::Yellow => {
                if self.elapsed >= YELLOW_SECONDS {
                    if self.plan.phases[self.phase].allred_after {
                        self.sub = SubState::AllRed;
                        self.elapsed = 0;
                    } else {
                        outcome.cycle_completed = self.enter_next_green();
                    }
                }
            }
            SubState::AllRed => {
                if self.elapsed >= ALLRED_SECONDS {
                    outcome.cycle_completed = self.enter_next_green();
                }
            }
        }
        outcome
    }

    fn enter_next_green(&mut self) -> bool {
        let wrapped = self.phase + 1 == self.plan.phases.len();
        if wrapped {
            self.phase = 0;
            if let Some(next) = self.pending_plan.take() {
                self.plan = next;
            }
        } else {
            self.phase += 1;
        }
        self.sub = SubState::Green;
        self.elapsed = 0;
        wrapped
    }
}

/// Stop-line loop data aggregated over one completed cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopMeasurement {
    /// Seconds of green actually occupied by discharging vehicles, per phase.
    pub effective_green: Vec<f64>,
    pub cycle_end_time: u32,
}

/// Sum over phases of effective green divided by allotted green.
pub fn degree_of_saturation(m: &LoopMeasurement, plan: &SignalPlan) -> Result<f64> {
    if m.effective_green.len() != plan.phases.len() {
        return Err(Error::PhaseMismatch {
            measured: m.effective_green.len(),
            plan: plan.phases.len(),
        });
    }
    Ok(m.effective_green
        .iter()
        .zip(&plan.phases)
        .map(|(&eff, p)| eff / p.green as f64)
        .sum())
}

/// Pick the candidate plan with the minimum degree of saturation; ties break
/// on the lowest plan id.
pub fn scats_select<'a>(plans: &'a [SignalPlan], m: &LoopMeasurement) -> Result<&'a SignalPlan> {
    let mut best: Option<(&SignalPlan, f64)> = None;
    for plan in plans {
        let ds = degree_of_saturation(m, plan)?;
        best = match best {
            None => Some((plan, ds)),
            Some((bp, bds)) => {
                if ds < bds || (ds == bds && plan.id < bp.id) {
                    Some((plan, ds))
                } else {
                    Some((bp, bds))
                }
            }
        };
    }
    best.map(|(p, _)| p)
        .ok_or_else(|| Error::Validation("scats_select needs at least one candidate plan".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_phase_plan(g0: u32, g1: u32, allred: bool) -> SignalPlan {
        SignalPlan {
            id: "P".into(),
            phases: vec![
                Phase {
                    green: g0,
                    mask: vec![true, false],
                    allred_after: allred,
                },
                Phase {
                    green: g1,
                    mask: vec![false, true],
                    allred_after: allred,
                },
            ],
        }
    }

    #[test]
    fn green_rolls_to_yellow_at_duration() {
        let mut m = PhaseMachine::new(two_phase_plan(27, 27, true));
        m.elapsed = 26;
        m.tick_fixed();
        assert_eq!(m.sub, SubState::Yellow);
        assert_eq!(m.elapsed, 0);
        assert_eq!(m.phase, 0);
    }

    #[test]
    fn yellow_rolls_to_allred_when_configured() {
        let mut m = PhaseMachine::new(two_phase_plan(27, 27, true));
        m.sub = SubState::Yellow;
        m.elapsed = 2;
        m.tick_fixed();
        assert_eq!(m.sub, SubState::AllRed);
        assert_eq!(m.elapsed, 0);
    }

    #[test]
    fn last_allred_wraps_to_phase_zero() {
        let mut m = PhaseMachine::new(two_phase_plan(27, 27, true));
        m.phase = 1;
        m.sub = SubState::AllRed;
        m.elapsed = 4;
        let out = m.tick_fixed();
        assert_eq!(m.phase, 0);
        assert_eq!(m.sub, SubState::Green);
        assert_eq!(m.elapsed, 0);
        assert!(out.cycle_completed);
    }

    #[test]
    fn fixed_plan_reproduces_cycle_length_exactly() {
        let plan = two_phase_plan(30, 40, true);
        let cycle = plan.cycle_length();
        assert_eq!(cycle, 30 + 3 + 5 + 40 + 3 + 5);
        let mut m = PhaseMachine::new(plan);
        for rep in 0..3 {
            for t in 0..cycle {
                let out = m.tick_fixed();
                assert_eq!(
                    out.cycle_completed,
                    t == cycle - 1,
                    "rep {rep} tick {t} unexpectedly completed a cycle"
                );
            }
        }
    }

    #[test]
    fn action_switch_respects_min_green() {
        let mut m = PhaseMachine::new(two_phase_plan(27, 27, false));
        m.min_green = 10;
        m.elapsed = 4;
        m.apply_action(1);
        assert_eq!(m.sub, SubState::Green);
        assert_eq!(m.elapsed, 5);

        m.elapsed = 12;
        let out = m.apply_action(1);
        assert_eq!(m.sub, SubState::Yellow);
        assert!(out.switched);
    }

    #[test]
    fn action_during_yellow_is_ignored() {
        let mut m = PhaseMachine::new(two_phase_plan(27, 27, false));
        m.sub = SubState::Yellow;
        m.elapsed = 0;
        m.apply_action(1);
        assert_eq!(m.sub, SubState::Yellow);
        assert_eq!(m.elapsed, 1);
    }

    #[test]
    fn hold_keeps_green_past_plan_duration() {
        let mut m = PhaseMachine::new(two_phase_plan(27, 27, false));
        for _ in 0..100 {
            m.apply_action(0);
        }
        assert_eq!(m.sub, SubState::Green);
        assert_eq!(m.elapsed, 100);
    }

    #[test]
    fn degree_of_saturation_sums_phase_ratios() {
        let plan = two_phase_plan(30, 40, false);
        let m = LoopMeasurement {
            effective_green: vec![15.0, 10.0],
            cycle_end_time: 90,
        };
        assert!((degree_of_saturation(&m, &plan).unwrap() - 0.75).abs() < 1e-12);

        let empty = LoopMeasurement {
            effective_green: vec![0.0, 0.0],
            cycle_end_time: 90,
        };
        assert_eq!(degree_of_saturation(&empty, &plan).unwrap(), 0.0);

        let saturated = LoopMeasurement {
            effective_green: vec![30.0, 40.0],
            cycle_end_time: 90,
        };
        assert!((degree_of_saturation(&saturated, &plan).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn degree_of_saturation_rejects_phase_mismatch() {
        let plan = two_phase_plan(30, 40, false);
        let m = LoopMeasurement {
            effective_green: vec![15.0],
            cycle_end_time: 90,
        };
        assert!(matches!(
            degree_of_saturation(&m, &plan),
            Err(Error::PhaseMismatch { .. })
        ));
    }

    #[test]
    fn scats_select_takes_argmin_then_lowest_id() {
        let mut a = two_phase_plan(30, 40, false);
        a.id = "A".into();
        let mut b = two_phase_plan(40, 30, false);
        b.id = "B".into();
        let m = LoopMeasurement {
            effective_green: vec![30.0, 12.0],
            cycle_end_time: 90,
        };
        // DS(A) = 30/30 + 12/40 = 1.3, DS(B) = 30/40 + 12/30 = 1.15.
        assert_eq!(scats_select(&[a.clone(), b.clone()], &m).unwrap().id, "B");

        // Singleton.
        assert_eq!(scats_select(&[a.clone()], &m).unwrap().id, "A");

        // Identical plans under different ids tie; lowest id wins.
        let mut a2 = a.clone();
        a2.id = "1".into();
        let mut a3 = a.clone();
        a3.id = "2".into();
        assert_eq!(scats_select(&[a3, a2], &m).unwrap().id, "1");
    }

    #[test]
    fn scats_variants_preserve_cycle_length() {
        let plan = two_phase_plan(37, 37, true);
        let variants = plan.scats_variants();
        assert_eq!(variants.len(), 3);
        for v in &variants {
            assert_eq!(v.cycle_length(), plan.cycle_length());
        }
        assert_eq!(variants[1].phases[0].green, 44);
        assert_eq!(variants[1].phases[1].green, 30);
    }

    #[test]
    fn controlled_switch_always_passes_through_interphases() {
        // Property-style sweep over action patterns: count consecutive
        // non-green seconds between greens.
        for pattern in 0u32..64 {
            let mut plan = two_phase_plan(27, 27, (pattern & 1) == 1);
            plan.phases[1].allred_after = plan.phases[0].allred_after;
            let expect = YELLOW_SECONDS + if plan.phases[0].allred_after { ALLRED_SECONDS } else { 0 };
            let mut m = PhaseMachine::new(plan);
            let mut non_green_run = 0;
            for t in 0..500u32 {
                let action = ((pattern >> (t % 6)) & 1) as u8;
                m.apply_action(action);
                if m.sub == SubState::Green {
                    if non_green_run > 0 {
                        assert_eq!(non_green_run, expect, "pattern {pattern} tick {t}");
                    }
                    non_green_run = 0;
                } else {
                    non_green_run += 1;
                }
            }
        }
    }
}
