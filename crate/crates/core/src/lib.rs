//! Desk-scale urban traffic laboratory: a deterministic queue-based
//! simulator, signal phase machines, from-scratch DRL learners, and the
//! drone-bounded control experiment harness built on top of them.

pub mod episode;
pub mod error;
pub mod grid;
pub mod lab;
pub mod metrics;
pub mod network;
pub mod rl;
pub mod scenario;
pub mod signals;
pub mod sim;
pub mod uav;

pub use error::{Error, Result};
pub use lab::{ExperimentConfig, Method};
pub use network::{
    ClosureEvent, DemandEntry, IntersectionIdx, NodeIdx, RoadNetwork, RoadSegment, SegmentIdx,
};
pub use scenario::{load_scenario, serialize_scenario, Scenario};
pub use signals::{PhaseMachine, SignalCommand, SignalPlan};
pub use sim::{EmissionModel, WorldState};
