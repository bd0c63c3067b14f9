use thiserror::Error;

/// Errors produced by scenario loading, routing, and the control laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("no path from {origin} to {destination} with current closures")]
    NoPath { origin: String, destination: String },

    #[error("unknown node '{0}'")]
    UnknownNode(String),

    #[error("unknown segment '{0}'")]
    UnknownSegment(String),

    #[error("unknown plan '{0}'")]
    UnknownPlan(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("phase count mismatch: measurement has {measured}, plan has {plan}")]
    PhaseMismatch { measured: usize, plan: usize },

    #[error("insufficient samples: buffer holds {have}, need {need}")]
    InsufficientSamples { have: usize, need: usize },

    #[error("empty iteration: control horizon is zero")]
    EmptyIteration,

    #[error("empty ledger: no completed trips to aggregate")]
    EmptyLedger,

    #[error("zero total distance: emission rates undefined")]
    ZeroDistance,

    #[error("intersection '{0}' is outside the control-centre radius")]
    OutsideRadius(String),

    #[error("requested {requested} intersections but only {available} are signalized")]
    NotEnoughIntersections { requested: usize, available: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("simulation did not drain within {0} ticks (possible gridlock)")]
    Stalled(u32),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
