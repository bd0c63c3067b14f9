//! Criterion benchmark harness for the hot simulation and learning paths.
