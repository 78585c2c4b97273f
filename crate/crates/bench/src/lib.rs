//! Benchmark harness for the nbtree index: workload generation, measured runs
//! with CSV output, parameter sweeps, a structural trace and cost tables.

pub mod costreport;
pub mod runner;
pub mod sweep;
pub mod trace;
pub mod workload;
