//! Simulator for a node-local in-memory storage tier whose capacity is
//! steered by a proportional controller while a bursty compute workload
//! competes for the same physical memory.

pub mod chart;
pub mod control;
pub mod runner;
pub mod scenario;
pub mod sim;
pub mod storage;
pub mod telemetry;
pub mod units;
pub mod workload;
