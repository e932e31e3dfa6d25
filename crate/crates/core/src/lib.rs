//! Macroscopic Payne-Whitham traffic simulation on road networks with
//! fixed-time traffic signals, and the pipeline around it: fundamental-diagram
//! calibration, dataset generation over random signal plans, surrogate models,
//! and differential-evolution search for signal timings.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod fixtures;
pub mod fundamental;
pub mod heatmap;
pub mod metrics;
pub mod network;
pub mod optimizer;
pub mod signals;
mod simplex;
pub mod solver;
pub mod surrogate;

pub use fundamental::FdParams;
pub use metrics::{CongestionMetrics, QueueFnParams};
pub use network::RoadNetwork;
pub use signals::{ConfigSpace, IntersectionSignal, SignalConfiguration};
pub use solver::{SimParams, SimState, Simulator};
