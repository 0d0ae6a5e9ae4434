//! Simulation core for scheduling task graphs across federated endpoints.

pub mod dag;
pub mod endpoint;
pub mod network;
pub mod profiler;
pub mod scheduler;
pub mod data;
pub mod rng;
pub mod scenario;
pub mod metrics;
pub mod sim;
pub mod builtin;
