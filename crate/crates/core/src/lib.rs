//! Deterministic simulator for time-triggered federated learning over an
//! unreliable FDMA uplink, with FedAvg, FedAsync and FedAT baselines.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregation;
pub mod allocator;
pub mod bound;
pub mod config;
pub mod datagen;
pub mod engine;
pub mod learner;
pub mod metrics;
pub mod numerics;
pub mod rng;
pub mod wireless;
