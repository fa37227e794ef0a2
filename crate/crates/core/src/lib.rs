//! Fault-tolerant spiking networks with astrocyte-driven self-repair.
//!
//! The crate covers the neuron and astrocyte dynamics, sparse layered
//! networks, fault injection, the repair controller, astrocyte placement, an
//! associative-memory benchmark, mesh routing and energy accounting, plus the
//! run pipeline that ties them into reproducible experiments.

pub mod config;
pub mod dynamics;
pub mod energy;
pub mod fault;
pub mod memory;
pub mod netio;
pub mod network;
pub mod oracle;
pub mod pipeline;
pub mod placement;
pub mod repair;
pub mod routing;
pub mod sim;
