//! Simulation of a two-device storage hierarchy with interchangeable
//! placement policies, synthetic and trace-driven workloads, and an
//! experiment harness.

pub mod addrspace;
pub mod baselines;
pub mod devsim;
pub mod exec;
pub mod harness;
pub mod most;
pub mod policy;
pub mod time;
pub mod workloads;
