//! Offline reinforcement learning with a Morse-network behavioral supervisor.

pub mod agent;
pub mod envdata;
pub mod harness;
pub mod morse;
pub mod nn;
