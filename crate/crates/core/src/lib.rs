//! Adversarial robustness lab for command-and-control RL agents.

pub mod autodiff;
pub mod env;
pub mod scenario;
pub mod policy;
pub mod trainer;
pub mod attack;
pub mod evaluation;
pub mod testkit;
pub mod config;
pub mod cli;
