//! Island-model evolutionary program search driven by language-model
//! mutation operators.

pub mod api;
pub mod archive;
pub mod bandit;
pub mod config;
pub mod journal;
pub mod llm;
pub mod mutation;
pub mod novelty;
pub mod report;
pub mod runner;
pub mod sampling;
pub mod scheduler;
pub mod scratchpad;
pub mod tasks;
