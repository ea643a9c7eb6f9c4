//! Exact and sampling baselines used to validate the label-based solver:
//! the full-information MDP, the memoryless count-state solver, and
//! state-aggregated Q-learning.

pub mod fullinfo;
pub mod geometric;
pub mod qlearn;
