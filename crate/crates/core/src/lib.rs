//! Complete EFX allocations for agents with at most three distinct additive
//! valuations.
//!
//! The solver runs a terminating rewrite system over partial EFX allocations.
//! Each step either strictly raises the potential (the poorest group-A
//! agent's value) or Pareto-improves the allocation, and every step is
//! checked as it fires. [`oracle`] holds brute-force checks that share no
//! code with the solver.

pub mod allocation;
pub mod bundle;
pub mod cases;
pub mod champion;
pub mod cli;
pub mod competition;
pub mod envy;
pub mod error;
pub mod instance;
pub mod io;
pub mod oracle;
pub mod rewrite;
pub mod solver;

pub use allocation::{Allocation, Claim, ProgressMeasure, TraceEvent};
pub use bundle::{Bundle, GoodId};
pub use error::{Error, SolveError};
pub use instance::{parse_instance, AgentId, GroupId, Instance, Scale};
pub use solver::{solve, AssertionLevel, Config, Solution};
