//! Tooling for building and auditing agentic training corpora.
//!
//! The crate is organised around one trajectory model shared by every stage:
//!
//! - [`trajectory`]: the turn-level data model and its canonical ShareGPT-style codec.
//! - [`env`]: the four agent environments as deterministic, steppable state machines.
//! - [`policy`]: the gateway between environments and any decision-making policy.
//! - [`pipeline`]: the three-tier generation procedure and corpus assembly.
//! - [`validate`]: structural and behavioral trajectory filters.
//! - [`eval`]: answer matching, decontamination, evaluation and routing analysis.
//! - [`config`] and [`cli`]: the `forge` command-line entry point.
//!
//! Runnable walkthroughs for each capability live in `examples/`.

pub mod cli;
pub mod config;
pub mod env;
pub mod eval;
pub mod pipeline;
pub mod policy;
pub mod seed;
pub mod synthetic;
pub mod trajectory;
pub mod validate;
