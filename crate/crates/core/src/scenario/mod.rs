//! Declarative scenario runner.
//!
//! A scenario file describes sites, the trap, the optical delivery
//! network, drives and a plan; [`run_scenario`] executes the plan and
//! writes traces, fits, voltage solutions and a report. All randomness
//! derives from one root seed through labelled child seeds, so identical
//! inputs give byte-identical outputs.

mod config;
mod run;

pub use config::*;
pub use run::*;
