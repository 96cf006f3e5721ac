//! Multi-agent kernel generation engine.
//!
//! A Designer turns an operator description into a [`sketch`], a Coder lowers
//! the sketch to a target language, a Verifier checks the result against the
//! reference [`interp`]reter, and a Conductor routes failures back to the
//! right agent. [`evolve`] wraps the loop in an island-model search and
//! [`bench`] measures the whole thing over a small operator suite.

pub mod exec;
pub mod interp;
pub mod sketch;
pub mod task;
pub mod verify;
pub mod agents;
pub mod bench;
pub mod knowledge;
pub mod retrieval;
pub mod conductor;
pub mod evolve;
