//! Chain-of-symbolic-regression toolkit.
//!
//! Dimensional analysis, an evolutionary expression search with three
//! specialised losses, and an orchestrator that assembles layered
//! "knowledge chains" from data.

pub mod cases;
pub mod chain;
pub mod dataset;
pub mod dims;
pub mod engine;
pub mod expr;
pub mod losses;
pub mod polyfit;
