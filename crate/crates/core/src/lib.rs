//! Joint estimation of event occurrence and reporting delay from daily
//! run-off triangles, with nowcasts, diagnostics and backtests.

pub mod calendar;
pub mod chain_ladder;
pub mod cli;
pub mod direct;
pub mod em;
pub mod error;
pub mod evaluation;
pub mod glm;
pub mod inference;
pub mod io;
pub mod reporting;
pub mod simulate;
pub mod terms;
pub mod triangle;

pub use error::{Error, Result};
