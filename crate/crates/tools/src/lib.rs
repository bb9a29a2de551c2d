//! File formats and the `psr` command line for the `psr-core` engine.
//!
//! Events and detector streams are schema-versioned JSON Lines; reports are
//! JSON documents with flat CSV companions for plotting and spreadsheets.

pub mod cli;
pub mod error;
pub mod jsonl;
pub mod procedure_file;
pub mod records;
pub mod report;
pub mod sim_config;

pub use crate::error::{Result, ToolError};
