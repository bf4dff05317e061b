//! The `ganblend` command line and its local HTTP service.

pub mod commands;
pub mod service;

pub use crate::commands::{run, Cli, Command};
