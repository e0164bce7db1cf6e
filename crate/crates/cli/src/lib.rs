//! Library side of the `difftse` command: configuration, inference, evaluation
//! and the subcommands, shared with the integration tests.

pub mod commands;
pub mod config;
pub mod error;
pub mod eval;
pub mod inference;
