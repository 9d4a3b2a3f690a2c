//! Library side of the `fbqlink` binary, exposed for integration tests.

pub mod commands;
pub mod config;
