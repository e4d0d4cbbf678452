//! Command implementations and the gateway HTTP API server behind the
//! `hearth` binary.

pub mod commands;
pub mod server;
