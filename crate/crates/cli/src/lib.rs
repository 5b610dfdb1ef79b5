//! The `emoforge` command-line tool and its review service.

pub mod commands;
pub mod server;
