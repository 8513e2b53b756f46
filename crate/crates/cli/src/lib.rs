//! Library side of the command-line front end (the binary in `main.rs` is a
//! thin wrapper, so commands are directly testable).

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use commands::{cmd_montecarlo, cmd_run, cmd_simulate, cmd_tune, TuneTarget};
pub use config::RunConfig;
pub use error::{CliError, Result};
