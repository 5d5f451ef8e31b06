//! Dataset formats, report serialization and the subcommands behind the
//! `triview` binary.

pub mod commands;
pub mod error;
pub mod io;
pub mod ply;
pub mod report;
pub mod split;

pub use commands::{run, Cli, Command};
pub use error::{CliError, CliResult};
