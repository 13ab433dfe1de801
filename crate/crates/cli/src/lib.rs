//! Library surface of the batch CLI, exposed so integration tests can drive
//! the full simulate → fit → classify → evaluate loop in-process.

pub mod commands;
pub mod config;

pub use commands::{
    cmd_classify, cmd_evaluate, cmd_fit, cmd_simulate, exit_code_for, load_collection, OutputDir,
};
pub use config::{ConfigError, RunConfig};
