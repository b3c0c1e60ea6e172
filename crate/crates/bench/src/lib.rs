//! Batch runner for the CHO simulator: presets, sweeps, trace analysis and
//! SVG plots.

pub mod cli;
pub mod commands;
pub mod plot;
pub mod sweep;

use anyhow::Result;

use cli::{Cli, Command};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Run(a) => commands::cmd_run(cli, a).map(drop),
        Command::Sweep(a) => commands::cmd_sweep(cli, a).map(drop),
        Command::Analyze(a) => commands::cmd_analyze(cli, a).map(drop),
        Command::A3(a) => commands::cmd_a3(cli, a).map(drop),
        Command::Presets(a) => commands::cmd_presets(a),
    }
}

/// Maps an error to the process exit code: 2 for configuration problems,
/// 3 for bad input data, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    err.chain()
        .find_map(|c| c.downcast_ref::<cho_core::Error>())
        .map_or(EXIT_FAILURE, |e| {
            if e.is_config() {
                EXIT_CONFIG
            } else if e.is_data() {
                EXIT_DATA
            } else {
                EXIT_FAILURE
            }
        })
}
