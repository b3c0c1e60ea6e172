use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cho_core::channel::FadingKind;

#[derive(Debug, Parser)]
#[command(
    name = "cho-bench",
    version,
    about = "Conditional handover simulator and Markov analysis"
)]
pub struct Cli {
    /// Master seed; sweeps use seeds `seed, seed+1, ...`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads for sweeps (default: available cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[arg(long, global = true, env = "CHO_BENCH_OUT_DIR", default_value = "out")]
    pub out_dir: PathBuf,

    /// `svg` also renders plots for sweep and a3.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Svg,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one scenario and write trace, metrics, matrix and stationary CSVs.
    Run(RunArgs),
    /// Sweep one parameter over fading models and seeds.
    Sweep(SweepArgs),
    /// Estimate the chain from a trace and solve it.
    Analyze(AnalyzeArgs),
    /// HOF probability versus time-to-trigger in the A3 line scenario.
    A3(A3Args),
    /// List the built-in scenarios or print one as TOML.
    Presets(PresetsArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PresetName {
    TwoGnbRayleigh,
    TwoGnbRician,
    TwoGnbNone,
    Multicell,
    A3Linear,
}

#[derive(Debug, Clone, Args)]
pub struct ScenarioArgs {
    /// Scenario file (TOML).
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,

    #[arg(long, value_enum)]
    pub preset: Option<PresetName>,

    /// Dotted `section.key=value` override; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    /// km/h; fixes every UE's speed.
    Velocity,
    OPrep,
    OExec,
    TPrep,
    TExec,
    /// A3 time-to-trigger in ms, using `--hys`.
    Ttt,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,

    #[arg(long, value_enum)]
    pub axis: Axis,

    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,

    #[arg(long, value_delimiter = ',', value_parser = parse_fading, default_value = "rayleigh,rician")]
    pub fading: Vec<FadingKind>,

    #[arg(long, default_value_t = 30)]
    pub seeds: u32,

    /// Hysteresis for the `ttt` axis, dB.
    #[arg(long, default_value_t = 11.0)]
    pub hys: f64,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    pub trace: PathBuf,
}

#[derive(Debug, Args)]
pub struct A3Args {
    #[arg(long, value_delimiter = ',', default_value = "100,200,320,480")]
    pub ttt: Vec<u32>,

    #[arg(long, default_value_t = 11.0)]
    pub hys: f64,

    #[arg(long, default_value_t = 100)]
    pub seeds: u32,

    #[arg(long, value_delimiter = ',', value_parser = parse_fading, default_value = "rayleigh")]
    pub fading: Vec<FadingKind>,

    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct PresetsArgs {
    /// Print this preset as TOML.
    #[arg(long, value_enum)]
    pub show: Option<PresetName>,
}

fn parse_fading(s: &str) -> Result<FadingKind, String> {
    s.parse().map_err(|e: cho_core::Error| e.to_string())
}
