use clap::Parser;

use cho_bench::cli::Cli;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(err) = cho_bench::run(&cli) {
        eprintln!("error: {err:#}");
        std::process::exit(cho_bench::exit_code(&err));
    }
}
