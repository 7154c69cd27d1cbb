use clap::Parser;

fn main() {
    let cli = torsofit::cli::Cli::parse();
    let level = if cli.verbose { "debug" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    std::process::exit(torsofit::cli::run(cli));
}
