use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    mter_cli::init_threads();
    let cli = mter_cli::Cli::parse();
    std::process::exit(mter_cli::main_with(&cli));
}
