use clap::Parser;
use sslinfer_cli::{run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = Cli::parse();
    if let Err(e) = run(cli, argv) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
