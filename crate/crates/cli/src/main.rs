use clap::Parser;

use canopy_cli::{configure_threads, dispatch, Cli, EXIT_FATAL};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        std::process::exit(EXIT_FATAL);
    }
    std::process::exit(dispatch(cli));
}
