use clap::Parser;

use ssldro::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    let args: Vec<String> = std::env::args().skip(1).collect();
    if let Err(e) = run(cli, args) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
