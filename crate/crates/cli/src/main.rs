use std::process::exit;

use clap::Parser;
use sleepscale_cli::{run, Cli};

fn main() {
    // Clap exits with code 2 on usage errors (unknown flags, missing
    // --config) before we get here.
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            exit(e.exit_code());
        }
    }
}
