use std::io::Write;

use clap::Parser;
use mocap_cli::{execute, exit_code, Cli, EXIT_CONFIG};

fn main() {
    let cli = Cli::parse();
    if let Some(n) = cli.global.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            std::process::exit(EXIT_CONFIG);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            std::process::exit(EXIT_CONFIG);
        }
    }
    match execute(cli.command, &cli.global) {
        Ok(summary) => {
            // a closed pipe on stdout is not an error
            let _ = writeln!(std::io::stdout(), "{}", summary.trim_end());
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code(&e));
        }
    }
}
