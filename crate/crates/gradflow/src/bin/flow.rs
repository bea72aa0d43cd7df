//! Experiment driver for the gradient-flow solvers.
//!
//! Usage:
//!   flow run <config.toml>       execute one solver, write trace.csv + summary.json
//!   flow compare <config.toml>   run two solvers side by side, write compare.csv
//!   flow sweep <config.toml>     run a dt/p grid, write index.csv (FLOW_THREADS caps concurrency)
//!   flow --version
//!
//! Exit codes: 0 converged, 1 config or internal error, 2 finished without
//! convergence (max-iterations or stalled).

use std::path::Path;
use std::process::exit;

use gradflow::cli;

const USAGE: &str = "usage: flow <run|compare|sweep> <config.toml> | flow --version";

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let code = match (args.get(1).map(String::as_str), args.get(2)) {
        (Some("--version"), None) | (Some("-V"), None) => {
            println!("flow {}", env!("CARGO_PKG_VERSION"));
            cli::EXIT_OK
        }
        (Some("run"), Some(path)) if args.len() == 3 => cli::cmd_run(Path::new(path)),
        (Some("compare"), Some(path)) if args.len() == 3 => cli::cmd_compare(Path::new(path)),
        (Some("sweep"), Some(path)) if args.len() == 3 => cli::cmd_sweep(Path::new(path)),
        _ => {
            eprintln!("{USAGE}");
            cli::EXIT_ERROR
        }
    };
    exit(code);
}
