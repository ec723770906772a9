//! Runs every acceptance criterion once and prints one line per criterion.

use std::process::ExitCode;

use markovize_cli::validate::{run_suite, ValidateOptions};

fn main() -> ExitCode {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let opts = ValidateOptions {
        threads,
        corrupt_phase: false,
    };
    let outcomes = run_suite(&[], &opts).expect("suite runs");
    for o in &outcomes {
        println!("{}", o.line());
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!(
        "acceptance: {} passed, {failed} failed",
        outcomes.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
