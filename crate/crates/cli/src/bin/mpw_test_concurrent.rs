//! Functional checks with both endpoints in this process. Takes no
//! arguments.

use clap::Parser;

#[derive(Parser)]
#[command(version, about = "Run the MPWide functional checks over loopback")]
struct Args {}

fn main() {
    Args::parse();
    let report = mpwide::harness::run_concurrent_tests();
    print!("{}", report.render());
    std::process::exit(if report.passed() { 0 } else { 1 });
}
