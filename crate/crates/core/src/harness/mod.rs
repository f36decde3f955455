//! The self-test programs and the two-endpoint benchmark.

mod benchmark;
mod concurrent;
mod report;
mod unit;

pub use benchmark::{
    adler32, parse_size, parse_sizes, parse_tsv, render_tsv, run_benchmark, run_benchmark_on,
    test_payload, BenchOptions, BenchResult, Direction, DEFAULT_REPS, DEFAULT_SIZES, TSV_HEADER,
};
pub use concurrent::{run_concurrent_tests, run_concurrent_tests_with_timeout};
pub use report::{CheckOutcome, Report};
pub use unit::{run_unit_tests, run_unit_tests_with, StripeFn};
