//! Oracles, benchmark constructors and performance profiles.

pub mod benchmarks;
pub mod oracle;
pub mod profile;

pub use benchmarks::{
    make_benchmark, make_benchmark_by_name, semicontinuous_reformulate, BenchmarkName,
};
pub use oracle::{branch_enumerate_global, BranchSpec, OracleOptions, OracleResult};
pub use profile::{performance_profile, ProfileTable, RunRecord};
