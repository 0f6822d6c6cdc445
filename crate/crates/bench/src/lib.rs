//! Command-line front end for the relaxation solvers: problem files,
//! starting-point sets and campaign runs.

pub mod cli;
pub mod expr;
pub mod problem_file;
pub mod starts;
