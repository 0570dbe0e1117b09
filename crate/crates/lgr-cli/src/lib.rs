//! Command implementations behind the `lgrnet` binary: run
//! configuration, dataset loading, checkpoint plumbing, the portable
//! grid text format, and the five subcommands (gen, train, eval,
//! inspect, bench).

// Validation uses `!(x > 0.0)` so NaN is rejected along with
// nonpositive values; the suggested `partial_cmp` form hides that.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod dataset;
pub mod fail;
pub mod gridfmt;
pub mod model;
