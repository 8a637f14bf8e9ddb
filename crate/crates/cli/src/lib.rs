//! Config-driven front end for `turnpike-core`.

// `!(x > 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod expr;
pub mod output;
pub mod pipeline;
pub mod registry;

pub use config::{load, ProblemConfig, RawConfig};
pub use expr::{parse_expr, Expr, ExprSystem, ParseError};
pub use pipeline::{analyze, Analysis, PipelineError, Stage};
pub use registry::{lookup, registry, RegistryEntry, UnknownSystem};
