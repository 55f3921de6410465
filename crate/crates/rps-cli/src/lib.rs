//! Experiment runner over the solver library: TOML configuration, the
//! `solve`/`verify`/`stationary`/`bounds`/`sweep` commands, and
//! deterministic CSV/JSON artifact emission.

// Negated float comparisons (`!(x > 0.0)`) are deliberate NaN-rejecting
// guards; the positive form would silently accept NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{CliError, Verdict};
pub use config::{parse_config, ConfigError, Experiment};
