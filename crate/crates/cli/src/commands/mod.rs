//! Subcommand implementations.

pub mod eval;
pub mod gen_data;
pub mod ood_eval;
pub mod sweep;
pub mod train;
