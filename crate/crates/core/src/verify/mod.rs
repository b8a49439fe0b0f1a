//! Independent reference implementations and the numeric self-checks built
//! on them.

pub mod gradcheck;
pub mod oracle;
pub mod suite;

pub use gradcheck::{grad_check, relative_error, GradCheckConfig, GRAD_FLOOR, GradCheckReport, LOSS_NAMES};
pub use suite::{run_oracle_suite, kernel_names, OracleResult, TOLERANCE};
