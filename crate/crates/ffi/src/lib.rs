//! C ABI over `kalman_inversion`.
//!
//! Handles are opaque and owned by the caller, who releases them with the
//! matching `*_free`. Every fallible call returns a [`KiStatus`]; the
//! message of the last failure on the calling thread is available through
//! `ki_last_error_message`. Matrices cross the boundary row-major.

mod error;
mod problem;
mod run;

pub use error::{ki_last_error_message, KiStatus};
pub use problem::*;
pub use run::*;
