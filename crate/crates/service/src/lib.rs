//! Review HTTP service and batch CLI for BT-RADS scoring.

pub mod api;
pub mod cli;
