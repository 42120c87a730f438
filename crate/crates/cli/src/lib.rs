//! Front end for the `brw` experiments: configuration, dispatch and output.

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;
