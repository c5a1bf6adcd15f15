//! File formats and pipeline commands behind the `skelfuse` binary.

pub mod commands;
pub mod formats;
