//! Run configuration shared by the `nrmf` binary and its tests.

pub mod config;
