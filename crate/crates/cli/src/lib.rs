//! Scenario files, trace storage and the end-to-end processing pipeline
//! behind the `ccotdr` binary.

pub mod pipeline;
pub mod report;
pub mod scenario;
pub mod trace;
