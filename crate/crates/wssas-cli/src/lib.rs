//! Library surface of the pipeline runner, shared by the `wssas` binary and
//! the integration/acceptance test suites.

pub mod config;
pub mod manifest;
pub mod pipeline;
