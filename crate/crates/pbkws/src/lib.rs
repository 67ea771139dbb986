//! File formats, pipeline orchestration and the command-line front end for
//! the `pbkws-core` keyword-spotting toolkit.

pub mod cli;
pub mod error;
pub mod formats;
pub mod manifest;
pub mod pipeline;
pub mod predictions;
pub mod prototypes;
pub mod report;

pub use error::Error;
