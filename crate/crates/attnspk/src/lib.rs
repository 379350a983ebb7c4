//! File formats, experiment configuration and the staged pipeline behind the
//! `attnspk` command.

pub mod config;
pub mod error;
pub mod format;
pub mod pipeline;
pub mod report;
pub mod text;
pub mod wav;

pub use config::Config;
pub use error::{Error, Result};
pub use pipeline::{Pipeline, Stage};
pub use report::Report;
