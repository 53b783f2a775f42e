//! Standard-library side of the manipulation agent: configuration files,
//! on-disk formats, HTTP adapters for live model, detector and grasp
//! services, and the `maniagent` command line.
//!
//! The pipeline itself lives in [`maniagent_core`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod app;
pub mod cache;
pub mod cli;
pub mod clock;
pub mod config;
pub mod dataset;
pub mod error;
pub mod files;
pub mod http;

pub use app::App;
pub use cache::PersistentCache;
pub use config::RunConfig;
pub use error::{Error, Result};
pub use maniagent_core as core;
