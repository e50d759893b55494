//! Command-line front end and what-if HTTP service over `qa_core`.

pub mod bundle;
pub mod cli;
pub mod server;

pub use bundle::{Bundle, BundlePaths, LoadError};
