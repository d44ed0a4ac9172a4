//! Std companion of `steinbn`: file formats, atomic artifact IO, a rayon
//! trial executor and the `steinbn` command line.

pub mod cli;
pub mod error;
pub mod exec;
pub mod formats;
pub mod io;

pub use cli::run_cli;
pub use error::{LabError, Result};
