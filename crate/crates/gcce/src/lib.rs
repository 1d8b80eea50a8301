//! Ensemble workflows, file formats and the command-line front end for
//! Hahn-echo gCCE simulations of an NV center in an electron-spin bath.
//!
//! The numerical kernels live in [`nv_gcce_core`]; this crate adds parallel
//! ensembles, checkpoints, JSON/CSV output and the `nv-gcce` binary.

pub mod config;
pub mod error;
pub mod io;
pub mod workflows;

pub use config::{Cutoff, EnsembleSpec, GridSpec, ResolvedConfig, RunConfig, Scale};
pub use error::{Error, Result};

/// Crate version recorded in every output file.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
