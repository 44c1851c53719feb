//! Library surface of the batch front end; the `specline` binary is a thin
//! wrapper over these modules, and integration tests drive the file formats
//! directly.

pub mod commands;
pub mod error;
pub mod io;
