//! Exit-code discipline: 0 success, 2 validation failure, 3 numerical
//! failure, 4 I/O. Every failure is also emitted as a machine-readable JSON
//! object on stderr.

use serde::Serialize;
use specline_core::direct::DirectError;
use specline_core::glsolve::GlError;
use specline_core::system::SystemError;

#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn validation(message: String) -> Self {
        CliError {
            code: 2,
            kind: "validation",
            message,
        }
    }

    pub fn numerical(message: String) -> Self {
        CliError {
            code: 3,
            kind: "numerical",
            message,
        }
    }

    pub fn io(message: String) -> Self {
        CliError {
            code: 4,
            kind: "io",
            message,
        }
    }

    pub fn report(&self) -> String {
        #[derive(Serialize)]
        struct Report<'a> {
            error: Inner<'a>,
        }
        #[derive(Serialize)]
        struct Inner<'a> {
            code: i32,
            kind: &'a str,
            message: &'a str,
        }
        serde_json::to_string(&Report {
            error: Inner {
                code: self.code,
                kind: self.kind,
                message: &self.message,
            },
        })
        .unwrap_or_else(|_| self.message.clone())
    }
}

/// Adapters that classify core errors into exit codes at call sites.
pub struct Stage;

impl Stage {
    pub fn validation<E: std::fmt::Display>(e: E) -> CliError {
        CliError::validation(e.to_string())
    }

    pub fn numerical<E: std::fmt::Display>(e: E) -> CliError {
        CliError::numerical(e.to_string())
    }
}

/// GlError discriminates validation-type inputs from numerical breakdowns.
pub fn classify_gl(e: GlError) -> CliError {
    match &e {
        GlError::IllConditioned { .. } | GlError::NotPositive { .. } | GlError::SpotCheck { .. } => {
            CliError::numerical(e.to_string())
        }
        GlError::ExtractStructure { .. } => CliError::numerical(e.to_string()),
        _ => CliError::validation(e.to_string()),
    }
}

pub fn classify_direct(e: DirectError) -> CliError {
    CliError::validation(e.to_string())
}

pub fn classify_system(e: SystemError) -> CliError {
    CliError::validation(e.to_string())
}
