//! Exit-code contract and machine-readable error records.

use std::fmt;

use resq::Error;
use serde_json::json;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_MISMATCH: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// A failed command: the exit code plus what went wrong.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            kind: "usage",
            message: message.into(),
        }
    }

    /// One-line JSON record for stderr.
    pub fn record(&self) -> String {
        json!({ "error": self.kind, "message": self.message, "exit_code": self.code }).to_string()
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (code, kind) = match &e {
            Error::InvalidArgument(_) | Error::InvalidK(_) | Error::NonPowerOfTwoK(_) => (EXIT_USAGE, "usage"),
            Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => (EXIT_USAGE, "not_found"),
            Error::DimensionMismatch { .. } => (EXIT_MISMATCH, "dimension_mismatch"),
            Error::ModelStreamMismatch { .. } => (EXIT_MISMATCH, "model_stream_mismatch"),
            Error::LengthMismatch { .. } => (EXIT_MISMATCH, "length_mismatch"),
            Error::IndexOutOfRange { .. } => (EXIT_MISMATCH, "index_out_of_range"),
            Error::CorruptHeader(_) => (EXIT_MISMATCH, "corrupt_header"),
            Error::TruncatedPayload { .. } => (EXIT_MISMATCH, "truncated_payload"),
            Error::VersionUnsupported(_) => (EXIT_MISMATCH, "version_unsupported"),
            Error::EmptyInput => (EXIT_MISMATCH, "empty_input"),
            Error::DegenerateData { .. } => (EXIT_MISMATCH, "degenerate_data"),
            Error::Io(_) => (EXIT_MISMATCH, "io"),
            Error::NonFiniteValue { .. } => (EXIT_NUMERIC, "non_finite_value"),
            Error::NonFiniteLoss { .. } => (EXIT_NUMERIC, "non_finite_loss"),
            Error::EmptyHistogram { .. } => (EXIT_NUMERIC, "empty_histogram"),
        };
        Failure {
            code,
            kind,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}
