//! Scenario runner for the pwdpd workbench: scenario files, output bundles
//! and their execution.

pub mod bundle;
pub mod run;
pub mod scenario;

use pwdpd_core::Error;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "PWDPD_OUT";

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DEGENERATE: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;
pub const EXIT_OTHER: i32 = 1;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        e if e.is_degenerate() => EXIT_DEGENERATE,
        Error::Config(_) | Error::Json(_) | Error::Format(_) | Error::InsufficientBandwidth { .. } => EXIT_CONFIG,
        _ => EXIT_OTHER,
    }
}

/// Machine-readable error record.
pub fn error_record(e: &Error) -> serde_json::Value {
    let kind = match e {
        Error::Divergence { .. } => "divergence",
        e if e.is_degenerate() => "degenerate",
        Error::Config(_) | Error::Json(_) | Error::Format(_) | Error::InsufficientBandwidth { .. } => "config",
        Error::Io(_) => "io",
        _ => "other",
    };
    let mut v = serde_json::json!({
        "error": kind,
        "exit_code": exit_code(e),
        "message": e.to_string(),
    });
    if let Error::Divergence { trace, iteration, .. } = e {
        v["iteration"] = serde_json::json!(iteration);
        v["trace"] = serde_json::to_value(trace).unwrap_or_default();
    }
    v
}
