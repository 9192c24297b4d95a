//! Tool servers bundled with the workspace.

use serde_json::{Map, Value};

pub mod campaign;
pub mod decision;
pub mod fixture;
pub mod gp;
pub mod simlab;
pub mod svg;

/// Numeric argument, or NaN when absent. Arguments are schema-checked before
/// handlers run, so absence only happens for optional parameters.
pub fn number_arg(args: &Map<String, Value>, name: &str) -> f64 {
    args.get(name).and_then(Value::as_f64).unwrap_or(f64::NAN)
}

pub fn string_arg<'a>(args: &'a Map<String, Value>, name: &str) -> &'a str {
    args.get(name).and_then(Value::as_str).unwrap_or("")
}
