//! Machine-readable output: one JSON object per line on stdout for progress,
//! one JSON line on stderr for a failure.

use serde_json::{json, Value};

/// Bad invocation; reported with exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn emit(event: &str, mut fields: Value) {
    if let Value::Object(m) = &mut fields {
        m.insert("event".into(), Value::String(event.into()));
    }
    println!("{}", serde_json::to_string(&fields).expect("json values serialize"));
}

pub fn fail(kind: &str, message: &str) {
    let message = message.split_whitespace().collect::<Vec<_>>().join(" ");
    eprintln!("{}", json!({ "error": kind, "message": message }));
}
