//! Artifact writing: atomic file replacement and full-precision numbers.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Number, Value};

use crate::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// 17 significant digits.
pub fn full(v: f64) -> String {
    format!("{v:.16e}")
}

/// Rewrite every non-integer number as 17 significant digits.
pub fn full_precision(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let f = n.as_f64().expect("f64 number");
            Value::Number(full(f).parse::<Number>().expect("formatted float is valid JSON"))
        }
        Value::Array(a) => Value::Array(a.into_iter().map(full_precision).collect()),
        Value::Object(m) => Value::Object(m.into_iter().map(|(k, v)| (k, full_precision(v))).collect()),
        other => other,
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Value {
    full_precision(serde_json::to_value(value).expect("artifact is representable as JSON"))
}

/// Write via a temporary file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let io = |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("JSON value serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn artifact_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}
