//! JSON configs overlaid with command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

/// Merge `flags` over the JSON object in `config`: any flag given on the
/// command line wins, everything else comes from the file.
pub fn resolve<T: Serialize + DeserializeOwned>(flags: &T, config: Option<&Path>) -> Result<T, CliError> {
    let mut merged = match config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            match serde_json::from_str::<Value>(&text) {
                Ok(Value::Object(m)) => m,
                Ok(_) => return Err(CliError::Usage(format!("config {} is not a JSON object", path.display()))),
                Err(e) => return Err(CliError::Usage(format!("config {}: {e}", path.display()))),
            }
        }
        None => Map::new(),
    };
    let Value::Object(given) = serde_json::to_value(flags).map_err(|e| CliError::Failed(e.into()))? else {
        unreachable!("flag structs serialize to objects");
    };
    for (k, v) in given {
        if !v.is_null() {
            merged.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))
}

/// Record the configuration a run actually used.
pub fn write_resolved<T: Serialize>(path: &Path, command: &str, resolved: &T) -> Result<(), CliError> {
    let doc = serde_json::json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": resolved,
    });
    let text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Failed(e.into()))?;
    fs::write(path, text).map_err(|e| CliError::Failed(anyhow::anyhow!("cannot write {}: {e}", path.display())))
}

/// `data.json` -> `data.resolved.json`.
pub fn sidecar(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.resolved.json"))
}
