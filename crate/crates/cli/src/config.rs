use std::fs;
use std::path::Path;

use arst_core::training::TrainConfig;
use arst_core::{Error, Result};
use toml::{Table, Value};

/// Overlay the keys of a TOML file onto `base`. Nested tables merge key by
/// key; any other value replaces the one in `base`.
pub fn overlay_file(base: &TrainConfig, path: &Path) -> Result<TrainConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    overlay_str(base, &text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn overlay_str(base: &TrainConfig, text: &str) -> std::result::Result<TrainConfig, String> {
    let file: Table = text.parse().map_err(|e: toml::de::Error| e.to_string())?;
    let mut merged = Value::try_from(base).map_err(|e| e.to_string())?;
    merge(&mut merged, Value::Table(file));
    merged
        .try_into()
        .map_err(|e: toml::de::Error| e.to_string())
}

fn merge(into: &mut Value, from: Value) {
    match (into, from) {
        (Value::Table(a), Value::Table(b)) => {
            for (k, v) in b {
                match a.get_mut(&k) {
                    // a different enum variant must replace the table wholesale
                    Some(slot) if !kind_changes(slot, &v) => merge(slot, v),
                    _ => {
                        a.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn kind_changes(a: &Value, b: &Value) -> bool {
    match (a.get("kind"), b.get("kind")) {
        (Some(x), Some(y)) => x != y,
        _ => false,
    }
}
