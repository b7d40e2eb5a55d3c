//! `key=value` overrides for arbitrary config fields.

use anyhow::{anyhow, bail, Result};
use rco::trainer::TrainConfig;
use toml::Value;

/// Sets a dotted key (`network.lstm_hidden`) to a TOML literal. Bare words
/// that do not parse as TOML are taken as strings.
pub fn apply(config: &TrainConfig, assignment: &str) -> Result<TrainConfig> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("override {assignment:?} is not KEY=VALUE"))?;
    let value = parse_value(raw.trim());
    let mut root = Value::try_from(config)?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields one part");
    let mut slot = &mut root;
    for part in parents {
        slot = slot
            .get_mut(*part)
            .ok_or_else(|| anyhow!("unknown config field {key:?}"))?;
    }
    // Unset optional fields are absent from the table; unknown names are
    // caught when deserializing.
    slot.as_table_mut()
        .ok_or_else(|| anyhow!("override key {key:?} does not name a field"))?
        .insert(last.to_string(), value);
    let config: TrainConfig = root.try_into().map_err(|e| anyhow!("override {key:?}: {e}"))?;
    if let Err(e) = config.validate() {
        bail!("override {assignment:?} gives an invalid config: {e}");
    }
    Ok(config)
}

fn parse_value(raw: &str) -> Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}
