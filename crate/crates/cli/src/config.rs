//! Configuration layering: preset, then an optional TOML file, then flags.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use toml::{Table, Value};

use crate::error::CliError;

fn to_table(value: &impl Serialize, what: &str) -> Result<Table, CliError> {
    Table::try_from(value).map_err(|e| CliError::Validation(format!("{what}: {e}")))
}

/// Recursive merge; scalars and arrays in `over` replace those in `base`.
fn merge(base: &mut Table, over: Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

pub fn resolve<T: Serialize + DeserializeOwned>(
    base: &T,
    file: Option<&Path>,
    flags: &impl Serialize,
) -> Result<T, CliError> {
    let mut table = to_table(base, "defaults")?;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        let parsed: Table = toml::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        merge(&mut table, parsed);
    }
    merge(&mut table, to_table(flags, "flags")?);
    table.try_into().map_err(|e: toml::de::Error| {
        CliError::Validation(format!("configuration: {}", e.message()))
    })
}
