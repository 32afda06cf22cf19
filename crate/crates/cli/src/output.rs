use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

/// Format version stamped into every artifact.
pub const FORMAT_VERSION: &str = "1";

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    version: &'static str,
    tool_version: &'static str,
    command: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

pub fn to_json<T: Serialize>(command: &str, body: &T) -> Result<String> {
    let env = Envelope {
        version: FORMAT_VERSION,
        tool_version: env!("CARGO_PKG_VERSION"),
        command,
        body,
    };
    Ok(serde_json::to_string_pretty(&env)?)
}

pub fn write_json<T: Serialize>(path: &Path, command: &str, body: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut text = to_json(command, body)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Writes a CSV table with a leading `version` column.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(std::iter::once("version").chain(header.iter().copied()))?;
    for row in rows {
        w.write_record(std::iter::once(FORMAT_VERSION).chain(row.iter().map(String::as_str)))?;
    }
    w.flush()?;
    Ok(())
}
