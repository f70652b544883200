//! TOML configuration files.
//!
//! An episode file holds the `EpisodeSpec` keys at top level. A run file
//! holds `SprConfig` keys; omitted keys take their defaults and nested
//! settings live in tables such as `[base]` or `[em]`. Unknown keys are
//! rejected so a typo cannot silently fall back to a default.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use spr_core::{EpisodeSpec, SprConfig};

use crate::error::{CliError, Result};

/// Largest seed a TOML integer can carry.
pub const MAX_SEED: u64 = i64::MAX as u64;

fn unknown_keys(given: &toml::Table, known: &toml::Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in given {
        let path = format!("{prefix}{k}");
        match (v, known.get(k)) {
            (_, None) => out.push(path),
            (toml::Value::Table(g), Some(toml::Value::Table(kn))) => unknown_keys(g, kn, &format!("{path}."), out),
            _ => {}
        }
    }
}

fn parse<T: DeserializeOwned + Serialize>(path: &Path, text: &str, reference: &T) -> Result<T> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| CliError::config(path, e.message()))?;
    let known = toml::Table::try_from(reference).map_err(|e| CliError::config(path, e.to_string()))?;
    let mut bad = Vec::new();
    unknown_keys(&table, &known, "", &mut bad);
    if !bad.is_empty() {
        return Err(CliError::config(path, format!("unknown keys: {}", bad.join(", "))));
    }
    toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::config(path, e.message()))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn parse_episode_spec(path: &Path, text: &str) -> Result<EpisodeSpec> {
    let spec: EpisodeSpec = parse(path, text, &EpisodeSpec::reference(0.0, 0))?;
    check_seed(path, spec.seed)?;
    spec.validate().map_err(|e| CliError::config(path, e.to_string()))?;
    Ok(spec)
}

pub fn load_episode_spec(path: &Path) -> Result<EpisodeSpec> {
    parse_episode_spec(path, &read(path)?)
}

pub fn parse_run_config(path: &Path, text: &str) -> Result<SprConfig> {
    let cfg: SprConfig = parse(path, text, &SprConfig::default())?;
    check_seed(path, cfg.seed)?;
    Ok(cfg)
}

pub fn load_run_config(path: &Path) -> Result<SprConfig> {
    parse_run_config(path, &read(path)?)
}

fn check_seed(path: &Path, seed: u64) -> Result<()> {
    if seed > MAX_SEED {
        return Err(CliError::config(path, format!("seed {seed} exceeds {MAX_SEED}")));
    }
    Ok(())
}

pub fn to_toml<T: Serialize>(value: &T) -> String {
    toml::to_string(value).expect("configs hold only TOML-representable values")
}
