//! JSON run configuration: a seed plus a list of named backbone systems.
//! Model topology lives in files rather than flags so runs are reproducible
//! artifacts that can be committed next to their results.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use hsdssa::backbone::BackboneConfig;

use crate::CliError;

#[derive(Debug, Serialize, Deserialize)]
pub struct SystemSpec {
    pub name: String,
    #[serde(flatten)]
    pub config: BackboneConfig,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub systems: Vec<SystemSpec>,
}

pub fn load_run_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let cfg: RunConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if cfg.systems.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no systems defined",
            path.display()
        )));
    }
    let mut names: Vec<&str> = cfg.systems.iter().map(|s| s.name.as_str()).collect();
    names.sort_unstable();
    names.dedup();
    if names.len() != cfg.systems.len() {
        return Err(CliError::Data(format!(
            "{}: duplicate system names",
            path.display()
        )));
    }
    Ok(cfg)
}
