//! Experiment configuration from a TOML file, `--set` overrides and the
//! shortcut flags, in that order of precedence (later wins).

use std::fs;
use std::path::{Path, PathBuf};

use terravec_core::dataforge::{write_atomic, Grouping};
use terravec_core::omega::InputMode;
use terravec_core::trainer::ExperimentConfig;

use crate::Failure;

pub const ECHO_FILE: &str = "resolved_config.toml";

#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub set: Vec<String>,
    pub seed: Option<u64>,
    pub grouping: Option<Grouping>,
    pub input_mode: Option<InputMode>,
    pub no_stsro: bool,
}

/// TOML value of an override's right-hand side; bare words are strings.
fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies `section.key=value` to a table.
pub fn apply_set(root: &mut toml::Table, spec: &str) -> Result<(), Failure> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Failure::Usage(format!("--set expects key=value, got '{spec}'")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Failure::Usage(format!("--set: malformed key '{key}'")));
    }
    let (last, parents) = path.split_last().expect("split yields at least one part");
    let mut table = root;
    for p in parents {
        table = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Failure::Usage(format!("--set {key}: '{p}' is not a section")))?;
    }
    table.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

pub fn resolve(o: &Overrides) -> Result<ExperimentConfig, Failure> {
    let mut root = match &o.config {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
            text.parse::<toml::Table>()
                .map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for s in &o.set {
        apply_set(&mut root, s)?;
    }
    let mut cfg: ExperimentConfig = toml::Value::Table(root)
        .try_into()
        .map_err(|e| Failure::Usage(format!("config: {e}")))?;
    if let Some(seed) = o.seed {
        cfg.data.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(g) = o.grouping {
        cfg.train.grouping = g;
    }
    if let Some(m) = o.input_mode {
        cfg.network.input_mode = m;
    }
    if o.no_stsro {
        cfg.network.stsro_enabled = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn to_toml(cfg: &ExperimentConfig) -> Result<String, Failure> {
    toml::to_string(cfg).map_err(|e| Failure::Runtime(format!("serializing config: {e}")))
}

/// Writes the replayable configuration of a run into `out`.
pub fn echo(out: &Path, command: &str, cfg: &ExperimentConfig) -> Result<(), Failure> {
    let text = format!("# terravec {command}\n{}", to_toml(cfg)?);
    write_atomic(&out.join(ECHO_FILE), text.as_bytes())?;
    Ok(())
}
