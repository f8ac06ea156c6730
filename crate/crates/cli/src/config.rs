//! Config loading and merging: file (JSON or TOML) under command-line
//! overrides, with per-field provenance recorded so a run directory is fully
//! auditable.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use drdg_core::trainer::RunConfig;

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub steps: Option<u64>,
    pub k: Option<u64>,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
}

/// Effective config plus where each tracked field came from.
#[derive(Debug, Clone)]
pub struct MergedConfig {
    pub config: RunConfig,
    pub sources: BTreeMap<String, String>,
}

const TRACKED_FIELDS: &[&str] = &[
    "train.steps",
    "train.k",
    "train.lambda1",
    "train.lambda2",
    "train.lr_main",
    "train.lr_aux",
    "train.n_dom",
    "train.seed",
    "train.eval_every",
    "train.checkpoint_every",
    "train.log_weights",
    "train.arch",
    "train.toggles",
    "data.gen",
    "data.source_specs",
    "data.holdout_spec",
    "data.n_per_domain",
    "data.n_holdout",
];

fn file_to_json(path: &Path) -> Result<serde_json::Value> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    let value: serde_json::Value = if ext == "toml" {
        let t: toml::Value = toml::from_str(&text)
            .with_context(|| format!("parsing TOML config {}", path.display()))?;
        serde_json::to_value(t)?
    } else if ext == "json" {
        serde_json::from_str(&text)
            .with_context(|| format!("parsing JSON config {}", path.display()))?
    } else if text.trim_start().starts_with('{') {
        serde_json::from_str(&text)
            .with_context(|| format!("parsing JSON config {}", path.display()))?
    } else {
        let t: toml::Value = toml::from_str(&text)
            .with_context(|| format!("parsing TOML config {}", path.display()))?;
        serde_json::to_value(t)?
    };
    Ok(value)
}

fn path_present(value: &serde_json::Value, dotted: &str) -> bool {
    let mut cur = value;
    for part in dotted.split('.') {
        match cur.get(part) {
            Some(v) => cur = v,
            None => return false,
        }
    }
    true
}

/// Load `config_path` (when given), apply overrides, and record provenance
/// for every tracked field: `default`, `file` or `cli`.
pub fn merge_config(config_path: Option<&Path>, over: &Overrides) -> Result<MergedConfig> {
    let mut sources: BTreeMap<String, String> = TRACKED_FIELDS
        .iter()
        .map(|f| (f.to_string(), "default".to_string()))
        .collect();

    let mut config = RunConfig::default();
    if let Some(path) = config_path {
        let raw = file_to_json(path)?;
        config = serde_json::from_value(raw.clone())
            .with_context(|| format!("config {} does not match the schema", path.display()))?;
        for field in TRACKED_FIELDS {
            if path_present(&raw, field) {
                sources.insert(field.to_string(), "file".to_string());
            }
        }
    }

    let mut set = |field: &str| {
        sources.insert(field.to_string(), "cli".to_string());
    };
    if let Some(v) = over.seed {
        config.train.seed = v;
        set("train.seed");
    }
    if let Some(v) = over.steps {
        config.train.steps = v;
        set("train.steps");
    }
    if let Some(v) = over.k {
        config.train.k = v;
        set("train.k");
    }
    if let Some(v) = over.lambda1 {
        config.train.lambda1 = v;
        set("train.lambda1");
    }
    if let Some(v) = over.lambda2 {
        config.train.lambda2 = v;
        set("train.lambda2");
    }

    if let Err(e) = config.validate() {
        bail!("invalid configuration: {}", e);
    }
    Ok(MergedConfig { config, sources })
}

/// Serialize the effective config exactly as the echo file will hold it.
pub fn config_echo_bytes(config: &RunConfig) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(config)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Write `config.json` (byte-stable echo) and `config_sources.json`.
pub fn write_echo(dir: &Path, merged: &MergedConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.json"), config_echo_bytes(&merged.config)?)?;
    let sources = serde_json::to_string_pretty(&merged.sources)?;
    fs::write(dir.join("config_sources.json"), sources)?;
    Ok(())
}

pub fn load_echo(dir: &Path) -> Result<RunConfig> {
    let path = dir.join("config.json");
    let text = fs::read_to_string(&path)
        .with_context(|| format!("run directory is missing {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

/// Output directory resolution: `--out`, else `$DRDG_RUN_ROOT/<name>`, else
/// `runs/<name>`. The name depends only on the command and seed.
pub fn resolve_out(out: Option<PathBuf>, command: &str, seed: u64) -> PathBuf {
    match out {
        Some(p) => p,
        None => {
            let root = std::env::var("DRDG_RUN_ROOT").unwrap_or_else(|_| "runs".to_string());
            PathBuf::from(root).join(format!("{}-seed{}", command, seed))
        }
    }
}
