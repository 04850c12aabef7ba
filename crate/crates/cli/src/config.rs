//! Run configuration: a TOML file, `--set key=value` overrides, and paths
//! resolved against the configuration file's directory.

use std::path::{Path, PathBuf};

use anatomesh::features::FeatureConfig;
use anatomesh::graphnet::TrainConfig;
use anatomesh::meshfit::FitConfig;
use anatomesh::pipeline::PipelineConfig;
use anatomesh::prototype::PrototypeConfig;
use anatomesh::synth::SynthConfig;
use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Every artifact is written below this directory.
    pub out_dir: PathBuf,
    pub n_train: usize,
    pub n_test: usize,
    pub val_fraction: f64,
    pub region_counts: [usize; 4],
    pub detection_cutoff: f64,
    pub positive_class: usize,
    pub synth: SynthConfig,
    pub prototype: PrototypeConfig,
    pub fit: FitConfig,
    pub features: FeatureConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_pipeline(PathBuf::from("out"), PipelineConfig::default())
    }
}

impl RunConfig {
    pub fn from_pipeline(out_dir: PathBuf, p: PipelineConfig) -> Self {
        Self {
            out_dir,
            n_train: p.n_train,
            n_test: p.n_test,
            val_fraction: p.val_fraction,
            region_counts: p.region_counts,
            detection_cutoff: p.detection_cutoff,
            positive_class: p.positive_class,
            synth: p.synth,
            prototype: p.prototype,
            fit: p.fit,
            features: p.features,
            train: p.train,
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            synth: self.synth.clone(),
            n_train: self.n_train,
            n_test: self.n_test,
            val_fraction: self.val_fraction,
            region_counts: self.region_counts,
            prototype: self.prototype,
            fit: self.fit,
            features: self.features,
            train: self.train.clone(),
            detection_cutoff: self.detection_cutoff,
            positive_class: self.positive_class,
        }
    }

    /// Everything except the output location, as TOML. This is what the
    /// manifest hash covers, so moving the output does not change it.
    pub fn settings_toml(&self) -> Result<String> {
        let mut table = toml::Table::try_from(self)?;
        table.remove("out_dir");
        Ok(toml::to_string(&table)?)
    }

    pub fn settings_hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.settings_toml()?.as_bytes())))
    }
}

/// Annotated default configuration, shown in `--help`.
pub fn defaults_text() -> String {
    let cfg = RunConfig::default();
    let body = toml::to_string(&cfg).unwrap_or_default();
    format!("Configuration keys and their defaults (TOML):\n\n{body}")
}

/// Parses `VALUE` as a TOML value; bare words fall back to strings.
fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key just parsed"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("override {assignment:?} is not KEY=VALUE"))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("override key {key:?} is malformed");
    }
    let (last, parents) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for p in parents {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| anyhow!("override key {key:?}: {p} is not a section"))?;
    }
    cur.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Loads the configuration. Without a file the defaults apply and relative
/// paths resolve against the working directory.
pub fn load(path: Option<&Path>, overrides: &[String], out: Option<&Path>) -> Result<RunConfig> {
    let (mut table, base) = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("config: {}", p.display()))?;
            let table: toml::Table = text.parse().with_context(|| format!("config: {}", p.display()))?;
            let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
            (table, base)
        }
        None => (toml::Table::new(), PathBuf::new()),
    };
    for o in overrides {
        apply_override(&mut table, o).context("config: --set")?;
    }
    let what = path.map_or_else(|| "config: defaults".to_string(), |p| format!("config: {}", p.display()));
    let mut cfg: RunConfig = table.try_into().with_context(|| what.clone())?;
    cfg.out_dir = match out {
        Some(o) => o.to_path_buf(),
        None if cfg.out_dir.is_relative() => base.join(&cfg.out_dir),
        None => cfg.out_dir.clone(),
    };
    cfg.pipeline().validate().with_context(|| what)?;
    Ok(cfg)
}
