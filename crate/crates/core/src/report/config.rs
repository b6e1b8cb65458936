use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{make_synthetic_dataset, read_dataset, DatasetSplit, SyntheticSpec};
use crate::error::{PtError, Result};
use crate::noise::{NoiseKind, NoiseSpec};
use crate::schedules::AbandonPreset;
use crate::trainer::{Seeds, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Pt,
    Finetune,
    MeanTeacher,
    PseudoLabel,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Pt => "pt",
            Method::Finetune => "finetune",
            Method::MeanTeacher => "mean_teacher",
            Method::PseudoLabel => "pseudo_label",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Method::Pt,
            Method::Finetune,
            Method::MeanTeacher,
            Method::PseudoLabel,
        ]
        .into_iter()
        .find(|m| m.name() == s)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A grid of (method, noise rate, seed) cells sharing one training setup.
///
/// Each cell derives its dataset, label noise and network seeds from its
/// experiment seed, so every method sees the same data at a given seed and
/// noise level. `train.noise` must be left unset (use `noise_rates`) and
/// `train.seeds` is overwritten per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    pub noise_rates: Vec<f64>,
    pub noise_kind: NoiseKind,
    /// Class pair for asymmetric noise.
    pub swap_pair: Option<(usize, usize)>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Read this dataset instead of generating `data` per seed.
    pub data_file: Option<PathBuf>,
    /// Also write each cell's full training history as JSON.
    pub write_history: bool,
    /// Set `train.schedules.abandon_rate` from `abandon` and the cell's noise.
    pub abandon_from_preset: bool,
    pub abandon: AbandonPreset,
    pub data: SyntheticSpec,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            methods: vec![Method::Pt, Method::Finetune],
            noise_rates: vec![0.0, 0.1, 0.2, 0.3],
            noise_kind: NoiseKind::Symmetric,
            swap_pair: None,
            seeds: vec![1, 2, 3, 4, 5],
            output_dir: PathBuf::from("results"),
            data_file: None,
            write_history: false,
            abandon_from_preset: true,
            abandon: AbandonPreset::default(),
            data: SyntheticSpec::default(),
            train: TrainConfig::desk_benchmark(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(PtError::Config("methods: list must be nonempty".into()));
        }
        if self.seeds.is_empty() {
            return Err(PtError::Config("seeds: list must be nonempty".into()));
        }
        if self.noise_rates.is_empty() {
            return Err(PtError::Config("noise_rates: list must be nonempty".into()));
        }
        if let Some(r) = self.noise_rates.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return Err(PtError::Config(format!(
                "noise_rates: {r} is outside [0,1)"
            )));
        }
        if self.noise_kind == NoiseKind::Asymmetric && self.swap_pair.is_none() {
            return Err(PtError::Config(
                "swap_pair: required for asymmetric noise".into(),
            ));
        }
        if self.train.noise.is_some() {
            return Err(PtError::Config(
                "train.noise: set noise_rates/noise_kind instead".into(),
            ));
        }
        self.train.validate().map_err(|e| prefix("train", e))?;
        if self.data_file.is_none() {
            self.data.validate().map_err(|e| prefix("data", e))?;
            if self.data.dim != self.train.net.input_dim
                || self.data.num_classes != self.train.net.num_classes
            {
                return Err(PtError::Config(
                    "data.dim/data.num_classes must match train.net.input_dim/num_classes".into(),
                ));
            }
        }
        for &rate in &self.noise_rates {
            if let Some(spec) = self.noise_spec(rate, 0) {
                spec.validate().map_err(|e| prefix("noise", e))?;
            }
        }
        Ok(())
    }

    pub fn noise_spec(&self, rate: f64, seed: u64) -> Option<NoiseSpec> {
        (rate > 0.0).then(|| NoiseSpec {
            kind: self.noise_kind,
            rate,
            swap_pair: self.swap_pair,
            seed: seed.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ 0x006E_6F69_7365,
        })
    }

    /// The training configuration of one cell.
    pub fn cell_config(&self, noise: f64, seed: u64) -> TrainConfig {
        let mut cfg = self.train.clone();
        cfg.seeds = Seeds::from_base(seed);
        cfg.noise = self.noise_spec(noise, seed);
        if self.abandon_from_preset {
            cfg.schedules.abandon_rate = self
                .abandon
                .rate_for(cfg.noise.as_ref().map(|n| (n.kind, n.rate)));
        }
        cfg
    }

    /// The clean dataset of one seed.
    pub fn cell_data(&self, seed: u64) -> Result<DatasetSplit> {
        match &self.data_file {
            Some(path) => read_dataset(path),
            None => make_synthetic_dataset(&SyntheticSpec {
                seed: self.data.seed.wrapping_add(seed.wrapping_mul(7919)),
                ..self.data.clone()
            }),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config always serializes")
    }
}

fn prefix(section: &str, e: PtError) -> PtError {
    match e {
        PtError::Config(m) => PtError::Config(format!("{section}: {m}")),
        other => other,
    }
}

/// Parse a config file, apply `key=value` overrides (dotted paths, TOML
/// values, bare words taken as strings) and validate.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig> {
    let (text, origin) = match path {
        Some(p) => (
            std::fs::read_to_string(p)
                .map_err(|e| PtError::Config(format!("cannot read {}: {e}", p.display())))?,
            p.display().to_string(),
        ),
        None => (String::new(), "<defaults>".to_string()),
    };
    let cfg = parse_config(&text, &origin, overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Keys missing from the file (at any depth) take the values of
/// [`ExperimentConfig::default`], so a partial `[train]` table still starts
/// from the benchmark settings.
pub fn parse_config(text: &str, origin: &str, overrides: &[String]) -> Result<ExperimentConfig> {
    // parse the file alone first so that errors point at its lines; keys it
    // leaves out are filled from the defaults below
    if let Err(e) = toml::from_str::<ExperimentConfig>(text) {
        if !e.message().starts_with("missing field") {
            return Err(toml_error(origin, text, e));
        }
    }
    let mut table: toml::Table = toml::from_str(text).map_err(|e| toml_error(origin, text, e))?;
    for ov in overrides {
        apply_override(&mut table, ov)?;
    }
    let mut merged: toml::Table =
        toml::Table::try_from(ExperimentConfig::default()).expect("defaults always serialize");
    deep_merge(&mut merged, table);
    toml::Value::Table(merged)
        .try_into()
        .map_err(|e: toml::de::Error| PtError::Config(format!("override: {}", e.message())))
}

fn deep_merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => deep_merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn toml_error(origin: &str, text: &str, e: toml::de::Error) -> PtError {
    let line = e
        .span()
        .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
        .unwrap_or(0);
    PtError::Parse {
        path: origin.to_string(),
        line,
        detail: e.message().to_string(),
    }
}

fn apply_override(table: &mut toml::Table, ov: &str) -> Result<()> {
    let (key, raw) = ov
        .split_once('=')
        .ok_or_else(|| PtError::Config(format!("override `{ov}` is not key=value")))?;
    let key = key.trim();
    let value = parse_value(raw.trim());
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(PtError::Config(format!(
            "override key `{key}` is malformed"
        )));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| PtError::Config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
