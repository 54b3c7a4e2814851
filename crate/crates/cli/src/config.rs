//! Pipeline configuration: one JSON document, strict keys, `--set` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use xband_core::dataset::{BuildConfig, SplitSpec};
use xband_core::models::{ModelConfig, TrainConfig};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub idw_power: f64,
    /// Number of test maps rendered to PNG.
    pub render_maps: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            idw_power: xband_core::eval::IDW_POWER,
            render_maps: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub out: PathBuf,
    pub build: BuildConfig,
    pub split: SplitSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            out: PathBuf::from("out"),
            build: BuildConfig::default(),
            split: SplitSpec::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalSettings::default(),
        }
    }
}

/// Command-line adjustments applied on top of the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub split: Option<String>,
    pub sets: Vec<String>,
}

fn unknown_keys(given: &Value, reference: &Value, path: &str, out: &mut Vec<String>) {
    let (Value::Object(g), Value::Object(r)) = (given, reference) else {
        return;
    };
    for (k, v) in g {
        let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
        match r.get(k) {
            None => out.push(format!("unknown key `{p}`")),
            Some(rv) => unknown_keys(v, rv, &p, out),
        }
    }
}

fn set_path(doc: &mut Value, key: &str, value: Value) -> Result<(), String> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(format!("bad --set key `{key}`"));
    }
    let mut cur = doc;
    for p in &parts[..parts.len() - 1] {
        let obj = cur.as_object_mut().ok_or_else(|| format!("`{key}`: `{p}` is not a table"))?;
        cur = obj.entry(p.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = cur.as_object_mut().ok_or_else(|| format!("`{key}` does not name a table entry"))?;
    obj.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Parses `key=value`; the value is JSON when it parses as such, else a
/// plain string.
fn parse_set(s: &str) -> Result<(String, Value), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("--set expects key=value, got `{s}`"))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

impl PipelineConfig {
    /// Reads the optional file, applies overrides and validates. Every
    /// problem found is reported together.
    pub fn load(path: Option<&Path>, ov: &Overrides) -> Result<Self, CliError> {
        let mut errors = Vec::new();
        let mut doc = match path {
            None => Value::Object(Default::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(vec![format!("cannot read config {}: {e}", p.display())]))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(vec![format!("config {} is not valid JSON: {e}", p.display())]))?
            }
        };
        if !doc.is_object() {
            return Err(CliError::Config(vec!["config must be a JSON object".into()]));
        }
        for s in &ov.sets {
            match parse_set(s).and_then(|(k, v)| set_path(&mut doc, &k, v)) {
                Ok(()) => {}
                Err(e) => errors.push(e),
            }
        }
        if let Some(seed) = ov.seed {
            for key in ["build.scene.seed", "split.seed", "model.seed", "train.seed"] {
                set_path(&mut doc, key, seed.into()).expect("seed paths are tables");
            }
        }
        if let Some(out) = &ov.out {
            set_path(&mut doc, "out", Value::String(out.display().to_string())).expect("top level");
        }
        if let Some(s) = &ov.split {
            match xband_core::dataset::SplitSpec::parse_ratios(s) {
                Ok(r) => set_path(&mut doc, "split.ratios", serde_json::json!(r)).expect("split table"),
                Err(e) => errors.push(e.to_string()),
            }
        }

        let reference = serde_json::to_value(PipelineConfig::default()).expect("default config serializes");
        unknown_keys(&doc, &reference, "", &mut errors);
        if !errors.is_empty() {
            return Err(CliError::Config(errors));
        }
        let cfg: PipelineConfig = serde_json::from_value(doc).map_err(|e| CliError::Config(vec![e.to_string()]))?;
        let v = cfg.violations();
        if !v.is_empty() {
            return Err(CliError::Config(v));
        }
        Ok(cfg)
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v: Vec<String> = Vec::new();
        v.extend(self.build.violations().into_iter().map(|m| format!("build: {m}")));
        v.extend(self.split.violations().into_iter().map(|m| format!("split: {m}")));
        v.extend(self.model.violations().into_iter().map(|m| format!("model: {m}")));
        v.extend(self.train.violations().into_iter().map(|m| format!("train: {m}")));
        if self.build.downsample > 0 && self.build.patch_size % self.build.downsample == 0 {
            let side = self.build.patch_size / self.build.downsample;
            if let Err(e) = self.model.check_dims(side, side) {
                v.push(format!("model: {e}"));
            }
        }
        if let Some(src) = self.model.coverage_input.strategy() {
            if !self.build.coverage_strategies.contains(&src) {
                v.push(format!(
                    "model: coverage_input {} is not among build.coverage_strategies",
                    src.name()
                ));
            }
        }
        if !(self.eval.idw_power.is_finite() && self.eval.idw_power > 0.0) {
            v.push("eval: idw_power must be positive".into());
        }
        v
    }

    /// SHA-256 of the canonical configuration, output directory excluded.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v.as_object_mut().expect("object").remove("out");
        let bytes = serde_json::to_vec(&v).expect("config serializes");
        xband_core::dataset::hex(&Sha256::digest(&bytes))
    }
}
