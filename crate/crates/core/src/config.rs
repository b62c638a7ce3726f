//! Experiment configuration: one TOML document with a section per stage,
//! strict key checking and dotted-path overrides.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ablation::AblationConfig;
use crate::analysis::AnalysisConfig;
use crate::corruption::CorruptionConfig;
use crate::data::{NoiseBankSpec, SynthSpec};
use crate::losses::TaskWeights;
use crate::masking::MaskConfig;
use crate::model::{ModelConfig, Task};
use crate::training::{EvalGrid, FinetuneConfig, UptrainConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSize {
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
}

impl Default for CorpusSize {
    fn default() -> Self {
        Self { n_train: 400, n_valid: 20, n_test: 100 }
    }
}

/// Everything a run needs. `corruption`, `mask` and `weights` are shared by
/// the training stages, and `seed` drives every stage's seed; the copies
/// inside `uptrain`/`finetune` and the per-section seeds are filled in by
/// [`ExperimentConfig::resolve`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub corpus: CorpusSize,
    pub synth: SynthSpec,
    pub noise: NoiseBankSpec,
    pub corruption: CorruptionConfig,
    pub mask: MaskConfig,
    pub model: ModelConfig,
    pub weights: TaskWeights,
    pub uptrain: UptrainConfig,
    pub finetune: FinetuneConfig,
    pub eval: EvalGrid,
    pub analysis: AnalysisConfig,
    pub ablate: AblationConfig,
}

impl ExperimentConfig {
    /// Parse TOML text, applying `overrides` (`section.key=value`) first.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| Error::Config(format!("TOML syntax: {e}")))?;
        canonicalize_weights(&mut doc)?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: Self = serde_path_to_error::deserialize(toml::Value::Table(doc)).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("at `{path}`: {}", e.into_inner()))
        })?;
        cfg.resolve()
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    /// Copy shared sections into the stage configs, derive per-stage seeds
    /// and validate. Stage copies or seeds that were set explicitly to a
    /// different value are rejected rather than silently replaced.
    pub fn resolve(mut self) -> Result<Self> {
        let seed = self.seed;
        sync(&mut self.synth.seed, seed, "synth.seed")?;
        sync(&mut self.model.seed, seed, "model.seed")?;
        sync(&mut self.uptrain.seed, seed, "uptrain.seed")?;
        sync(&mut self.finetune.seed, seed, "finetune.seed")?;
        sync(&mut self.eval.seed, seed, "eval.seed")?;
        sync(&mut self.analysis.seed, seed, "analysis.seed")?;
        sync(&mut self.uptrain.corruption, self.corruption.clone(), "uptrain.corruption")?;
        sync(&mut self.finetune.corruption, self.corruption.clone(), "finetune.corruption")?;
        sync(&mut self.uptrain.mask, self.mask.clone(), "uptrain.mask")?;
        sync(&mut self.uptrain.weights, self.weights.clone(), "uptrain.weights")?;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.model.validate()?;
        let m = &self.model;
        if m.audio_dim != self.synth.d_a || m.video_size != self.synth.video_size || m.vocab_size != self.synth.vocab_size {
            return Err(Error::Config(
                "model.audio_dim, model.video_size and model.vocab_size must match the synth section".into(),
            ));
        }
        self.weights.validate()?;
        self.mask.validate()?;
        self.uptrain.validate()?;
        self.finetune.validate()?;
        self.eval.validate()?;
        self.analysis.validate()?;
        self.ablate.validate()
    }
}

/// Fill `slot` from `value` unless it was set to something else by hand.
fn sync<T: PartialEq + Default>(slot: &mut T, value: T, key: &str) -> Result<()> {
    if *slot != T::default() && *slot != value {
        return Err(Error::Config(format!(
            "`{key}` is derived from the shared section and cannot be set separately"
        )));
    }
    *slot = value;
    Ok(())
}

/// `λ_MLM` → `lambda_mlm`, `λ_ACP(w)` → `lambda_acp_w`; other keys unchanged.
pub fn canonical_weight_key(key: &str) -> Result<String> {
    match key.strip_prefix("λ_") {
        Some(name) => {
            let task = Task::from_str(name).map_err(|_| Error::Config(format!("unknown task weight `weights.{key}`")))?;
            Ok(format!("lambda_{}", task.key()))
        }
        None => Ok(key.to_string()),
    }
}

fn canonicalize_weights(doc: &mut toml::Table) -> Result<()> {
    let Some(toml::Value::Table(w)) = doc.get_mut("weights") else {
        return Ok(());
    };
    let mut out = toml::Table::new();
    for (k, v) in std::mem::take(w) {
        let key = canonical_weight_key(&k)?;
        if out.insert(key.clone(), v).is_some() {
            return Err(Error::Config(format!("`weights.{key}` given twice")));
        }
    }
    *w = out;
    Ok(())
}

/// Apply one `a.b.c=value` override. The value is parsed as a TOML value and
/// falls back to a bare string.
pub fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<()> {
    let spec = spec.strip_prefix("--").unwrap_or(spec);
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not of the form key=value")))?;
    let mut keys: Vec<String> = path.trim().split('.').map(str::to_string).collect();
    if keys.iter().any(String::is_empty) {
        return Err(Error::Config(format!("override `{spec}` has an empty key segment")));
    }
    if keys.len() == 2 && keys[0] == "weights" {
        keys[1] = canonical_weight_key(&keys[1])?;
    }
    let value = parse_value(raw.trim());
    let (last, parents) = keys.split_last().expect("non-empty");
    let mut table = doc;
    for (i, k) in parents.iter().enumerate() {
        let entry = table.entry(k.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = match entry {
            toml::Value::Table(t) => t,
            _ => {
                return Err(Error::Config(format!(
                    "override `{spec}`: `{}` is not a section",
                    keys[..=i].join(".")
                )))
            }
        };
    }
    table.insert(last.clone(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    #[derive(Deserialize)]
    struct Wrap {
        v: toml::Value,
    }
    match toml::from_str::<Wrap>(&format!("v = {raw}")) {
        Ok(w) => w.v,
        Err(_) => toml::Value::String(raw.to_string()),
    }
}
