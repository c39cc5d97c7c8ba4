//! JSON experiment and training-job configurations with `key=value`
//! overrides.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::codec::CodecArch;
use crate::data::DatasetSource;
use crate::diffusion::{make_schedule, DenoiserArch, VarianceSchedule};
use crate::eavesdrop::EveArch;
use crate::error::{Error, Result};
use crate::jammer::{AttackSpec, JammerProfile, JammingKind};
use crate::shield::AllocationWeights;
use crate::training::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    EavesdropGaussian,
    EavesdropAdversarial,
    JamHighpower,
    JamAdversarial,
    Baseline,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Self::EavesdropGaussian,
        Self::EavesdropAdversarial,
        Self::JamHighpower,
        Self::JamAdversarial,
        Self::Baseline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::EavesdropGaussian => "eavesdrop_gaussian",
            Self::EavesdropAdversarial => "eavesdrop_adversarial",
            Self::JamHighpower => "jam_highpower",
            Self::JamAdversarial => "jam_adversarial",
            Self::Baseline => "baseline",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }

    pub fn is_eavesdrop(self) -> bool {
        matches!(self, Self::EavesdropGaussian | Self::EavesdropAdversarial)
    }

    pub fn is_jamming(self) -> bool {
        matches!(self, Self::JamHighpower | Self::JamAdversarial)
    }
}

/// How the receiver learns the SINR it hands to the denoiser.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnrMode {
    /// Noise plus interference power known exactly.
    #[default]
    Genie,
    /// Estimated from the received power.
    Blind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointPaths {
    pub codec: PathBuf,
    pub denoiser: PathBuf,
    #[serde(default)]
    pub eve: Option<PathBuf>,
}

fn default_eval_images() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub snr_db: Vec<f64>,
    /// AN power grid for the eavesdropping scenarios.
    #[serde(default)]
    pub an_power: Vec<f64>,
    /// Eve's channel SNR; `None` gives her Bob's SNR.
    #[serde(default)]
    pub eve_snr_db: Option<f64>,
    #[serde(default)]
    pub jammer: Option<JammerProfile>,
    /// Optimiser for adversarial AN.
    #[serde(default)]
    pub an_attack: AttackSpec,
    #[serde(default)]
    pub weights: AllocationWeights,
    pub seeds: Vec<u64>,
    #[serde(default = "default_eval_images")]
    pub eval_images: usize,
    #[serde(default)]
    pub dataset: DatasetSource,
    pub checkpoints: CheckpointPaths,
    #[serde(default)]
    pub snr_mode: SnrMode,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.snr_db.is_empty() {
            return Err(bad("snr_db grid is empty"));
        }
        if let Some(s) = self.snr_db.iter().find(|s| !s.is_finite()) {
            return Err(bad(format!("snr_db value {s} is not finite")));
        }
        if let Some(s) = self.eve_snr_db.filter(|s| !s.is_finite()) {
            return Err(bad(format!("eve_snr_db {s} is not finite")));
        }
        if self.seeds.is_empty() {
            return Err(bad("seeds list is empty"));
        }
        if self.eval_images == 0 {
            return Err(bad("eval_images must be positive"));
        }
        if let Some(p) = self.an_power.iter().find(|p| !(**p >= 0.0 && p.is_finite())) {
            return Err(bad(format!("an_power value {p} must be finite and non-negative")));
        }
        if self.scenario.is_eavesdrop() {
            if self.an_power.is_empty() {
                return Err(bad(format!("{} needs a non-empty an_power grid", self.scenario.name())));
            }
            if self.checkpoints.eve.is_none() {
                return Err(bad(format!("{} needs checkpoints.eve", self.scenario.name())));
            }
        }
        if self.scenario.is_jamming() {
            let Some(j) = &self.jammer else {
                return Err(bad(format!("{} needs a jammer profile", self.scenario.name())));
            };
            j.validate().map_err(|e| bad(format!("jammer: {e}")))?;
            let adversarial = j.kind() == JammingKind::Adversarial;
            if adversarial != (self.scenario == Scenario::JamAdversarial) {
                return Err(bad(format!(
                    "jammer kind {} does not fit scenario {}",
                    j.kind().name(),
                    self.scenario.name()
                )));
            }
        }
        if !(self.an_attack.step_fraction > 0.0 && self.an_attack.step_fraction.is_finite()) {
            return Err(bad("an_attack.step_fraction must be positive"));
        }
        Ok(())
    }
}

/// Diffusion schedule as written in a training job.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            steps: 200,
            beta_start: 1e-4,
            beta_end: 0.05,
        }
    }
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<VarianceSchedule> {
        make_schedule(self.steps, self.beta_start, self.beta_end)
    }
}

pub fn default_codec_train() -> TrainConfig {
    TrainConfig {
        epochs: 10,
        batch_size: 64,
        learning_rate: 2e-3,
        snr_range_db: Some((5.0, 20.0)),
        seed: 1,
        max_final_loss: None,
    }
}

pub fn default_denoiser_train() -> TrainConfig {
    TrainConfig {
        epochs: 60,
        batch_size: 128,
        learning_rate: 1e-3,
        snr_range_db: None,
        seed: 2,
        max_final_loss: None,
    }
}

pub fn default_eve_train() -> TrainConfig {
    TrainConfig {
        epochs: 20,
        batch_size: 64,
        learning_rate: 2e-3,
        snr_range_db: Some((5.0, 20.0)),
        seed: 3,
        max_final_loss: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecJob {
    #[serde(default)]
    pub dataset: DatasetSource,
    #[serde(default)]
    pub arch: CodecArch,
    #[serde(default = "default_codec_train")]
    pub train: TrainConfig,
}

impl Default for CodecJob {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::default(),
            arch: CodecArch::default(),
            train: default_codec_train(),
        }
    }
}

fn default_codec_path() -> PathBuf {
    PathBuf::from("codec.smsh")
}

/// Denoiser training on the clean latents of a trained codec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserJob {
    #[serde(default = "default_codec_path")]
    pub codec: PathBuf,
    #[serde(default)]
    pub dataset: DatasetSource,
    #[serde(default)]
    pub arch: DenoiserArch,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default = "default_denoiser_train")]
    pub train: TrainConfig,
}

impl Default for DenoiserJob {
    fn default() -> Self {
        Self {
            codec: default_codec_path(),
            dataset: DatasetSource::default(),
            arch: DenoiserArch::default(),
            schedule: ScheduleSpec::default(),
            train: default_denoiser_train(),
        }
    }
}

/// Eve's classifier on the latents of a trained codec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EveJob {
    #[serde(default = "default_codec_path")]
    pub codec: PathBuf,
    #[serde(default)]
    pub dataset: DatasetSource,
    #[serde(default)]
    pub arch: EveArch,
    #[serde(default = "default_eve_train")]
    pub train: TrainConfig,
}

impl Default for EveJob {
    fn default() -> Self {
        Self {
            codec: default_codec_path(),
            dataset: DatasetSource::default(),
            arch: EveArch::default(),
            train: default_eve_train(),
        }
    }
}

/// Applies `path=value` to a JSON document. `path` is dot-separated;
/// `value` is parsed as JSON and falls back to a plain string.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| bad(format!("override `{assignment}` is not of the form key=value")))?;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(bad(format!("override key `{path}` is malformed")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    for (i, key) in keys.iter().enumerate() {
        let map = match node {
            Value::Object(map) => map,
            Value::Null => {
                *node = Value::Object(Default::default());
                node.as_object_mut().expect("just set")
            }
            _ => return Err(bad(format!("override `{path}`: `{}` is not an object", keys[..i].join(".")))),
        };
        if i + 1 == keys.len() {
            map.insert(key.to_string(), value);
            return Ok(());
        }
        node = map.entry(key.to_string()).or_insert(Value::Null);
    }
    unreachable!("keys is non-empty")
}

/// Recursively overlays `top` onto `base`; objects merge, anything else
/// replaces. Tagged objects whose `kind` differs are replaced whole.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) if b.get("kind") == t.get("kind") || t.get("kind").is_none() => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses a JSON document after applying overrides in order.
pub fn parse_with_overrides<T: DeserializeOwned>(text: &str, overrides: &[String]) -> Result<T> {
    parse_over(Value::Object(Default::default()), text, overrides)
}

fn parse_over<T: DeserializeOwned>(mut doc: Value, text: &str, overrides: &[String]) -> Result<T> {
    let top: Value = serde_json::from_str(text).map_err(|e| bad(format!("malformed JSON: {e}")))?;
    merge(&mut doc, top);
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    serde_json::from_value(doc).map_err(|e| bad(e.to_string()))
}

fn read_config(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| bad(format!("cannot read {}: {e}", path.display())))
}

/// Training job from an optional file layered over the job's defaults, so
/// that a partial document or overrides alone suffice.
pub fn load_job<T>(path: Option<&Path>, overrides: &[String]) -> Result<T>
where
    T: DeserializeOwned + Serialize + Default,
{
    let base = serde_json::to_value(T::default())?;
    let text = match path {
        Some(p) => read_config(p)?,
        None => "{}".to_string(),
    };
    parse_over(base, &text, overrides)
}

pub fn load_experiment(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = parse_with_overrides(&read_config(path)?, overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> &'static str {
        r#"{"scenario": "baseline", "snr_db": [5, 10], "seeds": [1],
            "checkpoints": {"codec": "c.smsh", "denoiser": "d.smsh"}}"#
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c: ExperimentConfig = parse_with_overrides(minimal(), &[]).unwrap();
        c.validate().unwrap();
        assert_eq!(c.eval_images, 1000);
        assert_eq!(c.weights, AllocationWeights::default());
        assert_eq!(c.snr_mode, SnrMode::Genie);
    }

    #[test]
    fn overrides_replace_nested_and_top_level_fields() {
        let c: ExperimentConfig = parse_with_overrides(
            minimal(),
            &["seeds=[3,4]".into(), "checkpoints.codec=other.smsh".into(), "eval_images=7".into()],
        )
        .unwrap();
        assert_eq!(c.seeds, vec![3, 4]);
        assert_eq!(c.checkpoints.codec, PathBuf::from("other.smsh"));
        assert_eq!(c.eval_images, 7);
    }

    #[test]
    fn malformed_override_and_unknown_field_are_config_errors() {
        let e = parse_with_overrides::<ExperimentConfig>(minimal(), &["noequals".into()]).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
        let e = parse_with_overrides::<ExperimentConfig>(minimal(), &["bogus=1".into()]).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
    }

    #[test]
    fn empty_grids_and_mismatched_jammers_are_rejected() {
        let c: ExperimentConfig = parse_with_overrides(minimal(), &["snr_db=[]".into()]).unwrap();
        assert!(c.validate().is_err());
        let c: ExperimentConfig = parse_with_overrides(
            minimal(),
            &["scenario=jam_highpower".into(), r#"jammer={"kind":"noise","jsr_db":40}"#.into()],
        )
        .unwrap();
        c.validate().unwrap();
        let c: ExperimentConfig = parse_with_overrides(
            minimal(),
            &[
                "scenario=jam_adversarial".into(),
                r#"jammer={"kind":"noise","jsr_db":-10}"#.into(),
            ],
        )
        .unwrap();
        assert!(c.validate().is_err());
        let c: ExperimentConfig =
            parse_with_overrides(minimal(), &["scenario=eavesdrop_gaussian".into(), "an_power=[0.1]".into()])
                .unwrap();
        assert!(c.validate().is_err(), "eve checkpoint is required");
    }

    #[test]
    fn jobs_layer_partial_documents_over_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("job.json");
        std::fs::write(&path, r#"{"train": {"learning_rate": 0.01}}"#).unwrap();
        let j: CodecJob = load_job(Some(&path), &["train.epochs=2".into()]).unwrap();
        assert_eq!(j.train.epochs, 2);
        assert_eq!(j.train.learning_rate, 0.01);
        assert_eq!(j.train.batch_size, 64);
        let d: DenoiserJob = load_job(None, &["codec=x.smsh".into()]).unwrap();
        assert_eq!(d.codec, PathBuf::from("x.smsh"));
        assert_eq!(d.schedule, ScheduleSpec::default());
    }

    #[test]
    fn merge_replaces_scalars_and_merges_objects() {
        let mut a = serde_json::json!({"a": {"x": 1, "y": 2}, "b": [1]});
        merge(&mut a, serde_json::json!({"a": {"y": 3}, "b": [2, 3]}));
        assert_eq!(a, serde_json::json!({"a": {"x": 1, "y": 3}, "b": [2, 3]}));
        let mut d = serde_json::json!({"kind": "synthetic", "train": 5});
        merge(&mut d, serde_json::json!({"kind": "idx", "dir": "/x"}));
        assert_eq!(d, serde_json::json!({"kind": "idx", "dir": "/x"}));
    }
}
