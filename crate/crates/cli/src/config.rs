//! Run configuration: defaults, JSON overlays and the echoed record.

use std::fs;
use std::path::Path;

use holo_core::atlas::StrataConfig;
use holo_core::evalmetrics::SlidingWindow;
use holo_core::losses::LossWeights;
use holo_core::model::ModelConfig;
use holo_core::partition::PartitionConfig;
use holo_core::synth::{EffectModel, PhantomConfig};
use holo_core::train::OptimizerConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

pub const CONFIG_VERSION: u32 = 1;
pub const CONFIG_FILE: &str = "run_config.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSection {
    pub n: usize,
    pub phantom: PhantomConfig,
    /// When set, studies form a healthy cohort with this age/effect model.
    pub cohort: Option<CohortSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortSection {
    pub age_range: (u32, u32),
    /// Defaults to independent organs with 10% spread.
    pub effect: Option<EffectModel>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSection {
    pub steps: usize,
    pub optimizer: OptimizerConfig,
    pub weights: LossWeights,
    pub raw_sum: bool,
    /// Extra checkpoint every this many steps; 0 keeps only the final one.
    pub checkpoint_every: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationSection {
    pub window: SlidingWindow,
    /// SUV at which the baseline predictor reaches probability 0.5.
    pub pet_threshold: f64,
    /// Logistic width of the predictor, in SUV.
    pub pet_scale: f64,
    /// Organs with physiological uptake the predictor ignores.
    pub physiologic_organs: Vec<String>,
    pub exclude_both_empty: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportSection {
    pub max_len: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    Suv,
    Embedding,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtlasSection {
    pub features: FeatureMode,
    pub standardize: bool,
    pub r_threshold: f64,
    pub fdr_alpha: f64,
    /// Class names dropped before any analysis.
    pub exclude_organs: Vec<String>,
    /// Also emit covariance differences with the urinary bladder excluded.
    pub bladder_comparison: bool,
    pub strata: StrataConfig,
    pub top_k: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub version: u32,
    /// Command that produced this record.
    pub command: String,
    pub seed: u64,
    pub synth: SynthSection,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub partition: PartitionConfig,
    pub segmentation: SegmentationSection,
    pub report: ReportSection,
    pub atlas: AtlasSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            command: String::new(),
            seed: 0,
            synth: SynthSection {
                n: 4,
                phantom: PhantomConfig::whole_body(),
                cohort: None,
            },
            model: ModelConfig::default(),
            train: TrainSection {
                steps: 200,
                optimizer: OptimizerConfig::default(),
                weights: LossWeights::default(),
                raw_sum: false,
                checkpoint_every: 0,
            },
            partition: PartitionConfig::default(),
            segmentation: SegmentationSection {
                window: SlidingWindow::default(),
                pet_threshold: 4.0,
                pet_scale: 0.5,
                physiologic_organs: ["brain", "heart", "left_kidney", "right_kidney", "urinary_bladder"]
                    .map(String::from)
                    .to_vec(),
                exclude_both_empty: false,
            },
            report: ReportSection { max_len: 128 },
            atlas: AtlasSection {
                features: FeatureMode::Suv,
                standardize: false,
                r_threshold: 0.5,
                fdr_alpha: 0.05,
                exclude_organs: vec![],
                bladder_comparison: true,
                strata: StrataConfig::default(),
                top_k: 20,
            },
        }
    }
}

/// Recursively overlays `patch` on `base`. Objects merge key by key and
/// reject keys the base does not have (unless the base value is null, i.e.
/// an unset option); everything else is replaced.
fn overlay(base: &mut Value, patch: Value, path: &str) -> CliResult<()> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let here = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) if !slot.is_null() => overlay(slot, v, &here)?,
                    Some(slot) => *slot = v,
                    None => return Err(CliError::Usage(format!("unknown config key `{here}`"))),
                }
            }
            Ok(())
        }
        (b, p) => {
            *b = p;
            Ok(())
        }
    }
}

/// Internally tagged enums (`kind`): a changed tag replaces
/// the whole value instead of merging fields across variants.
fn retag(base: &mut Value, patch: &Value) {
    if let (Value::Object(b), Value::Object(p)) = (&mut *base, patch) {
        if let (Some(bk), Some(pk)) = (b.get("kind"), p.get("kind")) {
            if bk != pk {
                *base = patch.clone();
                return;
            }
        }
        for (k, v) in p {
            if let Some(slot) = b.get_mut(k) {
                retag(slot, v);
            }
        }
    }
}

impl RunConfig {
    /// Defaults overlaid with the JSON object in `text`.
    pub fn from_json_overlay(text: &str) -> CliResult<(Self, Value)> {
        let patch: Value =
            serde_json::from_str(text).map_err(|e| CliError::Usage(format!("config is not valid JSON: {e}")))?;
        if !patch.is_object() {
            return Err(CliError::Usage("config must be a JSON object".into()));
        }
        let mut base = serde_json::to_value(Self::default()).expect("default config serializes");
        retag(&mut base, &patch);
        overlay(&mut base, patch.clone(), "")?;
        let cfg: Self = serde_json::from_value(base).map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
        if cfg.version != CONFIG_VERSION {
            return Err(CliError::Usage(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        Ok((cfg, patch))
    }

    /// Loads `path`, or the defaults when `None`. The second value is the
    /// raw overlay, used to tell which sections the user set explicitly.
    pub fn load(path: Option<&Path>) -> CliResult<(Self, Value)> {
        match path {
            None => Ok((Self::default(), Value::Object(Default::default()))),
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                Self::from_json_overlay(&text)
            }
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        self.model.validate()?;
        self.train.optimizer.validate()?;
        self.train.weights.validate()?;
        self.segmentation.window.validate()?;
        if !(self.segmentation.pet_scale > 0.0) {
            return Err(CliError::Usage("segmentation.pet_scale must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.atlas.r_threshold) {
            return Err(CliError::Usage(format!("r threshold {} outside [0, 1]", self.atlas.r_threshold)));
        }
        if !(self.atlas.fdr_alpha > 0.0 && self.atlas.fdr_alpha <= 1.0) {
            return Err(CliError::Usage(format!("FDR level {} outside (0, 1]", self.atlas.fdr_alpha)));
        }
        Ok(())
    }

    /// Writes the resolved configuration to `dir/run_config.json`.
    pub fn echo(&self, dir: &Path) -> CliResult<()> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(CONFIG_FILE);
        let text = serde_json::to_string_pretty(self).expect("config serializes") + "\n";
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }
}
