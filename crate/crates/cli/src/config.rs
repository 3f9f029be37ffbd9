//! Run configuration: built-in defaults, then a JSON file, then flags.
//!
//! The file is merged key by key into the defaults, so it only needs the
//! fields it changes.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use tabformer::baseline::CostModel;
use tabformer::data::{SplitSpec, SynthConfig};
use tabformer::inference::InferenceConfig;
use tabformer::model::{ModelConfig, TrainConfig};
use tabformer::postprocess::PostprocessConfig;
use tabformer::tokenizer::Vocabulary;
use tabformer::Tuning;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    /// Open-string pitches, string 1 first.
    pub tuning: Vec<u8>,
    pub max_fret: u8,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub inference: InferenceConfig,
    pub postprocess: PostprocessConfig,
    pub cost: CostModel,
    pub synth: SynthConfig,
    pub split: SplitSpec,
}

impl RunConfig {
    /// Defaults with the given model shape.
    pub fn with_model(model: ModelConfig) -> Self {
        let seed = 0;
        Self {
            version: CONFIG_VERSION,
            seed,
            tuning: Tuning::STANDARD.open_pitches().to_vec(),
            max_fret: Tuning::STANDARD.max_fret,
            model,
            train: TrainConfig { seed, ..TrainConfig::pretrain() },
            inference: InferenceConfig::default(),
            postprocess: PostprocessConfig::default(),
            cost: CostModel::default(),
            synth: SynthConfig { seed, ..SynthConfig::default() },
            split: SplitSpec { seed, ..SplitSpec::default() },
        }
    }

    /// Overlays a partial JSON document onto `self`.
    pub fn merge_json(self, overlay: Value) -> Result<Self, String> {
        let mut base = serde_json::to_value(&self).expect("config serializes");
        merge(&mut base, overlay);
        let merged: Self = serde_json::from_value(base).map_err(|e| format!("config: {e}"))?;
        if merged.version != CONFIG_VERSION {
            return Err(format!("config version {} is not supported (expected {CONFIG_VERSION})", merged.version));
        }
        Ok(merged)
    }

    /// Sets every seed in the configuration.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
        self.synth.seed = seed;
        self.split.seed = seed;
    }

    pub fn tuning(&self) -> Result<Tuning, String> {
        Tuning::new(&self.tuning, self.max_fret).map_err(|e| e.to_string())
    }

    pub fn validate(&self) -> Result<(), String> {
        self.tuning()?;
        self.postprocess.validate()?;
        self.cost.validate().map_err(|e| e.to_string())?;
        self.split.validate().map_err(|e| e.to_string())?;
        if self.inference.beam_width == 0 || self.inference.top_k == 0 {
            return Err("beam width and top-k must be positive".into());
        }
        Ok(())
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::with_model(ModelConfig::desk(Vocabulary::default().len()))
    }
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
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

/// `standard` or comma-separated open-string pitches.
pub fn parse_tuning(spec: &str) -> Result<Vec<u8>, String> {
    if spec.eq_ignore_ascii_case("standard") {
        return Ok(Tuning::STANDARD.open_pitches().to_vec());
    }
    Tuning::parse(spec, Tuning::STANDARD.max_fret)
        .map(|t| t.open_pitches().to_vec())
        .map_err(|e| e.to_string())
}
