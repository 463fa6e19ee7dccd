//! JSON run configuration.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use objtok_core::harness::{AblationConfig, DatasetConfig, ModelConfig, ModuleSet, Stage, Task, TrainConfig};
use objtok_core::objproj::{Variant, MAX_OBJECT_TOKENS};
use objtok_core::scenesynth::{Layout, SceneOptions};

use crate::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub scenes: usize,
    pub seed: u64,
    /// "quadrants" or "free".
    #[serde(default = "default_layout")]
    pub layout: String,
    #[serde(default = "default_frames")]
    pub frames: usize,
    pub min_objects: Option<usize>,
    pub max_objects: Option<usize>,
    pub tasks: Vec<String>,
    #[serde(default = "default_t_v")]
    pub t_v: usize,
    #[serde(default = "default_cap")]
    pub max_object_tokens: usize,
}

fn default_layout() -> String {
    "free".into()
}
fn default_frames() -> usize {
    16
}
fn default_t_v() -> usize {
    8
}
fn default_cap() -> usize {
    MAX_OBJECT_TOKENS
}

impl DataSpec {
    pub fn scene_options(&self) -> Result<SceneOptions, Error> {
        let mut o = match self.layout.as_str() {
            "quadrants" => SceneOptions::quadrants(self.frames),
            "free" => SceneOptions {
                frames: self.frames,
                ..SceneOptions::default()
            },
            other => return Err(Error::Config(format!("unknown layout {other:?}"))),
        };
        if let Some(n) = self.min_objects {
            o.min_objects = n;
        }
        if let Some(n) = self.max_objects {
            o.max_objects = n;
        }
        if o.layout == Layout::Quadrants && o.max_objects > 4 {
            return Err(Error::Config("quadrant layout holds at most 4 objects".into()));
        }
        Ok(o)
    }

    pub fn tasks(&self) -> Result<Vec<Task>, Error> {
        self.tasks
            .iter()
            .map(|t| Task::from_name(t).ok_or_else(|| Error::Config(format!("unknown task {t:?}"))))
            .collect()
    }

    pub fn dataset_config(&self) -> Result<DatasetConfig, Error> {
        let mut c = DatasetConfig::new(self.scenes, self.seed, self.scene_options()?, self.tasks()?);
        c.t_v = self.t_v;
        c.max_objects = self.max_object_tokens;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default = "default_d_ff")]
    pub d_ff: usize,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    #[serde(default = "default_variant")]
    pub variant: String,
    #[serde(default)]
    pub pool_first: bool,
    #[serde(default = "yes")]
    pub use_objects: bool,
    #[serde(default)]
    pub tied_head: bool,
    #[serde(default)]
    pub list_referring: bool,
    #[serde(default = "default_max_answer")]
    pub max_answer: usize,
}

fn default_d() -> usize {
    64
}
fn default_layers() -> usize {
    2
}
fn default_heads() -> usize {
    4
}
fn default_d_ff() -> usize {
    256
}
fn default_max_len() -> usize {
    256
}
fn default_variant() -> String {
    "mlp".into()
}
fn yes() -> bool {
    true
}
fn default_max_answer() -> usize {
    16
}

impl Default for ModelSpec {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

impl ModelSpec {
    pub fn model_config(&self, feature_dim: usize) -> Result<ModelConfig, Error> {
        let mut m = ModelConfig::new(feature_dim);
        m.d = self.d;
        m.layers = self.layers;
        m.heads = self.heads;
        m.d_ff = self.d_ff;
        m.max_len = self.max_len;
        m.variant = parse_variant(&self.variant)?;
        m.pool_first = self.pool_first;
        m.use_objects = self.use_objects;
        m.tied_head = self.tied_head;
        m.list_referring = self.list_referring;
        m.max_answer = self.max_answer;
        Ok(m)
    }

    pub fn from_model_config(m: &ModelConfig) -> Self {
        Self {
            d: m.d,
            layers: m.layers,
            heads: m.heads,
            d_ff: m.d_ff,
            max_len: m.max_len,
            variant: m.variant.name().into(),
            pool_first: m.pool_first,
            use_objects: m.use_objects,
            tied_head: m.tied_head,
            list_referring: m.list_referring,
            max_answer: m.max_answer,
        }
    }
}

pub fn parse_variant(s: &str) -> Result<Variant, Error> {
    Variant::from_name(s).map_err(|e| Error::Config(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    /// "1", "2", "3" or "refer".
    pub stage: String,
    /// Key into `datasets`.
    pub dataset: String,
    /// Defaults to the stage's reference rate.
    pub lr: Option<f64>,
    #[serde(default = "default_warmup")]
    pub warmup_ratio: f64,
    pub epochs: Option<usize>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Overrides the stage's trainable modules, e.g. `["objproj"]`.
    pub trainable: Option<Vec<String>>,
}

fn default_warmup() -> f64 {
    0.03
}
fn default_batch() -> usize {
    16
}

impl StageSpec {
    pub fn stage(&self) -> Result<Stage, Error> {
        Stage::from_name(&self.stage).ok_or_else(|| Error::Config(format!("unknown stage {:?}", self.stage)))
    }

    pub fn train_config(&self, seed: u64) -> Result<TrainConfig, Error> {
        let stage = self.stage()?;
        let mut c = TrainConfig::new(stage, self.lr.unwrap_or(stage.reference_lr()), seed);
        c.warmup_ratio = self.warmup_ratio;
        c.batch_size = self.batch_size;
        if let Some(e) = self.epochs {
            c.epochs = e;
        }
        if let Some(t) = &self.trainable {
            let mut set = ModuleSet::default();
            for m in t {
                match m.as_str() {
                    "vidproj" => set.vidproj = true,
                    "objproj" => set.objproj = true,
                    "decoder" => set.decoder = true,
                    other => return Err(Error::Config(format!("unknown module {other:?}"))),
                }
            }
            c.trainable = set;
        }
        c.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSpec {
    pub variants: Vec<String>,
    pub seeds: Vec<u64>,
    #[serde(default = "yes")]
    pub include_baseline: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub datasets: BTreeMap<String, DataSpec>,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub stages: Vec<StageSpec>,
    /// Key into `datasets` used by `eval`, `ablate` and `attn-report`.
    pub eval: Option<String>,
    pub ablation: Option<AblationSpec>,
}

impl RunConfig {
    pub fn dataset(&self, name: &str) -> Result<&DataSpec, Error> {
        self.datasets
            .get(name)
            .ok_or_else(|| Error::Config(format!("no dataset named {name:?}")))
    }

    pub fn eval_dataset(&self) -> Result<&str, Error> {
        self.eval
            .as_deref()
            .ok_or_else(|| Error::Config("config has no eval dataset".into()))
    }

    pub fn ablation_config(&self, feature_dim: usize) -> Result<AblationConfig, Error> {
        let a = self
            .ablation
            .as_ref()
            .ok_or_else(|| Error::Config("config has no ablation section".into()))?;
        Ok(AblationConfig {
            model: self.model.model_config(feature_dim)?,
            variants: a.variants.iter().map(|v| parse_variant(v)).collect::<Result<_, _>>()?,
            seeds: a.seeds.clone(),
            stages: self
                .stages
                .iter()
                .map(|s| s.train_config(self.seed))
                .collect::<Result<_, _>>()?,
            include_baseline: a.include_baseline,
        })
    }

    /// Every featurizer dim must agree since one vocabulary and model
    /// serve all datasets.
    pub fn feature_dim(&self) -> Result<usize, Error> {
        let mut dims = self
            .datasets
            .values()
            .map(|d| d.dataset_config().map(|c| c.featurizer.dim));
        let first = dims.next().ok_or_else(|| Error::Config("config has no datasets".into()))??;
        for d in dims {
            if d? != first {
                return Err(Error::Config("datasets disagree on feature dim".into()));
            }
        }
        Ok(first)
    }
}
