//! Training stages, evaluation, ablations and attention studies.
//!
//! Features and pooled object vectors are computed once per scene, since
//! the featurizer is frozen and pooling has no parameters. Training then
//! only runs the two projectors and the decoder.

mod data;
mod eval;
mod model;
mod train;

pub use data::{
    build_dataset, build_scene, normalize_answer, scene_seed, DatasetConfig, Sample, SceneFeatures, Task, CAPTION_INSTRUCTION,
};
pub use eval::{
    ablation_suite, attn_study, chance_of, evaluate, score, train_run, AblationConfig, AblationRow, AblationTable,
    AttentionRecord, AttnStudy, EvalReport, Prediction, TaskScore,
};
pub use model::{Model, ModelConfig};
pub use train::{refer_finetune, train_stage, ModuleSet, Stage, TrainConfig, TrainLog};

use alloc::string::String;

use crate::decoder::DecoderError;
use crate::featurize::FeatureError;
use crate::maskpipe::PipelineError;
use crate::numcore::NumError;
use crate::objproj::ProjError;
use crate::scenesynth::SceneError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HarnessError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Proj(#[from] ProjError),
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error(transparent)]
    Num(#[from] NumError),
}
