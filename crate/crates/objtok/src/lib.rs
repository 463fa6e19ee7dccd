//! File formats, dataset export, checkpoints and the `objtok` command-line
//! tool built on `objtok-core`.

use std::path::PathBuf;

use objtok_core::featurize::FeatureError;
use objtok_core::harness::HarnessError;
use objtok_core::maskpipe::PipelineError;
use objtok_core::objproj::ProjError;
use objtok_core::scenesynth::SceneError;

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod files;
pub mod ortn;
pub mod rle;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{path}: {source}", path = .0.display(), source = .1)]
    Path(PathBuf, std::io::Error),
    #[error("format error: {0}")]
    Format(String),
    #[error("checksum mismatch for {}", .0.display())]
    Checksum(PathBuf),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Proj(#[from] ProjError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}
