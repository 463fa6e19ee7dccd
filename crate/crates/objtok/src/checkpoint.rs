//! Model checkpoints: the three parameter vectors as ORTN records
//! (video projector, object projector, decoder) plus a JSON sidecar.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use objtok_core::decoder::Vocab;
use objtok_core::harness::Model;
use objtok_core::numcore::Module;

use crate::config::ModelSpec;
use crate::files::{read_json, write_json};
use crate::ortn::{self, Payload, Record};
use crate::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub dataset: String,
    pub lr: f64,
    pub epochs: usize,
    pub steps: usize,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelSpec,
    pub feature_dim: usize,
    pub seed: u64,
    /// Full vocabulary including the reserved tokens.
    pub vocab: Vec<String>,
    pub history: Vec<StageRecord>,
}

/// `(weights, sidecar)` paths for a checkpoint stem such as `out/model`.
pub fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("ortn"), stem.with_extension("json"))
}

pub fn save(stem: &Path, model: &Model, seed: u64, history: &[StageRecord]) -> Result<(), Error> {
    let (bin, side) = paths(stem);
    let recs = [
        model.vidproj.flat_values(),
        model.objproj.flat_values(),
        model.decoder.flat_values(),
    ]
    .into_iter()
    .map(|v| Record::new(vec![v.len()], Payload::F64(v)))
    .collect::<Result<Vec<_>, _>>()?;
    ortn::write_file(&bin, &recs)?;
    write_json(
        &side,
        &CheckpointMeta {
            model: ModelSpec::from_model_config(&model.cfg),
            feature_dim: model.cfg.feature_dim,
            seed,
            vocab: model.vocab.words().to_vec(),
            history: history.to_vec(),
        },
    )
}

fn fill(module: &mut dyn Module, rec: &Record, what: &str) -> Result<(), Error> {
    let Payload::F64(v) = &rec.payload else {
        return Err(Error::Format(format!("{what} weights must be f64")));
    };
    if v.len() != module.param_count() {
        return Err(Error::Format(format!(
            "{what} has {} parameters, checkpoint holds {}",
            module.param_count(),
            v.len()
        )));
    }
    module.set_flat_values(v);
    Ok(())
}

pub fn load(stem: &Path) -> Result<(Model, CheckpointMeta), Error> {
    let (bin, side) = paths(stem);
    let meta: CheckpointMeta = read_json(&side)?;
    let recs = ortn::read_file(&bin)?;
    if recs.len() != 3 {
        return Err(Error::Format(format!("checkpoint has {} records, want 3", recs.len())));
    }
    let cfg = meta.model.model_config(meta.feature_dim)?;
    let vocab = Vocab::from_words(meta.vocab.clone());
    let mut model = Model::new(cfg, vocab, meta.seed)?;
    if model.vocab.words() != meta.vocab.as_slice() {
        return Err(Error::Format("checkpoint vocabulary does not rebuild".into()));
    }
    fill(&mut model.vidproj, &recs[0], "video projector")?;
    fill(&mut model.objproj, &recs[1], "object projector")?;
    fill(&mut model.decoder, &recs[2], "decoder")?;
    Ok((model, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use objtok_core::harness::ModelConfig;

    #[test]
    fn save_load_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = Vocab::build(["a red circle", "where is it ?"]);
        let mut cfg = ModelConfig::new(32);
        cfg.d = 16;
        cfg.d_ff = 32;
        cfg.heads = 2;
        let model = Model::new(cfg, vocab, 9).unwrap();
        let hist = vec![StageRecord {
            stage: "2".into(),
            dataset: "train".into(),
            lr: 1e-3,
            epochs: 1,
            steps: 4,
            final_loss: 1.25,
        }];
        let stem = dir.path().join("m");
        save(&stem, &model, 9, &hist).unwrap();
        let (back, meta) = load(&stem).unwrap();
        assert_eq!(back, model);
        assert_eq!(meta.history, hist);
    }
}
