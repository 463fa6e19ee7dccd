//! The work behind each CLI subcommand. Every command writes `run.json` in
//! its output directory, listing sha256 digests of what it read and wrote
//! by file name.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use objtok_core::decoder::Vocab;
use objtok_core::featurize::{Featurizer, FeaturizerConfig};
use objtok_core::harness::{
    ablation_suite, attn_study, build_dataset, chance_of, evaluate, scene_seed, Model, Sample,
};
use objtok_core::keyframe::{Lexicon, TagStream};
use objtok_core::maskpipe::{run_pipeline, GreedyIouTracker, OracleDetector, OracleSegmenter, PipelineConfig};
use objtok_core::objproj::{encode_all, MAX_OBJECT_TOKENS};
use objtok_core::scenesynth::random_scene;
use objtok_core::video::uniform_indices;
use objtok_core::vidproj::sample_context_frames;

use crate::checkpoint::{self, StageRecord};
use crate::config::{DataSpec, RunConfig};
use crate::files::{
    export_dataset, load_scene, read_feature_map, read_json, read_text, sha256_file, verify_manifest,
    write_bytes, write_feature_map, write_json, write_tokens, SceneManifest,
};
use crate::{rle, Error};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: BTreeMap<String, String>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

/// Collects what a command touched and writes `run.json`.
struct Run {
    manifest: RunManifest,
    out: PathBuf,
}

fn file_name(p: &Path) -> String {
    p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

impl Run {
    fn new(command: &str, out: &Path) -> Self {
        Self {
            manifest: RunManifest {
                command: command.into(),
                args: BTreeMap::new(),
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
            },
            out: out.to_path_buf(),
        }
    }

    fn arg(&mut self, k: &str, v: impl ToString) {
        self.manifest.args.insert(k.into(), v.to_string());
    }

    fn input(&mut self, p: &Path) -> Result<(), Error> {
        self.manifest.inputs.insert(file_name(p), sha256_file(p)?);
        Ok(())
    }

    fn output(&mut self, p: &Path) -> Result<(), Error> {
        self.manifest.outputs.insert(file_name(p), sha256_file(p)?);
        Ok(())
    }

    fn finish(self) -> Result<RunManifest, Error> {
        write_json(&self.out.join("run.json"), &self.manifest)?;
        Ok(self.manifest)
    }
}

fn load_manifest(path: &Path, run: &mut Run) -> Result<(PathBuf, SceneManifest), Error> {
    let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let m: SceneManifest = read_json(path)?;
    verify_manifest(&dir, &m)?;
    run.input(path)?;
    Ok((dir, m))
}

/// `synth gen`: renders `spec.scenes` scenes into `out`.
pub fn synth_gen(spec: &DataSpec, out: &Path) -> Result<RunManifest, Error> {
    let opts = spec.scene_options()?;
    let scenes = (0..spec.scenes)
        .map(|i| Ok((format!("scene{i:05}"), random_scene(scene_seed(spec.seed, i), &opts)?)))
        .collect::<Result<Vec<_>, Error>>()?;
    let manifest = export_dataset(&scenes, out)?;
    let mut run = Run::new("synth gen", out);
    run.arg("scenes", spec.scenes);
    run.arg("seed", spec.seed);
    run.arg("layout", &spec.layout);
    run.arg("frames", spec.frames);
    run.output(&out.join("manifest.json"))?;
    for e in &manifest.scenes {
        for (name, sha) in &e.sha256 {
            run.manifest.outputs.insert(name.clone(), sha.clone());
        }
    }
    log::info!("wrote {} scenes to {}", manifest.scenes.len(), out.display());
    run.finish()
}

/// `pipeline run`: detect, segment and track every scene of a manifest.
/// Detection and segmentation replay the exported ground-truth masks.
pub fn pipeline_run(manifest: &Path, out: &Path, tag_frames: usize) -> Result<RunManifest, Error> {
    let mut run = Run::new("pipeline run", out);
    run.arg("tag_frames", tag_frames);
    let (dir, m) = load_manifest(manifest, &mut run)?;
    let lexicon = Lexicon::builtin();
    let cfg = PipelineConfig::default();
    for e in &m.scenes {
        let scene = load_scene(&dir, e)?;
        let idx = uniform_indices(scene.frames.len(), tag_frames);
        let raw = idx.iter().map(|&f| scene.tags[f].clone()).collect();
        let tags = TagStream::new(idx, raw, &lexicon);
        let set = run_pipeline(
            &e.id,
            &scene.frames,
            &tags,
            &cfg,
            &OracleDetector { masks: &scene.masks },
            &OracleSegmenter { masks: &scene.masks },
            &GreedyIouTracker { tau: cfg.tau_track },
        )?;
        let path = out.join(format!("{}.maskset", e.id));
        write_bytes(&path, rle::write_mask_set(&set).as_bytes())?;
        run.output(&path)?;
    }
    run.finish()
}

/// `featurize`: patch features of `t_v` uniformly sampled frames per scene.
pub fn featurize(manifest: &Path, out: &Path, t_v: usize) -> Result<RunManifest, Error> {
    let mut run = Run::new("featurize", out);
    run.arg("t_v", t_v);
    let (dir, m) = load_manifest(manifest, &mut run)?;
    let featurizer = Featurizer::new(FeaturizerConfig::default())?;
    for e in &m.scenes {
        let scene = load_scene(&dir, e)?;
        let frames = sample_context_frames(scene.frames.len(), t_v);
        let fm = featurizer.featurize_video(&e.id, &scene.frames, &frames)?;
        write_feature_map(out, &fm)?;
        for ext in ["features.ortn", "features.json"] {
            run.output(&out.join(format!("{}.{ext}", e.id)))?;
        }
    }
    run.finish()
}

/// `tokenize`: object and context tokens for each scene from its mask set
/// and feature map, using a checkpoint's projectors.
pub fn tokenize(
    manifest: &Path,
    masks: &Path,
    features: &Path,
    ckpt: &Path,
    out: &Path,
) -> Result<RunManifest, Error> {
    let mut run = Run::new("tokenize", out);
    let (_, m) = load_manifest(manifest, &mut run)?;
    let (model, _) = checkpoint::load(ckpt)?;
    let (bin, side) = checkpoint::paths(ckpt);
    run.input(&bin)?;
    run.input(&side)?;
    for e in &m.scenes {
        let mpath = masks.join(format!("{}.maskset", e.id));
        let set = rle::read_mask_set(&read_text(&mpath)?)?;
        run.input(&mpath)?;
        let fm = read_feature_map(features, &e.id)?;
        run.input(&features.join(format!("{}.features.ortn", e.id)))?;
        let objects = encode_all(&set, &fm, &model.objproj, MAX_OBJECT_TOKENS)?;
        let context = model
            .vidproj
            .stc_lite(&fm.features)
            .map_err(|e| Error::Format(e.to_string()))?;
        write_tokens(out, &e.id, &objects, &context.tokens)?;
        for ext in ["tokens.ortn", "tokens.json"] {
            run.output(&out.join(format!("{}.{ext}", e.id)))?;
        }
    }
    run.finish()
}

/// Samples of every dataset in the config, keyed by name.
pub fn build_all(cfg: &RunConfig) -> Result<BTreeMap<String, Vec<Sample>>, Error> {
    let lexicon = Lexicon::builtin();
    cfg.datasets
        .iter()
        .map(|(name, d)| {
            let samples = build_dataset(&d.dataset_config()?, &lexicon)?;
            log::info!("dataset {name}: {} samples", samples.len());
            Ok((name.clone(), samples))
        })
        .collect()
}

/// One vocabulary over every dataset, so checkpoints chain across stages.
pub fn vocab_of(data: &BTreeMap<String, Vec<Sample>>) -> Vocab {
    Model::vocab_for(data.values().flatten())
}

fn config_run(command: &str, config: &Path, out: &Path) -> Result<(RunConfig, Run), Error> {
    let cfg: RunConfig = read_json(config)?;
    let mut run = Run::new(command, out);
    run.input(config)?;
    Ok((cfg, run))
}

fn load_checkpoint(ckpt: &Path, run: &mut Run) -> Result<(Model, checkpoint::CheckpointMeta), Error> {
    let (bin, side) = checkpoint::paths(ckpt);
    run.input(&bin)?;
    run.input(&side)?;
    checkpoint::load(ckpt)
}

/// `train --stage S`: runs the first configured stage named `stage`,
/// starting from `init` when given, and saves `out/model.{ortn,json}`.
pub fn train(config: &Path, stage: &str, init: Option<&Path>, out: &Path) -> Result<RunManifest, Error> {
    let (cfg, mut run) = config_run("train", config, out)?;
    run.arg("stage", stage);
    let spec = cfg
        .stages
        .iter()
        .find(|s| s.stage == stage)
        .ok_or_else(|| Error::Config(format!("no stage {stage:?} in config")))?;
    let tc = spec.train_config(cfg.seed)?;
    let data = build_all(&cfg)?;
    let samples = data
        .get(&spec.dataset)
        .ok_or_else(|| Error::Config(format!("no dataset named {:?}", spec.dataset)))?;
    let (mut model, mut history) = match init {
        Some(p) => {
            let (m, meta) = load_checkpoint(p, &mut run)?;
            (m, meta.history)
        }
        None => {
            let mc = cfg.model.model_config(cfg.feature_dim()?)?;
            (Model::new(mc, vocab_of(&data), cfg.seed)?, Vec::new())
        }
    };
    let log = objtok_core::harness::train_stage(&mut model, samples, &tc)?;
    log::info!(
        "stage {stage}: {} steps at lr {}, final loss {:.4}",
        log.steps,
        log.effective_lr,
        log.tail_mean(1)
    );
    history.push(StageRecord {
        stage: stage.into(),
        dataset: spec.dataset.clone(),
        lr: log.effective_lr,
        epochs: tc.epochs,
        steps: log.steps,
        final_loss: log.tail_mean(1),
    });
    let stem = out.join("model");
    checkpoint::save(&stem, &model, cfg.seed, &history)?;
    let losses = out.join("losses.json");
    write_json(&losses, &log.losses)?;
    let (bin, side) = checkpoint::paths(&stem);
    for p in [&bin, &side, &losses] {
        run.output(p)?;
    }
    run.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRow {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    pub chance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub sample_id: String,
    pub task: String,
    pub predicted: String,
    pub gold: String,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalFile {
    pub dataset: String,
    pub accuracy: f64,
    pub chance: f64,
    pub tasks: BTreeMap<String, TaskRow>,
    pub predictions: Vec<PredictionRow>,
}

/// `eval`: greedy answers on the config's eval dataset.
pub fn eval(config: &Path, ckpt: &Path, out: &Path) -> Result<RunManifest, Error> {
    let (cfg, mut run) = config_run("eval", config, out)?;
    let name = cfg.eval_dataset()?.to_string();
    let (model, _) = load_checkpoint(ckpt, &mut run)?;
    let samples = build_dataset(&cfg.dataset(&name)?.dataset_config()?, &Lexicon::builtin())?;
    let r = evaluate(&model, &samples)?;
    let file = EvalFile {
        dataset: name,
        accuracy: r.accuracy(),
        chance: chance_of(&r),
        tasks: r
            .tasks
            .iter()
            .map(|(t, s)| {
                (
                    t.name().to_string(),
                    TaskRow {
                        correct: s.correct,
                        total: s.total,
                        accuracy: s.accuracy(),
                        chance: s.chance,
                    },
                )
            })
            .collect(),
        predictions: r
            .predictions
            .iter()
            .map(|p| PredictionRow {
                sample_id: p.sample_id.clone(),
                task: p.task.name().into(),
                predicted: p.predicted.clone(),
                gold: p.gold.clone(),
                correct: p.correct,
            })
            .collect(),
    };
    log::info!("accuracy {:.3} (chance {:.3})", file.accuracy, file.chance);
    let path = out.join("eval.json");
    write_json(&path, &file)?;
    run.output(&path)?;
    run.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRowFile {
    pub label: String,
    pub per_seed: Vec<(u64, f64)>,
    pub mean: f64,
    /// Mean minus the no-object baseline mean, when a baseline ran.
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationFile {
    pub dataset: String,
    pub chance: f64,
    pub rows: Vec<AblationRowFile>,
}

/// `ablate`: every configured stage for the baseline and each variant,
/// over the configured seeds.
pub fn ablate(config: &Path, out: &Path) -> Result<RunManifest, Error> {
    let (cfg, mut run) = config_run("ablate", config, out)?;
    let name = cfg.eval_dataset()?.to_string();
    let ac = cfg.ablation_config(cfg.feature_dim()?)?;
    let data = build_all(&cfg)?;
    let vocab = vocab_of(&data);
    let stage_data: Vec<&[Sample]> = cfg
        .stages
        .iter()
        .map(|s| data.get(&s.dataset).map(Vec::as_slice))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::Config("stage names an unknown dataset".into()))?;
    let table = ablation_suite(&ac, &vocab, &stage_data, &data[&name])?;
    let file = AblationFile {
        dataset: name,
        chance: table.chance,
        rows: table
            .rows
            .iter()
            .map(|r| AblationRowFile {
                label: r.label.clone(),
                per_seed: r.per_seed.clone(),
                mean: r.mean(),
                delta: table.delta(r),
            })
            .collect(),
    };
    let path = out.join("ablation.json");
    write_json(&path, &file)?;
    run.output(&path)?;
    run.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttnRecordFile {
    pub sample_id: String,
    pub relevant: usize,
    pub argmax: usize,
    pub correct: bool,
    pub weights: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttnFile {
    pub dataset: String,
    /// Over correctly answered items.
    pub localization: f64,
    pub chance: f64,
    pub counted: usize,
    pub localization_all: f64,
    pub chance_all: f64,
    pub records: Vec<AttnRecordFile>,
}

/// `attn-report`: per-object attention for every item of the eval dataset
/// that names a relevant object.
pub fn attn_report(config: &Path, ckpt: &Path, out: &Path) -> Result<RunManifest, Error> {
    let (cfg, mut run) = config_run("attn-report", config, out)?;
    let name = cfg.eval_dataset()?.to_string();
    let (model, _) = load_checkpoint(ckpt, &mut run)?;
    let samples = build_dataset(&cfg.dataset(&name)?.dataset_config()?, &Lexicon::builtin())?;
    let study = attn_study(&model, &samples)?;
    let (localization, chance) = study.localization();
    let (localization_all, chance_all) = study.localization_all();
    let file = AttnFile {
        dataset: name,
        localization,
        chance,
        counted: study.counted(),
        localization_all,
        chance_all,
        records: study
            .records
            .iter()
            .map(|r| AttnRecordFile {
                sample_id: r.sample_id.clone(),
                relevant: r.relevant,
                argmax: r.argmax,
                correct: r.correct,
                weights: r.weights.clone(),
            })
            .collect(),
    };
    let path = out.join("attention.json");
    write_json(&path, &file)?;
    run.output(&path)?;
    run.finish()
}
