use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;

use super::HarnessError;
use crate::featurize::{Featurizer, FeaturizerConfig};
use crate::keyframe::{Lexicon, TagStream};
use crate::maskpipe::{run_pipeline, GreedyIouTracker, OracleDetector, OracleSegmenter, PipelineConfig};
use crate::numcore::Tensor;
use crate::objproj::{pool_objects, PooledObject, MAX_OBJECT_TOKENS};
use crate::rng::SeededRng;
use crate::scenesynth::{generate_scene, make_question, random_scene, QuestionTemplate, SceneOptions, SceneTruth};
use crate::video::uniform_indices;
use crate::vidproj::{block_pool, sample_context_frames};

/// What a sample asks for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    Caption,
    CountObjects,
    ColorOfShape,
    WhereIsColor,
    ReferColor,
    ReferShape,
    ReferDirection,
    ReferWhere,
}

impl Task {
    pub const ALL: [Task; 8] = [
        Task::Caption,
        Task::CountObjects,
        Task::ColorOfShape,
        Task::WhereIsColor,
        Task::ReferColor,
        Task::ReferShape,
        Task::ReferDirection,
        Task::ReferWhere,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::Caption => "caption",
            Task::CountObjects => "count",
            Task::ColorOfShape => "color_of_shape",
            Task::WhereIsColor => "where",
            Task::ReferColor => "refer_color",
            Task::ReferShape => "refer_shape",
            Task::ReferDirection => "refer_direction",
            Task::ReferWhere => "refer_where",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == s)
    }

    pub fn is_referring(self) -> bool {
        matches!(self, Task::ReferColor | Task::ReferShape | Task::ReferDirection | Task::ReferWhere)
    }

    fn template(self) -> Option<QuestionTemplate> {
        Some(match self {
            Task::Caption => return None,
            Task::CountObjects => QuestionTemplate::CountObjects,
            Task::ColorOfShape => QuestionTemplate::ColorOfShape,
            Task::WhereIsColor => QuestionTemplate::WhereIsColor,
            Task::ReferColor => QuestionTemplate::ReferColor,
            Task::ReferShape => QuestionTemplate::ReferShape,
            Task::ReferDirection => QuestionTemplate::ReferDirection,
            Task::ReferWhere => QuestionTemplate::ReferWhere,
        })
    }
}

/// Instruction used for caption samples.
pub const CAPTION_INSTRUCTION: &str = "describe the video.";

/// Everything the trainable modules need from one video.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneFeatures {
    pub id: String,
    /// Block-pooled context features, `[N_v x D]`.
    pub context: Tensor,
    /// Capped and ordered as they appear in prompts.
    pub objects: Vec<PooledObject>,
    /// Scene object index behind each pooled object.
    pub truth_index: Vec<usize>,
    pub caption: String,
}

impl SceneFeatures {
    pub fn object_ids(&self) -> Vec<usize> {
        self.objects.iter().map(|o| o.id).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub scene: Arc<SceneFeatures>,
    pub task: Task,
    pub instruction: String,
    /// Object id whose token fills `<o>` in referring prompts.
    pub target: Option<usize>,
    /// Object id the question is about, for attention studies.
    pub relevant: Option<usize>,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub scenes: usize,
    pub seed: u64,
    pub scene: SceneOptions,
    pub featurizer: FeaturizerConfig,
    pub pipeline: PipelineConfig,
    /// Frames sampled for the context branch.
    pub t_v: usize,
    /// Frames sampled for tagging.
    pub tag_frames: usize,
    pub max_objects: usize,
    /// One sample per task per scene.
    pub tasks: Vec<Task>,
}

impl DatasetConfig {
    pub fn new(scenes: usize, seed: u64, scene: SceneOptions, tasks: Vec<Task>) -> Self {
        Self {
            scenes,
            seed,
            scene,
            featurizer: FeaturizerConfig::default(),
            pipeline: PipelineConfig::default(),
            t_v: 8,
            tag_frames: 16,
            max_objects: MAX_OBJECT_TOKENS,
            tasks,
        }
    }
}

/// Seed of scene `index` in a dataset seeded with `seed`.
pub fn scene_seed(seed: u64, index: usize) -> u64 {
    SeededRng::derived(seed, index as u64).next_u64()
}

/// Runs synthesis, the mask pipeline and featurization for one scene.
pub fn build_scene(
    index: usize,
    cfg: &DatasetConfig,
    featurizer: &Featurizer,
    lexicon: &Lexicon,
) -> Result<(SceneFeatures, SceneTruth), HarnessError> {
    let seed = scene_seed(cfg.seed, index);
    let spec = random_scene(seed, &cfg.scene)?;
    let truth = generate_scene(&spec)?;
    let t = truth.num_frames();
    let tag_idx = uniform_indices(t, cfg.tag_frames);
    let raw = tag_idx.iter().map(|&f| truth.tags[f].clone()).collect();
    let tags = TagStream::new(tag_idx, raw, lexicon);
    let id = format!("scene{index:05}");
    let masks = run_pipeline(
        &id,
        &truth.frames,
        &tags,
        &cfg.pipeline,
        &OracleDetector { masks: &truth.masks },
        &OracleSegmenter { masks: &truth.masks },
        &GreedyIouTracker {
            tau: cfg.pipeline.tau_track,
        },
    )?;
    let frames = sample_context_frames(t, cfg.t_v);
    let fm = featurizer.featurize_video(&id, &truth.frames, &frames)?;
    let (context, _) = block_pool(&fm.features)?;
    let objects = pool_objects(&masks, &fm, cfg.max_objects)?;
    let truth_index = objects
        .iter()
        .map(|o| {
            let track = masks.tracks.iter().find(|t| t.id == o.id).expect("pooled track exists");
            let (f, m) = &track.masks[0];
            (0..truth.num_objects())
                .max_by(|&a, &b| {
                    let ia = truth.masks[a][*f].iou(m);
                    let ib = truth.masks[b][*f].iou(m);
                    ia.total_cmp(&ib).then(b.cmp(&a))
                })
                .unwrap_or(0)
        })
        .collect();
    Ok((
        SceneFeatures {
            id,
            context,
            objects,
            truth_index,
            caption: truth.caption.clone(),
        },
        truth,
    ))
}

fn sample_for(
    scene: &Arc<SceneFeatures>,
    truth: &SceneTruth,
    task: Task,
    rng: &mut SeededRng,
) -> Result<Option<Sample>, HarnessError> {
    let id = format!("{}-{}", scene.id, task.name());
    let Some(template) = task.template() else {
        return Ok(Some(Sample {
            id,
            scene: scene.clone(),
            task,
            instruction: CAPTION_INSTRUCTION.into(),
            target: None,
            relevant: None,
            answer: scene.caption.clone(),
        }));
    };
    if scene.objects.is_empty() {
        return Ok(None);
    }
    let slot = rng.below(0, scene.objects.len());
    let object = scene.truth_index[slot];
    let qa = match make_question(truth, template, object) {
        Ok(qa) => qa,
        Err(crate::scenesynth::SceneError::NoApplicableQuestion) => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let oid = scene.objects[slot].id;
    let about = template != QuestionTemplate::CountObjects;
    Ok(Some(Sample {
        id,
        scene: scene.clone(),
        task,
        instruction: qa.question,
        target: task.is_referring().then_some(oid),
        relevant: about.then_some(oid),
        answer: qa.answer,
    }))
}

/// Scenes `0..cfg.scenes`, each contributing one sample per task where the
/// task applies.
pub fn build_dataset(cfg: &DatasetConfig, lexicon: &Lexicon) -> Result<Vec<Sample>, HarnessError> {
    let featurizer = Featurizer::new(cfg.featurizer)?;
    let mut rng = SeededRng::derived(cfg.seed, 0xda7a);
    let mut out = Vec::new();
    for i in 0..cfg.scenes {
        let (features, truth) = build_scene(i, cfg, &featurizer, lexicon)?;
        let features = Arc::new(features);
        for &task in &cfg.tasks {
            if let Some(s) = sample_for(&features, &truth, task, &mut rng)? {
                out.push(s);
            }
        }
    }
    Ok(out)
}

/// Lowercase, punctuation to spaces, single spaces.
pub fn normalize_answer(s: &str) -> String {
    let cleaned: String = s
        .chars()
        .map(|c| if c.is_alphanumeric() { c.to_ascii_lowercase() } else { ' ' })
        .collect();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ").to_string()
}
