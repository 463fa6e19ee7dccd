use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::data::{normalize_answer, Sample, Task};
use super::model::{Model, ModelConfig};
use super::train::{train_stage, TrainConfig};
use super::HarnessError;
use crate::decoder::Vocab;
use crate::objproj::Variant;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskScore {
    pub correct: usize,
    pub total: usize,
    /// One over the number of distinct gold answers.
    pub chance: f64,
}

impl TaskScore {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prediction {
    pub sample_id: String,
    pub task: Task,
    pub predicted: String,
    pub gold: String,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub tasks: BTreeMap<Task, TaskScore>,
    pub predictions: Vec<Prediction>,
}

impl EvalReport {
    pub fn accuracy(&self) -> f64 {
        let total = self.predictions.len();
        if total == 0 {
            return 0.0;
        }
        self.predictions.iter().filter(|p| p.correct).count() as f64 / total as f64
    }

    pub fn task_accuracy(&self, task: Task) -> Option<f64> {
        self.tasks.get(&task).map(TaskScore::accuracy)
    }
}

/// Scores precomputed answers by normalized exact match.
pub fn score(samples: &[Sample], answers: &[String]) -> EvalReport {
    let mut tasks: BTreeMap<Task, TaskScore> = BTreeMap::new();
    let mut golds: BTreeMap<Task, BTreeSet<String>> = BTreeMap::new();
    let mut predictions = Vec::with_capacity(samples.len());
    for (s, a) in samples.iter().zip(answers) {
        let gold = normalize_answer(&s.answer);
        let predicted = normalize_answer(a);
        let correct = gold == predicted;
        let e = tasks.entry(s.task).or_insert(TaskScore {
            correct: 0,
            total: 0,
            chance: 0.0,
        });
        e.total += 1;
        e.correct += correct as usize;
        golds.entry(s.task).or_default().insert(gold.clone());
        predictions.push(Prediction {
            sample_id: s.id.clone(),
            task: s.task,
            predicted,
            gold,
            correct,
        });
    }
    for (t, e) in tasks.iter_mut() {
        e.chance = 1.0 / golds[t].len() as f64;
    }
    EvalReport { tasks, predictions }
}

/// Greedy generation and exact match on every sample.
pub fn evaluate(model: &Model, samples: &[Sample]) -> Result<EvalReport, HarnessError> {
    let answers = samples
        .iter()
        .map(|s| model.answer(s))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(score(samples, &answers))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    pub sample_id: String,
    pub relevant: usize,
    /// `(object id, weight)` in prompt order, summing to one.
    pub weights: Vec<(usize, f64)>,
    pub argmax: usize,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AttnStudy {
    pub records: Vec<AttentionRecord>,
}

impl AttnStudy {
    fn rate<'a>(records: impl Iterator<Item = &'a AttentionRecord>) -> (f64, f64) {
        let (mut hit, mut chance, mut n) = (0usize, 0.0, 0usize);
        for r in records {
            n += 1;
            hit += (r.argmax == r.relevant) as usize;
            chance += 1.0 / r.weights.len() as f64;
        }
        if n == 0 {
            (0.0, 0.0)
        } else {
            (hit as f64 / n as f64, chance / n as f64)
        }
    }

    /// Localization rate and its chance level over correctly answered
    /// items.
    pub fn localization(&self) -> (f64, f64) {
        Self::rate(self.records.iter().filter(|r| r.correct))
    }

    /// Same over every item, answered correctly or not.
    pub fn localization_all(&self) -> (f64, f64) {
        Self::rate(self.records.iter())
    }

    pub fn counted(&self) -> usize {
        self.records.iter().filter(|r| r.correct).count()
    }
}

/// Attention over object slots for each sample that names a relevant
/// object. Ties in the argmax go to the earlier slot.
pub fn attn_study(model: &Model, samples: &[Sample]) -> Result<AttnStudy, HarnessError> {
    let mut records = Vec::new();
    for s in samples {
        let Some(relevant) = s.relevant else { continue };
        let (answer, weights) = model.attention(s)?;
        let mut best = 0;
        for (i, w) in weights.iter().enumerate() {
            if w.1 > weights[best].1 {
                best = i;
            }
        }
        records.push(AttentionRecord {
            sample_id: s.id.clone(),
            relevant,
            argmax: weights[best].0,
            weights,
            correct: normalize_answer(&answer) == normalize_answer(&s.answer),
        });
    }
    Ok(AttnStudy { records })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationConfig {
    pub model: ModelConfig,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    /// Stages run in order; each config's seed is replaced per run.
    pub stages: Vec<TrainConfig>,
    pub include_baseline: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub label: String,
    /// `None` for the context-only baseline.
    pub variant: Option<Variant>,
    pub per_seed: Vec<(u64, f64)>,
}

impl AblationRow {
    pub fn mean(&self) -> f64 {
        if self.per_seed.is_empty() {
            return 0.0;
        }
        self.per_seed.iter().map(|p| p.1).sum::<f64>() / self.per_seed.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    /// Chance accuracy of the eval set.
    pub chance: f64,
}

impl AblationTable {
    pub fn baseline(&self) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant.is_none())
    }

    /// Mean accuracy of `row` minus the baseline mean.
    pub fn delta(&self, row: &AblationRow) -> Option<f64> {
        self.baseline().map(|b| row.mean() - b.mean())
    }
}

/// Trains one model for `seed` through every stage.
pub fn train_run(
    cfg: ModelConfig,
    vocab: &Vocab,
    stages: &[TrainConfig],
    stage_data: &[&[Sample]],
    seed: u64,
) -> Result<Model, HarnessError> {
    if stages.len() != stage_data.len() {
        return Err(HarnessError::Config("one dataset per stage".into()));
    }
    let mut model = Model::new(cfg, vocab.clone(), seed)?;
    for (st, data) in stages.iter().zip(stage_data) {
        let only_objects = st.trainable.objproj && !st.trainable.vidproj && !st.trainable.decoder;
        // Without object slots such a stage has zero gradients throughout.
        if !cfg.use_objects && only_objects {
            continue;
        }
        let mut st = *st;
        st.seed = seed;
        train_stage(&mut model, data, &st)?;
    }
    Ok(model)
}

/// Context-only baseline plus one row per variant, each over all seeds,
/// scored on `eval`.
pub fn ablation_suite(
    cfg: &AblationConfig,
    vocab: &Vocab,
    stage_data: &[&[Sample]],
    eval: &[Sample],
) -> Result<AblationTable, HarnessError> {
    let mut runs: Vec<(String, Option<Variant>, ModelConfig)> = Vec::new();
    if cfg.include_baseline {
        let mut m = cfg.model;
        m.use_objects = false;
        runs.push(("no-object".into(), None, m));
    }
    for &v in &cfg.variants {
        let mut m = cfg.model;
        m.variant = v;
        m.use_objects = true;
        runs.push((format!("{}", v.name()), Some(v), m));
    }
    let mut rows = Vec::new();
    let mut chance = 0.0;
    for (label, variant, m) in runs {
        let mut per_seed = Vec::new();
        for &seed in &cfg.seeds {
            let model = train_run(m, vocab, &cfg.stages, stage_data, seed)?;
            let report = evaluate(&model, eval)?;
            chance = chance_of(&report);
            log::info!("{label} seed {seed}: accuracy {:.3}", report.accuracy());
            per_seed.push((seed, report.accuracy()));
        }
        rows.push(AblationRow {
            label,
            variant,
            per_seed,
        });
    }
    Ok(AblationTable { rows, chance })
}

/// Sample-weighted chance over the tasks in a report.
pub fn chance_of(report: &EvalReport) -> f64 {
    let total: usize = report.tasks.values().map(|t| t.total).sum();
    if total == 0 {
        return 0.0;
    }
    report
        .tasks
        .values()
        .map(|t| t.chance * t.total as f64)
        .sum::<f64>()
        / total as f64
}
