use alloc::format;
use alloc::vec::Vec;

use super::data::Sample;
use super::model::Model;
use super::HarnessError;
use crate::numcore::{Adam, CosineSchedule};
use crate::rng::SeededRng;

/// Which modules receive updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ModuleSet {
    pub vidproj: bool,
    pub objproj: bool,
    pub decoder: bool,
}

impl ModuleSet {
    pub const ALL: ModuleSet = ModuleSet {
        vidproj: true,
        objproj: true,
        decoder: true,
    };

    pub fn is_empty(self) -> bool {
        !(self.vidproj || self.objproj || self.decoder)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Context projector alignment.
    One,
    /// Object projector alignment.
    Two,
    /// Instruction tuning of everything.
    Three,
    /// Referring fine-tune of everything.
    ReferFt,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::One => "1",
            Stage::Two => "2",
            Stage::Three => "3",
            Stage::ReferFt => "refer",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [Stage::One, Stage::Two, Stage::Three, Stage::ReferFt]
            .into_iter()
            .find(|st| st.name() == s)
    }

    pub fn trainable(self) -> ModuleSet {
        match self {
            Stage::One => ModuleSet {
                vidproj: true,
                ..ModuleSet::default()
            },
            Stage::Two => ModuleSet {
                objproj: true,
                ..ModuleSet::default()
            },
            Stage::Three | Stage::ReferFt => ModuleSet::ALL,
        }
    }

    /// Peak learning rate of the reference recipe, for large pretrained
    /// decoders. Small models trained from scratch need larger values.
    pub fn reference_lr(self) -> f64 {
        match self {
            Stage::One => 1e-3,
            Stage::Two => 1e-4,
            Stage::Three | Stage::ReferFt => 5e-6,
        }
    }

    pub fn default_epochs(self) -> usize {
        match self {
            Stage::ReferFt => 3,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub stage: Stage,
    /// Peak learning rate actually used.
    pub lr: f64,
    pub warmup_ratio: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub trainable: ModuleSet,
}

impl TrainConfig {
    pub fn new(stage: Stage, lr: f64, seed: u64) -> Self {
        Self {
            stage,
            lr,
            warmup_ratio: 0.03,
            epochs: stage.default_epochs(),
            batch_size: 16,
            seed,
            trainable: stage.trainable(),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.batch_size == 0 {
            return Err(HarnessError::Config("batch_size must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(HarnessError::Config(format!("bad learning rate {}", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return Err(HarnessError::Config("warmup_ratio must be in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn steps_for(&self, samples: usize) -> usize {
        self.epochs * samples.div_ceil(self.batch_size)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    /// Batch-mean loss before each update.
    pub losses: Vec<f64>,
    pub steps: usize,
    pub effective_lr: f64,
}

impl TrainLog {
    /// Mean loss over the last `n` steps.
    pub fn tail_mean(&self, n: usize) -> f64 {
        let n = n.min(self.losses.len()).max(1);
        self.losses.iter().rev().take(n).sum::<f64>() / n as f64
    }
}

/// Minibatch Adam over `samples` with a warmup-cosine schedule. Only the
/// modules in `cfg.trainable` change.
pub fn train_stage(model: &mut Model, samples: &[Sample], cfg: &TrainConfig) -> Result<TrainLog, HarnessError> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }
    let total = cfg.steps_for(samples.len());
    let schedule = CosineSchedule::new(cfg.lr, cfg.warmup_ratio, total);
    let mut adam = Adam::default();
    let mut rng = SeededRng::derived(cfg.seed, 0x7ea1);
    let mut log = TrainLog {
        effective_lr: cfg.lr,
        ..TrainLog::default()
    };
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for batch in order.chunks(cfg.batch_size) {
            model.zero_grad();
            let scale = 1.0 / batch.len() as f64;
            let mut loss = 0.0;
            for &i in batch {
                loss += model.loss_and_backward(&samples[i], cfg.trainable, scale)? * scale;
            }
            let lr = schedule.lr(log.steps);
            if !cfg.trainable.is_empty() {
                adam.step(&mut model.params_mut(cfg.trainable), lr)?;
            }
            log.losses.push(loss);
            log.steps += 1;
        }
    }
    model.zero_grad();
    Ok(log)
}

/// Three epochs of referring fine-tuning of all modules.
pub fn refer_finetune(
    model: &mut Model,
    samples: &[Sample],
    lr: f64,
    batch_size: usize,
    seed: u64,
) -> Result<TrainLog, HarnessError> {
    let mut cfg = TrainConfig::new(Stage::ReferFt, lr, seed);
    cfg.batch_size = batch_size;
    train_stage(model, samples, &cfg)
}
