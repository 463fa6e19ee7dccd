use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::data::Sample;
use super::train::ModuleSet;
use super::HarnessError;
use crate::decoder::{attention_report, assemble_prompt, tokenize, Decoder, DecoderConfig, PromptMode, TokenSequence, Vocab};
use crate::numcore::{Module, Param};
use crate::objproj::{ObjectProjector, ProjCache, ProjectorConfig, Variant};
use crate::rng::SeededRng;
use crate::scenesynth::OBJECT_PLACEHOLDER;
use crate::vidproj::VideoProjector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    /// Width of pooled patch features.
    pub feature_dim: usize,
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub variant: Variant,
    pub pool_first: bool,
    /// False gives the context-only baseline: no object slots and no `<o>`.
    pub use_objects: bool,
    pub max_answer: usize,
    pub tied_head: bool,
    /// Referring prompts also carry the full object list.
    pub list_referring: bool,
}

impl ModelConfig {
    pub fn new(feature_dim: usize) -> Self {
        Self {
            feature_dim,
            d: 64,
            layers: 2,
            heads: 4,
            d_ff: 256,
            max_len: 256,
            variant: Variant::Mlp,
            pool_first: false,
            use_objects: true,
            max_answer: 16,
            tied_head: false,
            list_referring: false,
        }
    }
}

/// Both projectors and the decoder, plus the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub vocab: Vocab,
    pub vidproj: VideoProjector,
    pub objproj: ObjectProjector,
    pub decoder: Decoder,
}

struct Encoded {
    context: crate::numcore::Tensor,
    ctx_cache: crate::numcore::MlpCache,
    objects: Vec<Vec<f64>>,
    obj_caches: Vec<Option<ProjCache>>,
}

impl Model {
    pub fn new(cfg: ModelConfig, vocab: Vocab, seed: u64) -> Result<Self, HarnessError> {
        let mut rng = SeededRng::derived(seed, 0x30de1);
        let vidproj = VideoProjector::new(cfg.feature_dim, cfg.d, &mut rng);
        let mut pcfg = ProjectorConfig::new(cfg.variant, cfg.feature_dim, cfg.d);
        pcfg.pool_first = cfg.pool_first;
        let objproj = ObjectProjector::new(pcfg, &mut rng)?;
        let mut dcfg = DecoderConfig::new(vocab.len());
        dcfg.d = cfg.d;
        dcfg.layers = cfg.layers;
        dcfg.heads = cfg.heads;
        dcfg.d_ff = cfg.d_ff;
        dcfg.max_len = cfg.max_len;
        dcfg.tied_head = cfg.tied_head;
        let decoder = Decoder::new(dcfg, &mut rng)?;
        Ok(Self {
            cfg,
            vocab,
            vidproj,
            objproj,
            decoder,
        })
    }

    /// Vocabulary covering every instruction and answer in `samples`.
    pub fn vocab_for<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> Vocab {
        Vocab::build(
            samples
                .into_iter()
                .flat_map(|s| [s.instruction.as_str(), s.answer.as_str()]),
        )
    }

    /// Prompt for a sample, without the answer.
    pub fn prompt(&self, s: &Sample) -> Result<TokenSequence, HarnessError> {
        let n_ctx = s.scene.context.rows();
        if !self.cfg.use_objects {
            let words: Vec<String> = tokenize(&s.instruction)
                .into_iter()
                .filter(|w| w != OBJECT_PLACEHOLDER)
                .collect();
            return Ok(assemble_prompt(&self.vocab, n_ctx, &[], &words.join(" "), PromptMode::General)?);
        }
        let ids = s.scene.object_ids();
        let mode = match s.target {
            Some(t) if self.cfg.list_referring => PromptMode::ReferringListed(t),
            Some(t) => PromptMode::Referring(t),
            None => PromptMode::General,
        };
        Ok(assemble_prompt(&self.vocab, n_ctx, &ids, &s.instruction, mode)?)
    }

    fn encode(&self, s: &Sample, seq: &TokenSequence) -> Result<Encoded, HarnessError> {
        let (context, ctx_cache) = self.vidproj.forward(&s.scene.context)?;
        let n = s.scene.objects.len();
        let mut objects = vec![vec![0.0; self.cfg.d]; n];
        let mut obj_caches: Vec<Option<ProjCache>> = (0..n).map(|_| None).collect();
        for p in seq.object_positions() {
            if let crate::decoder::Slot::Object(i) = seq.slots[p] {
                if obj_caches[i].is_none() {
                    let (v, c) = self.objproj.forward(&s.scene.objects[i].pooled)?;
                    objects[i] = v;
                    obj_caches[i] = Some(c);
                }
            }
        }
        Ok(Encoded {
            context,
            ctx_cache,
            objects,
            obj_caches,
        })
    }

    fn full_sequence(&self, s: &Sample) -> Result<TokenSequence, HarnessError> {
        let answer = self.vocab.encode(&s.answer)?;
        Ok(self.prompt(s)?.with_answer(&answer))
    }

    /// Answer loss for one sample.
    pub fn loss(&self, s: &Sample) -> Result<f64, HarnessError> {
        let seq = self.full_sequence(s)?;
        let enc = self.encode(s, &seq)?;
        let (logits, _) = self.decoder.forward(&seq, &enc.context, &enc.objects)?;
        Ok(self.decoder.loss(&seq, &logits)?.0)
    }

    /// Answer loss for one sample, accumulating `scale` times its gradient
    /// into the parameters of the modules in `set`.
    pub fn loss_and_backward(&mut self, s: &Sample, set: ModuleSet, scale: f64) -> Result<f64, HarnessError> {
        let seq = self.full_sequence(s)?;
        let enc = self.encode(s, &seq)?;
        let (logits, cache) = self.decoder.forward(&seq, &enc.context, &enc.objects)?;
        let (loss, grad) = self.decoder.loss(&seq, &logits)?;
        if set.is_empty() {
            return Ok(loss);
        }
        let grad = grad.scale(scale);
        let n_ctx = enc.context.rows();
        let inputs = self.decoder.backward(&seq, &grad, &cache, n_ctx, enc.objects.len());
        if set.vidproj {
            self.vidproj.backward(&inputs.context, &enc.ctx_cache);
        }
        if set.objproj {
            for (g, c) in inputs.objects.iter().zip(&enc.obj_caches) {
                if let Some(c) = c {
                    self.objproj.backward(g, c);
                }
            }
        }
        Ok(loss)
    }

    /// Greedy answer text.
    pub fn answer(&self, s: &Sample) -> Result<String, HarnessError> {
        Ok(self.vocab.decode(&self.answer_ids(s)?))
    }

    fn answer_ids(&self, s: &Sample) -> Result<Vec<usize>, HarnessError> {
        let prompt = self.prompt(s)?;
        let enc = self.encode(s, &prompt)?;
        Ok(self
            .decoder
            .generate(&prompt, &enc.context, &enc.objects, self.cfg.max_answer)?)
    }

    /// Generated answer and the last-layer attention over object slots while
    /// producing it.
    pub fn attention(&self, s: &Sample) -> Result<(String, Vec<(usize, f64)>), HarnessError> {
        let prompt = self.prompt(s)?;
        let enc = self.encode(s, &prompt)?;
        let ids = self
            .decoder
            .generate(&prompt, &enc.context, &enc.objects, self.cfg.max_answer)?;
        let seq = prompt.with_answer(&ids);
        let (_, cache) = self.decoder.forward(&seq, &enc.context, &enc.objects)?;
        Ok((self.vocab.decode(&ids), attention_report(&seq, &cache)?))
    }

    /// Parameters of the selected modules, in a fixed order.
    pub fn params_mut(&mut self, set: ModuleSet) -> Vec<&mut Param> {
        let mut v = Vec::new();
        if set.vidproj {
            v.extend(self.vidproj.params_mut());
        }
        if set.objproj {
            v.extend(self.objproj.params_mut());
        }
        if set.decoder {
            v.extend(self.decoder.params_mut());
        }
        v
    }

    pub fn zero_grad(&mut self) {
        self.vidproj.zero_grad();
        self.objproj.zero_grad();
        self.decoder.zero_grad();
    }
}
