//! A small causal transformer over mixed text, context and object slots.
//!
//! Text slots look up a learned embedding; context and object slots take
//! their vectors from the projectors directly. Prompts follow two fixed
//! templates: a general one that lists every object token, and a referring
//! one that puts a single object token where the question says `<o>`.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::numcore::{
    cross_entropy_with_grad, AttnWeights, BlockCache, Embedding, LayerNorm, LayerNormCache, Linear, Module,
    NumError, Param, Tensor, TransformerBlock,
};
use crate::rng::SeededRng;
use crate::scenesynth::OBJECT_PLACEHOLDER;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const SEP: usize = 3;
const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<sep>"];

/// Sentence that introduces the object tokens in general prompts.
pub const OBJECT_LIST_SENTENCE: &str = "Here is a list of objects and instances in the video:";
/// Instruction used for referring questions in the original template.
pub const REFERRING_INSTRUCTION: &str = "What is <o> doing in this video?";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DecoderError {
    #[error("word {0:?} is not in the vocabulary")]
    UnknownWord(String),
    #[error("object {0} has no token")]
    MissingObject(usize),
    #[error("referring instruction has no {OBJECT_PLACEHOLDER} placeholder")]
    NoPlaceholder,
    #[error("sequence of {len} slots exceeds the limit of {max}")]
    TooLong { len: usize, max: usize },
    #[error("slot refers to missing {kind} vector {index}")]
    BadSlot { kind: &'static str, index: usize },
    #[error("sequence has no object slots")]
    NoObjects,
    #[error(transparent)]
    Num(#[from] NumError),
}

/// Splits on whitespace and peels `: , ? . !` off words. `<o>` stays whole.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut cur = String::new();
        for ch in word.chars() {
            if matches!(ch, ':' | ',' | '?' | '.' | '!') {
                if !cur.is_empty() {
                    out.push(core::mem::take(&mut cur));
                }
                out.push(ch.to_string());
            } else {
                cur.push(ch);
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

/// Word-level vocabulary. Ids `0..4` are reserved, words follow in sorted
/// order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocab {
    /// Builds from every word of every text, plus the template sentences
    /// and the comma that separates listed objects.
    pub fn build<'a, I: IntoIterator<Item = &'a str>>(texts: I) -> Self {
        let mut set = alloc::collections::BTreeSet::new();
        for t in texts.into_iter().chain([OBJECT_LIST_SENTENCE, REFERRING_INSTRUCTION, ","]) {
            for w in tokenize(t) {
                if w != OBJECT_PLACEHOLDER {
                    set.insert(w);
                }
            }
        }
        Self::from_words(set.into_iter().collect())
    }

    /// Vocab whose non-reserved words are `words` in the given order.
    pub fn from_words(words: Vec<String>) -> Self {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        all.extend(words.into_iter().filter(|w| !RESERVED.contains(&w.as_str())));
        let index = all.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self { words: all, index }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Words after the reserved ids.
    pub fn words(&self) -> &[String] {
        &self.words[RESERVED.len()..]
    }

    pub fn id(&self, word: &str) -> Result<usize, DecoderError> {
        self.index
            .get(word)
            .copied()
            .ok_or_else(|| DecoderError::UnknownWord(word.into()))
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>, DecoderError> {
        tokenize(text).iter().map(|w| self.id(w)).collect()
    }

    /// Space-joined words, stopping at `<eos>`.
    pub fn decode(&self, ids: &[usize]) -> String {
        let mut out = String::new();
        for &id in ids {
            if id == EOS {
                break;
            }
            if let Some(w) = self.word(id) {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(w);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    Text(usize),
    Context(usize),
    Object(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptMode {
    General,
    /// Refers to the object with this id; only its slot appears.
    Referring(usize),
    /// The general object list, then the referring instruction with `<o>`
    /// filled by the object with this id.
    ReferringListed(usize),
}

/// Slots of one decoder input. `answer_start` is the first slot after the
/// separator, or `slots.len()` for a bare prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub slots: Vec<Slot>,
    /// Object id behind each object slot, `None` elsewhere.
    pub object_ids: Vec<Option<usize>>,
    pub answer_start: usize,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn object_positions(&self) -> Vec<usize> {
        (0..self.slots.len())
            .filter(|&i| matches!(self.slots[i], Slot::Object(_)))
            .collect()
    }

    /// Appends the separator, the answer words and `<eos>`.
    pub fn with_answer(&self, answer: &[usize]) -> Self {
        let mut s = self.clone();
        s.slots.push(Slot::Text(SEP));
        s.object_ids.push(None);
        s.answer_start = s.slots.len();
        for &a in answer.iter().chain([EOS].iter()) {
            s.slots.push(Slot::Text(a));
            s.object_ids.push(None);
        }
        s
    }

    /// Next-token targets and the positions that count toward the loss:
    /// the separator and every answer slot except the last predict the
    /// following answer slot.
    pub fn targets(&self) -> (Vec<usize>, Vec<bool>) {
        let n = self.slots.len();
        let mut targets = vec![PAD; n];
        let mut counted = vec![false; n];
        for i in 0..n.saturating_sub(1) {
            if let Slot::Text(t) = self.slots[i + 1] {
                targets[i] = t;
            }
            counted[i] = i + 1 >= self.answer_start && self.answer_start < n;
        }
        (targets, counted)
    }
}

fn push_text(seq: &mut TokenSequence, ids: &[usize]) {
    for &id in ids {
        seq.slots.push(Slot::Text(id));
        seq.object_ids.push(None);
    }
}

/// Builds a prompt.
///
/// General: context slots, the object-list sentence, object slots separated
/// by commas, then the instruction. With no objects the sentence is left
/// out. Referring: context slots, then the instruction with `<o>` replaced
/// by the referred object's slot. Listed referring: the general list
/// followed by the referring instruction.
pub fn assemble_prompt(
    vocab: &Vocab,
    n_context: usize,
    object_ids: &[usize],
    instruction: &str,
    mode: PromptMode,
) -> Result<TokenSequence, DecoderError> {
    let mut seq = TokenSequence {
        slots: Vec::new(),
        object_ids: Vec::new(),
        answer_start: 0,
    };
    for i in 0..n_context {
        seq.slots.push(Slot::Context(i));
        seq.object_ids.push(None);
    }
    let listed = !matches!(mode, PromptMode::Referring(_));
    if listed && !object_ids.is_empty() {
        push_text(&mut seq, &vocab.encode(OBJECT_LIST_SENTENCE)?);
        let comma = vocab.id(",")?;
        for (i, &id) in object_ids.iter().enumerate() {
            if i > 0 {
                push_text(&mut seq, &[comma]);
            }
            seq.slots.push(Slot::Object(i));
            seq.object_ids.push(Some(id));
        }
    }
    match mode {
        PromptMode::General => push_text(&mut seq, &vocab.encode(instruction)?),
        PromptMode::Referring(target) | PromptMode::ReferringListed(target) => {
            let slot = object_ids
                .iter()
                .position(|&o| o == target)
                .ok_or(DecoderError::MissingObject(target))?;
            let words = tokenize(instruction);
            if !words.iter().any(|w| w == OBJECT_PLACEHOLDER) {
                return Err(DecoderError::NoPlaceholder);
            }
            for w in words {
                if w == OBJECT_PLACEHOLDER {
                    seq.slots.push(Slot::Object(slot));
                    seq.object_ids.push(Some(target));
                } else {
                    push_text(&mut seq, &[vocab.id(&w)?]);
                }
            }
        }
    }
    seq.answer_start = seq.slots.len();
    Ok(seq)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderConfig {
    pub vocab: usize,
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    /// Reuse the embedding table as the output projection.
    pub tied_head: bool,
}

impl DecoderConfig {
    pub fn new(vocab: usize) -> Self {
        Self {
            vocab,
            d: 64,
            layers: 2,
            heads: 4,
            d_ff: 256,
            max_len: 256,
            tied_head: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    pub cfg: DecoderConfig,
    pub tok: Embedding,
    pub pos: Param,
    pub blocks: Vec<TransformerBlock>,
    pub ln_f: LayerNorm,
    /// Untied output projection; with a tied head only its bias is used.
    pub head: Linear,
}

#[derive(Debug, Clone)]
pub struct DecoderCache {
    blocks: Vec<BlockCache>,
    ln_f: LayerNormCache,
    normed: Tensor,
}

impl DecoderCache {
    /// Attention weights of each layer, first to last.
    pub fn attention(&self) -> Vec<&AttnWeights> {
        self.blocks.iter().map(|b| &b.attn.weights).collect()
    }
}

/// Gradients leaving the decoder toward the projectors.
#[derive(Debug, Clone, PartialEq)]
pub struct InputGrads {
    pub context: Tensor,
    pub objects: Vec<Vec<f64>>,
}

impl Decoder {
    pub fn new(cfg: DecoderConfig, rng: &mut SeededRng) -> Result<Self, DecoderError> {
        let blocks = (0..cfg.layers)
            .map(|_| TransformerBlock::new(cfg.d, cfg.heads, cfg.d_ff, true, rng))
            .collect::<Result<_, _>>()?;
        let mut pos = Param::init_uniform(&[cfg.max_len, cfg.d], cfg.d, rng);
        pos.value.data_mut().iter_mut().for_each(|v| *v *= 0.1);
        Ok(Self {
            cfg,
            tok: Embedding::new(cfg.vocab, cfg.d, rng),
            pos,
            blocks,
            ln_f: LayerNorm::new(cfg.d),
            head: if cfg.tied_head {
                Linear {
                    w: Param::zeros(&[1, 1]),
                    b: Param::zeros(&[cfg.vocab]),
                }
            } else {
                Linear::new(cfg.d, cfg.vocab, rng)
            },
        })
    }

    /// Input rows for `seq`: embeddings or injected vectors, plus positions.
    pub fn embed(&self, seq: &TokenSequence, context: &Tensor, objects: &[Vec<f64>]) -> Result<Tensor, DecoderError> {
        let (n, d) = (seq.len(), self.cfg.d);
        if n > self.cfg.max_len {
            return Err(DecoderError::TooLong {
                len: n,
                max: self.cfg.max_len,
            });
        }
        let mut x = Vec::with_capacity(n * d);
        for (i, slot) in seq.slots.iter().enumerate() {
            let src: &[f64] = match *slot {
                Slot::Text(id) => self.tok.lookup(id)?,
                Slot::Context(c) => {
                    if c >= context.rows() || context.cols() != d {
                        return Err(DecoderError::BadSlot {
                            kind: "context",
                            index: c,
                        });
                    }
                    context.row(c)
                }
                Slot::Object(o) => match objects.get(o) {
                    Some(v) if v.len() == d => v,
                    _ => {
                        return Err(DecoderError::BadSlot {
                            kind: "object",
                            index: o,
                        })
                    }
                },
            };
            x.extend(src.iter().zip(self.pos.value.row(i)).map(|(a, b)| a + b));
        }
        Ok(Tensor::new(vec![n, d], x)?)
    }

    /// Logits `[n x vocab]` for already embedded rows.
    pub fn forward_rows(&self, x: &Tensor) -> Result<(Tensor, DecoderCache), DecoderError> {
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, c) = b.forward(&h)?;
            caches.push(c);
            h = y;
        }
        let (normed, ln_f) = self.ln_f.forward(&h);
        let logits = if self.cfg.tied_head {
            let mut l = normed.matmul(&self.tok.table.value.transpose()?)?;
            for row in l.data_mut().chunks_mut(self.cfg.vocab) {
                for (v, b) in row.iter_mut().zip(self.head.b.value.data()) {
                    *v += b;
                }
            }
            l
        } else {
            self.head.forward(&normed)?
        };
        Ok((
            logits,
            DecoderCache {
                blocks: caches,
                ln_f,
                normed,
            },
        ))
    }

    pub fn forward(
        &self,
        seq: &TokenSequence,
        context: &Tensor,
        objects: &[Vec<f64>],
    ) -> Result<(Tensor, DecoderCache), DecoderError> {
        self.forward_rows(&self.embed(seq, context, objects)?)
    }

    /// Backpropagates logit gradients; returns the gradient of the
    /// embedded input rows.
    pub fn backward_rows(&mut self, grad_logits: &Tensor, cache: &DecoderCache) -> Tensor {
        let g_normed = if self.cfg.tied_head {
            let (n, v, d) = (grad_logits.rows(), self.cfg.vocab, self.cfg.d);
            let table = self.tok.table.value.data();
            let mut g = vec![0.0; n * d];
            for r in 0..n {
                let gl = grad_logits.row(r);
                let hr = cache.normed.row(r);
                for t in 0..v {
                    let gv = gl[t];
                    if gv == 0.0 {
                        continue;
                    }
                    self.head.b.grad[t] += gv;
                    let e = &table[t * d..(t + 1) * d];
                    let ge = &mut self.tok.table.grad[t * d..(t + 1) * d];
                    for k in 0..d {
                        g[r * d + k] += gv * e[k];
                        ge[k] += gv * hr[k];
                    }
                }
            }
            Tensor::new(vec![n, d], g).expect("normed grad")
        } else {
            self.head.backward(&cache.normed, grad_logits)
        };
        let mut g = self.ln_f.backward(&g_normed, &cache.ln_f);
        for (b, c) in self.blocks.iter_mut().zip(&cache.blocks).rev() {
            g = b.backward(&g, c);
        }
        g
    }

    /// Backpropagates into the embeddings and returns the gradients of the
    /// injected context and object vectors.
    pub fn backward(
        &mut self,
        seq: &TokenSequence,
        grad_logits: &Tensor,
        cache: &DecoderCache,
        n_context: usize,
        n_objects: usize,
    ) -> InputGrads {
        let d = self.cfg.d;
        let gx = self.backward_rows(grad_logits, cache);
        let mut context = Tensor::zeros(&[n_context.max(1), d]);
        let mut objects = vec![vec![0.0; d]; n_objects];
        for (i, slot) in seq.slots.iter().enumerate() {
            let g = gx.row(i);
            for (a, b) in self.pos.grad[i * d..(i + 1) * d].iter_mut().zip(g) {
                *a += b;
            }
            match *slot {
                Slot::Text(id) => self.tok.accumulate(id, g),
                Slot::Context(c) => {
                    for (a, b) in context.row_mut(c).iter_mut().zip(g) {
                        *a += b;
                    }
                }
                Slot::Object(o) => {
                    for (a, b) in objects[o].iter_mut().zip(g) {
                        *a += b;
                    }
                }
            }
        }
        InputGrads { context, objects }
    }

    /// Answer-region loss and its logit gradient.
    pub fn loss(&self, seq: &TokenSequence, logits: &Tensor) -> Result<(f64, Tensor), DecoderError> {
        let (targets, counted) = seq.targets();
        Ok(cross_entropy_with_grad(logits, &targets, &counted)?)
    }

    /// Greedy decoding after `prompt` plus the separator, without a cache.
    /// Returns the answer ids, excluding `<eos>`.
    pub fn generate(
        &self,
        prompt: &TokenSequence,
        context: &Tensor,
        objects: &[Vec<f64>],
        max_new: usize,
    ) -> Result<Vec<usize>, DecoderError> {
        let mut seq = prompt.with_answer(&[]);
        // Drop the `<eos>` that `with_answer` appends.
        seq.slots.pop();
        seq.object_ids.pop();
        let mut out = Vec::new();
        for _ in 0..max_new {
            if seq.len() >= self.cfg.max_len {
                break;
            }
            let (logits, _) = self.forward(&seq, context, objects)?;
            let next = argmax(logits.row(seq.len() - 1));
            if next == EOS {
                break;
            }
            out.push(next);
            seq.slots.push(Slot::Text(next));
            seq.object_ids.push(None);
        }
        Ok(out)
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl Module for Decoder {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.tok.params();
        v.push(&self.pos);
        for b in &self.blocks {
            v.extend(b.params());
        }
        v.extend(self.ln_f.params());
        if self.cfg.tied_head {
            v.push(&self.head.b);
        } else {
            v.extend(self.head.params());
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.tok.params_mut();
        v.push(&mut self.pos);
        for b in &mut self.blocks {
            v.extend(b.params_mut());
        }
        v.extend(self.ln_f.params_mut());
        if self.cfg.tied_head {
            v.push(&mut self.head.b);
        } else {
            v.extend(self.head.params_mut());
        }
        v
    }
}

/// Query positions whose attention is reported: the separator and the
/// answer slots before `<eos>`.
pub fn answer_queries(seq: &TokenSequence) -> Vec<usize> {
    let n = seq.len();
    if seq.answer_start == 0 || seq.answer_start > n {
        return Vec::new();
    }
    let mut end = n;
    if end > seq.answer_start && seq.slots[end - 1] == Slot::Text(EOS) {
        end -= 1;
    }
    (seq.answer_start - 1..end).collect()
}

/// Last-layer attention onto each object slot, averaged over heads and
/// answer queries, renormalized to sum to one. Returns `(object id,
/// weight)` in slot order.
pub fn attention_report(seq: &TokenSequence, cache: &DecoderCache) -> Result<Vec<(usize, f64)>, DecoderError> {
    // An id repeated later (a referring slot echoing the list) counts at
    // its first slot only.
    let mut seen = BTreeMap::new();
    let objects: Vec<usize> = seq
        .object_positions()
        .into_iter()
        .filter(|&p| seen.insert(seq.object_ids[p], ()).is_none())
        .collect();
    if objects.is_empty() {
        return Err(DecoderError::NoObjects);
    }
    let queries = answer_queries(seq);
    let w = *cache.attention().last().ok_or(DecoderError::NoObjects)?;
    let mut mass = vec![0.0; objects.len()];
    for h in 0..w.heads {
        for &q in &queries {
            for (m, &k) in mass.iter_mut().zip(&objects) {
                *m += w.get(h, q, k);
            }
        }
    }
    let total: f64 = mass.iter().sum();
    let n = objects.len() as f64;
    Ok(objects
        .iter()
        .zip(&mass)
        .map(|(&p, &m)| {
            let id = seq.object_ids[p].expect("object slot has an id");
            (id, if total > 0.0 { m / total } else { 1.0 / n })
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocab {
        Vocab::build(["what color is <o>? red blue", "where is the red object?"])
    }

    #[test]
    fn tokenizer_splits_punctuation() {
        assert_eq!(tokenize("what color is <o>?"), vec!["what", "color", "is", "<o>", "?"]);
        assert_eq!(tokenize("video: a,b"), vec!["video", ":", "a", ",", "b"]);
    }

    #[test]
    fn vocab_is_sorted_after_reserved() {
        let v = vocab();
        assert_eq!(v.word(SEP), Some("<sep>"));
        let w = v.words();
        assert!(w.windows(2).all(|p| p[0] < p[1]));
        assert_eq!(v.decode(&v.encode("red blue").unwrap()), "red blue");
        assert!(matches!(v.encode("green"), Err(DecoderError::UnknownWord(_))));
    }

    #[test]
    fn zero_objects_omit_the_list() {
        let v = vocab();
        let s = assemble_prompt(&v, 3, &[], "where is the red object?", PromptMode::General).unwrap();
        assert_eq!(s.len(), 3 + 6);
        assert!(s.object_positions().is_empty());
    }

    #[test]
    fn referring_needs_the_object() {
        let v = vocab();
        let r = assemble_prompt(&v, 1, &[4], "what color is <o>?", PromptMode::Referring(7));
        assert_eq!(r, Err(DecoderError::MissingObject(7)));
        let s = assemble_prompt(&v, 1, &[4, 7], "what color is <o>?", PromptMode::Referring(7)).unwrap();
        assert_eq!(s.slots[4], Slot::Object(1));
        assert_eq!(s.object_ids[4], Some(7));
    }

    #[test]
    fn targets_cover_answer_only() {
        let v = vocab();
        let p = assemble_prompt(&v, 2, &[], "what color is <o>?".replace("<o>", "red").as_str(), PromptMode::General)
            .unwrap();
        let s = p.with_answer(&[v.id("blue").unwrap()]);
        let (t, c) = s.targets();
        let counted: Vec<usize> = (0..s.len()).filter(|&i| c[i]).collect();
        assert_eq!(counted, vec![p.len(), p.len() + 1]);
        assert_eq!(t[p.len()], v.id("blue").unwrap());
        assert_eq!(t[p.len() + 1], EOS);
    }

    #[test]
    fn eos_biased_head_gives_empty_answer() {
        let v = vocab();
        let mut rng = SeededRng::new(1);
        let mut cfg = DecoderConfig::new(v.len());
        cfg.d = 8;
        cfg.d_ff = 16;
        cfg.heads = 2;
        let mut dec = Decoder::new(cfg, &mut rng).unwrap();
        dec.head.b.value.data_mut()[EOS] = 1e6;
        let p = assemble_prompt(&v, 0, &[], "where is the red object?", PromptMode::General).unwrap();
        let ctx = Tensor::zeros(&[1, 8]);
        assert!(dec.generate(&p, &ctx, &[], 5).unwrap().is_empty());
    }
}
