//! Tag-driven video splitting.
//!
//! Frames are tagged, tags are reduced to concrete nouns plus their
//! synonyms, frames with too few tags are discarded, and a frame becomes a
//! new key frame when its tags overlap too little with the last key frame.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum KeyframeError {
    #[error("no frame has more than {0} tags")]
    NoKeyFrames(usize),
    #[error("empty tag stream")]
    EmptyStream,
    #[error("lexicon line {line}: {reason}")]
    Lexicon { line: usize, reason: &'static str },
    #[error("invalid key-frame config: {0}")]
    Config(&'static str),
}

/// Concrete nouns and their synonym groups.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    nouns: BTreeSet<String>,
    synonyms: BTreeMap<String, BTreeSet<String>>,
}

impl Lexicon {
    /// Parses lines of the form `noun: syn1 syn2 ...`. Every word on a line
    /// is a concrete noun and all of them are synonyms of one another.
    /// Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self, KeyframeError> {
        let mut lex = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (head, rest) = line.split_once(':').ok_or(KeyframeError::Lexicon {
                line: i + 1,
                reason: "missing ':'",
            })?;
            let head = head.trim();
            if head.is_empty() || head.contains(char::is_whitespace) {
                return Err(KeyframeError::Lexicon {
                    line: i + 1,
                    reason: "head must be a single word",
                });
            }
            let mut group: Vec<&str> = Vec::new();
            group.push(head);
            group.extend(rest.split_whitespace());
            lex.add_group(&group);
        }
        Ok(lex)
    }

    pub fn add_group(&mut self, words: &[&str]) {
        let words: Vec<String> = words.iter().map(|w| w.to_lowercase()).collect();
        for w in &words {
            self.nouns.insert(w.clone());
            let entry = self.synonyms.entry(w.clone()).or_default();
            for other in &words {
                if other != w {
                    entry.insert(other.clone());
                }
            }
        }
    }

    /// The lexicon shipped in `data/lexicon.txt`.
    pub fn builtin() -> Self {
        Self::parse(include_str!("../data/lexicon.txt")).expect("bundled lexicon parses")
    }

    pub fn is_noun(&self, word: &str) -> bool {
        self.nouns.contains(word)
    }

    pub fn synonyms(&self, word: &str) -> impl Iterator<Item = &String> {
        self.synonyms.get(word).into_iter().flatten()
    }

    pub fn nouns(&self) -> impl Iterator<Item = &String> {
        self.nouns.iter()
    }
}

/// `(raw ∩ nouns) ∪ synonyms(raw ∩ nouns)`, lowercased and deduplicated.
pub fn filter_tags<S: AsRef<str>>(raw: &[S], lexicon: &Lexicon) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for tag in raw {
        let t = tag.as_ref().trim().to_lowercase();
        if lexicon.is_noun(&t) {
            for s in lexicon.synonyms(&t) {
                out.insert(s.clone());
            }
            out.insert(t);
        }
    }
    out
}

/// Tags for the frames sampled for tagging.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagStream {
    pub frames: Vec<usize>,
    pub raw: Vec<Vec<String>>,
    pub filtered: Vec<BTreeSet<String>>,
}

impl TagStream {
    pub fn new(frames: Vec<usize>, raw: Vec<Vec<String>>, lexicon: &Lexicon) -> Self {
        let filtered = raw.iter().map(|r| filter_tags(r, lexicon)).collect();
        Self { frames, raw, filtered }
    }

    /// A stream whose tags are already filtered.
    pub fn from_filtered(frames: Vec<usize>, filtered: Vec<BTreeSet<String>>) -> Self {
        let raw = filtered.iter().map(|s| s.iter().cloned().collect()).collect();
        Self { frames, raw, filtered }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeyframeConfig {
    /// A frame is kept only when it has strictly more tags than this.
    pub min_tags: usize,
    /// A kept frame starts a new clip when it shares strictly fewer tags
    /// than this with the current key frame.
    pub min_overlap: usize,
    /// Number of frames sampled for tagging.
    pub tag_samples: usize,
}

impl Default for KeyframeConfig {
    fn default() -> Self {
        Self {
            min_tags: 3,
            min_overlap: 2,
            tag_samples: 16,
        }
    }
}

impl KeyframeConfig {
    pub fn validate(&self) -> Result<(), KeyframeError> {
        if self.min_overlap < 1 {
            return Err(KeyframeError::Config("min_overlap must be at least 1"));
        }
        if self.tag_samples < 1 {
            return Err(KeyframeError::Config("tag_samples must be at least 1"));
        }
        Ok(())
    }
}

/// Key frames as video frame indices, in stream order.
pub fn select_key_frames(stream: &TagStream, cfg: &KeyframeConfig) -> Result<Vec<usize>, KeyframeError> {
    cfg.validate()?;
    if stream.is_empty() {
        return Err(KeyframeError::EmptyStream);
    }
    let mut keys = Vec::new();
    let mut current: Option<&BTreeSet<String>> = None;
    for (frame, tags) in stream.frames.iter().zip(&stream.filtered) {
        if tags.len() <= cfg.min_tags {
            continue;
        }
        let is_key = match current {
            None => true,
            Some(key_tags) => tags.intersection(key_tags).count() < cfg.min_overlap,
        };
        if is_key {
            keys.push(*frame);
            current = Some(tags);
        }
    }
    if keys.is_empty() {
        return Err(KeyframeError::NoKeyFrames(cfg.min_tags));
    }
    Ok(keys)
}

/// Like [`select_key_frames`] but falls back to frame 0 as the only key
/// when no frame qualifies.
pub fn key_frames_or_first(stream: &TagStream, cfg: &KeyframeConfig) -> Result<Vec<usize>, KeyframeError> {
    match select_key_frames(stream, cfg) {
        Err(KeyframeError::NoKeyFrames(_)) | Err(KeyframeError::EmptyStream) => {
            log::warn!("no key frame passed the tag threshold; using frame 0");
            Ok(alloc::vec![0])
        }
        other => other,
    }
}

/// Splits sampled frames at key frames. Each clip starts with its key frame
/// (added even when it was not sampled) and holds the sampled frames up to
/// the next key. Sampled frames before the first key are not tracked.
pub fn split_clips(samples: &[usize], keys: &[usize]) -> Vec<Vec<usize>> {
    let mut keys: Vec<usize> = keys.to_vec();
    keys.sort_unstable();
    keys.dedup();
    let mut samples: Vec<usize> = samples.to_vec();
    samples.sort_unstable();
    samples.dedup();
    keys.iter()
        .enumerate()
        .map(|(c, &k)| {
            let end = keys.get(c + 1).copied().unwrap_or(usize::MAX);
            let mut clip = alloc::vec![k];
            clip.extend(samples.iter().copied().filter(|&s| s > k && s < end));
            clip
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;
    use alloc::vec::Vec;

    fn set(words: &[&str]) -> BTreeSet<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn filter_drops_abstract_nouns() {
        let mut lex = Lexicon::default();
        lex.add_group(&["circle"]);
        assert_eq!(filter_tags(&["circle", "happiness"], &lex), set(&["circle"]));
    }

    #[test]
    fn filter_adds_synonyms() {
        let lex = Lexicon::parse("cup: mug\n").unwrap();
        assert_eq!(filter_tags(&["cup"], &lex), set(&["cup", "mug"]));
        assert!(filter_tags::<&str>(&[], &lex).is_empty());
    }

    #[test]
    fn lexicon_rejects_malformed_line() {
        assert!(matches!(
            Lexicon::parse("circle disc\n"),
            Err(KeyframeError::Lexicon { line: 1, .. })
        ));
    }

    #[test]
    fn worked_example() {
        let stream = TagStream::from_filtered(
            vec![1, 2, 3, 4],
            vec![
                set(&["a", "b", "c", "d"]),
                set(&["a", "b", "c"]),
                set(&["e", "f", "g", "h"]),
                set(&["e", "f", "g", "h", "i"]),
            ],
        );
        let keys = select_key_frames(&stream, &KeyframeConfig::default()).unwrap();
        assert_eq!(keys, vec![1, 3]);
    }

    #[test]
    fn identical_frames_give_one_key() {
        let s = set(&["a", "b", "c", "d"]);
        let stream = TagStream::from_filtered((0..6).collect(), vec![s; 6]);
        assert_eq!(select_key_frames(&stream, &KeyframeConfig::default()).unwrap(), vec![0]);
    }

    #[test]
    fn no_qualifying_frame() {
        let stream = TagStream::from_filtered(vec![0, 5], vec![set(&["a"]), set(&["b", "c"])]);
        let cfg = KeyframeConfig::default();
        assert_eq!(select_key_frames(&stream, &cfg), Err(KeyframeError::NoKeyFrames(3)));
        assert_eq!(key_frames_or_first(&stream, &cfg).unwrap(), vec![0]);
    }

    #[test]
    fn clip_examples() {
        let all: Vec<usize> = (0..8).collect();
        assert_eq!(split_clips(&all, &[0]), vec![all.clone()]);
        assert_eq!(split_clips(&[0, 2, 4, 6], &[0, 4]), vec![vec![0, 2], vec![4, 6]]);
        // Unsampled key frame is still the clip head.
        assert_eq!(split_clips(&[0, 2, 4, 6], &[0, 3]), vec![vec![0, 2], vec![3, 4, 6]]);
    }
}
