//! Detect, segment and track objects across a video.
//!
//! Each stage sits behind a trait so that real model outputs can replace the
//! ground-truth oracles used for synthetic scenes. Tracking runs forward from
//! every key frame over its clip, and tracks from neighbouring clips are
//! merged by mask overlap at the clip boundary.

use alloc::string::String;
use alloc::vec::Vec;

use crate::keyframe::{key_frames_or_first, split_clips, KeyframeConfig, KeyframeError, TagStream};
use crate::video::{uniform_indices, Frame, Mask, PixelBox};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PipelineError {
    #[error("video has no frames")]
    EmptyVideo,
    #[error("frame {0} has a different resolution")]
    Resolution(usize),
    #[error(transparent)]
    Keyframe(#[from] KeyframeError),
    #[error("invalid pipeline config: {0}")]
    Config(&'static str),
    #[error("invalid mask set: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxProposal {
    pub frame: usize,
    pub bbox: PixelBox,
    pub score: f64,
}

/// One object's masks on the frames where it was found.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectTrack {
    pub id: usize,
    /// `(frame index, mask)` with strictly increasing frame indices.
    pub masks: Vec<(usize, Mask)>,
}

impl ObjectTrack {
    pub fn first_frame(&self) -> usize {
        self.masks.first().map_or(0, |m| m.0)
    }

    pub fn last(&self) -> Option<&(usize, Mask)> {
        self.masks.last()
    }

    pub fn total_area(&self) -> usize {
        self.masks.iter().map(|(_, m)| m.area()).sum()
    }

    pub fn mask_at(&self, frame: usize) -> Option<&Mask> {
        self.masks.iter().find(|(f, _)| *f == frame).map(|(_, m)| m)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSet {
    pub video_id: String,
    pub t_o: usize,
    pub tracks: Vec<ObjectTrack>,
}

impl MaskSet {
    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    /// Checks ids, frame order, mask bounds and nonemptiness.
    pub fn validate(&self, height: usize, width: usize) -> Result<(), PipelineError> {
        let mut ids: Vec<usize> = self.tracks.iter().map(|t| t.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(PipelineError::Invalid("duplicate object id".into()));
        }
        for t in &self.tracks {
            if t.masks.windows(2).any(|w| w[0].0 >= w[1].0) {
                return Err(PipelineError::Invalid(alloc::format!("track {} frames not increasing", t.id)));
            }
            if t.masks.iter().all(|(_, m)| m.is_empty()) {
                return Err(PipelineError::Invalid(alloc::format!("track {} has no pixels", t.id)));
            }
            if t.masks.iter().any(|(_, m)| m.height != height || m.width != width) {
                return Err(PipelineError::Invalid(alloc::format!("track {} mask size", t.id)));
            }
        }
        Ok(())
    }
}

pub trait Detector {
    fn detect(&self, index: usize, frame: &Frame) -> Vec<BoxProposal>;
}

pub trait Segmenter {
    /// One mask per box, in box order.
    fn segment(&self, index: usize, frame: &Frame, boxes: &[BoxProposal]) -> Vec<Mask>;
}

/// Follows seed masks through the later frames of one clip.
pub trait Tracker {
    /// `candidates[i]` are the masks segmented on `clip[i + 1]`. Returns one
    /// track per seed, each starting with `(clip[0], seed)`.
    fn track(&self, clip: &[usize], seeds: &[Mask], candidates: &[Vec<Mask>]) -> Vec<Vec<(usize, Mask)>>;
}

/// Tight boxes of the ground-truth masks, score 1.
#[derive(Debug, Clone, Copy)]
pub struct OracleDetector<'a> {
    /// `masks[object][frame]`.
    pub masks: &'a [Vec<Mask>],
}

impl Detector for OracleDetector<'_> {
    fn detect(&self, index: usize, _frame: &Frame) -> Vec<BoxProposal> {
        self.masks
            .iter()
            .filter_map(|per_frame| per_frame.get(index).and_then(Mask::bbox))
            .map(|bbox| BoxProposal {
                frame: index,
                bbox,
                score: 1.0,
            })
            .collect()
    }
}

/// Boxes read from elsewhere, keyed by frame.
#[derive(Debug, Clone, Default)]
pub struct ListDetector {
    pub boxes: alloc::collections::BTreeMap<usize, Vec<BoxProposal>>,
}

impl Detector for ListDetector {
    fn detect(&self, index: usize, _frame: &Frame) -> Vec<BoxProposal> {
        self.boxes.get(&index).cloned().unwrap_or_default()
    }
}

/// Returns the ground-truth mask whose box overlaps the proposal most.
#[derive(Debug, Clone, Copy)]
pub struct OracleSegmenter<'a> {
    pub masks: &'a [Vec<Mask>],
}

impl Segmenter for OracleSegmenter<'_> {
    fn segment(&self, index: usize, frame: &Frame, boxes: &[BoxProposal]) -> Vec<Mask> {
        boxes
            .iter()
            .map(|b| {
                let mut best: Option<(f64, &Mask)> = None;
                for per_frame in self.masks {
                    let Some(m) = per_frame.get(index) else { continue };
                    let Some(mb) = m.bbox() else { continue };
                    let iou = mb.iou(&b.bbox);
                    if iou > 0.0 && best.map_or(true, |(v, _)| iou > v) {
                        best = Some((iou, m));
                    }
                }
                match best {
                    Some((_, m)) => m.clone(),
                    None => {
                        log::warn!("box {:?} on frame {} matches no object", b.bbox, index);
                        Mask::empty(frame.height, frame.width)
                    }
                }
            })
            .collect()
    }
}

/// Greedy matching by descending mask IoU against each track's last mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreedyIouTracker {
    pub tau: f64,
}

impl Default for GreedyIouTracker {
    fn default() -> Self {
        Self { tau: 0.3 }
    }
}

/// Pairs `(a, b)` with `iou(a, b) >= tau`, taken greedily by descending IoU.
/// Ties go to the lower `b` index, then the lower `a` index.
fn greedy_pairs(a: &[&Mask], b: &[&Mask], tau: f64) -> Vec<(usize, usize)> {
    let mut scored = Vec::new();
    for (i, ma) in a.iter().enumerate() {
        for (j, mb) in b.iter().enumerate() {
            let iou = ma.iou(mb);
            if iou >= tau {
                scored.push((iou, j, i));
            }
        }
    }
    scored.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut used_a = alloc::vec![false; a.len()];
    let mut used_b = alloc::vec![false; b.len()];
    let mut out = Vec::new();
    for (_, j, i) in scored {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            out.push((i, j));
        }
    }
    out
}

impl Tracker for GreedyIouTracker {
    fn track(&self, clip: &[usize], seeds: &[Mask], candidates: &[Vec<Mask>]) -> Vec<Vec<(usize, Mask)>> {
        let mut tracks: Vec<Vec<(usize, Mask)>> = seeds.iter().map(|s| alloc::vec![(clip[0], s.clone())]).collect();
        let mut alive: Vec<bool> = alloc::vec![true; seeds.len()];
        for (step, cands) in candidates.iter().enumerate() {
            let frame = clip[step + 1];
            let live: Vec<usize> = (0..tracks.len()).filter(|&t| alive[t]).collect();
            let last: Vec<&Mask> = live.iter().map(|&t| &tracks[t].last().unwrap().1).collect();
            let cand_refs: Vec<&Mask> = cands.iter().collect();
            let pairs = greedy_pairs(&last, &cand_refs, self.tau);
            let mut matched = alloc::vec![None; live.len()];
            for (i, j) in pairs {
                matched[i] = Some(j);
            }
            for (i, &t) in live.iter().enumerate() {
                match matched[i] {
                    Some(j) => tracks[t].push((frame, cands[j].clone())),
                    None => alive[t] = false,
                }
            }
        }
        tracks
    }
}

/// Tracker for callers that must never track, such as single images.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoTracker;

impl Tracker for NoTracker {
    fn track(&self, clip: &[usize], seeds: &[Mask], _candidates: &[Vec<Mask>]) -> Vec<Vec<(usize, Mask)>> {
        seeds.iter().map(|s| alloc::vec![(clip[0], s.clone())]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub keyframe: KeyframeConfig,
    pub t_o_short: usize,
    pub t_o_long: usize,
    /// Videos longer than this many seconds use `t_o_long`.
    pub long_after_secs: f64,
    pub fps: f64,
    pub tau_track: f64,
    pub tau_merge: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            keyframe: KeyframeConfig::default(),
            t_o_short: 64,
            t_o_long: 128,
            long_after_secs: 60.0,
            fps: 8.0,
            tau_track: 0.3,
            tau_merge: 0.5,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.keyframe.validate()?;
        if self.t_o_short == 0 || self.t_o_long == 0 {
            return Err(PipelineError::Config("t_o must be positive"));
        }
        if !(self.fps > 0.0) {
            return Err(PipelineError::Config("fps must be positive"));
        }
        for tau in [self.tau_track, self.tau_merge] {
            if !(0.0..=1.0).contains(&tau) {
                return Err(PipelineError::Config("thresholds must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn t_o_for(&self, frames: usize) -> usize {
        if frames as f64 / self.fps > self.long_after_secs {
            self.t_o_long
        } else {
            self.t_o_short
        }
    }
}

/// Detects and segments one frame, dropping empty masks.
pub fn masks_on_frame(index: usize, frame: &Frame, det: &dyn Detector, seg: &dyn Segmenter) -> Vec<Mask> {
    let boxes = det.detect(index, frame);
    if boxes.is_empty() {
        return Vec::new();
    }
    seg.segment(index, frame, &boxes)
        .into_iter()
        .filter(|m| !m.is_empty())
        .collect()
}

/// Tracks one clip starting from its key frame `clip[0]`.
pub fn track_clip(
    frames: &[Frame],
    clip: &[usize],
    det: &dyn Detector,
    seg: &dyn Segmenter,
    tracker: &dyn Tracker,
) -> Vec<Vec<(usize, Mask)>> {
    let seeds = masks_on_frame(clip[0], &frames[clip[0]], det, seg);
    if seeds.is_empty() {
        return Vec::new();
    }
    let candidates: Vec<Vec<Mask>> = clip[1..]
        .iter()
        .map(|&f| masks_on_frame(f, &frames[f], det, seg))
        .collect();
    tracker.track(clip, &seeds, &candidates)
}

/// Joins per-clip tracks into global objects.
///
/// A track of clip `c + 1` continues an object when the object's latest
/// mask sits on the new key frame or on the last frame of clip `c`, and the
/// two masks reach `tau` IoU. Pairs are taken greedily by descending IoU.
/// Unmatched tracks become new objects; ids follow first appearance.
pub fn merge_objects(clips: &[Vec<usize>], clip_tracks: &[Vec<Vec<(usize, Mask)>>], tau: f64) -> Vec<ObjectTrack> {
    let mut objects: Vec<ObjectTrack> = Vec::new();
    for (c, tracks) in clip_tracks.iter().enumerate() {
        let tracks: Vec<&Vec<(usize, Mask)>> = tracks.iter().filter(|t| !t.is_empty()).collect();
        let key = clips[c][0];
        let prev_last = if c > 0 { clips[c - 1].last().copied() } else { None };
        let open: Vec<usize> = (0..objects.len())
            .filter(|&o| {
                let f = objects[o].last().unwrap().0;
                f == key || Some(f) == prev_last
            })
            .collect();
        let old: Vec<&Mask> = open.iter().map(|&o| &objects[o].last().unwrap().1).collect();
        let new: Vec<&Mask> = tracks.iter().map(|t| &t[0].1).collect();
        let pairs = greedy_pairs(&new, &old, tau);
        let mut target: Vec<Option<usize>> = alloc::vec![None; tracks.len()];
        for (i, j) in pairs {
            target[i] = Some(open[j]);
        }
        for (i, t) in tracks.iter().enumerate() {
            match target[i] {
                Some(o) => {
                    let obj = &mut objects[o];
                    for (f, m) in t.iter() {
                        if obj.last().map_or(true, |l| l.0 < *f) {
                            obj.masks.push((*f, m.clone()));
                        }
                    }
                }
                None => objects.push(ObjectTrack {
                    id: objects.len(),
                    masks: (*t).clone(),
                }),
            }
        }
    }
    objects
}

/// Key frames, sampled frames and clips chosen for a video.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClipPlan {
    pub key_frames: Vec<usize>,
    pub sampled: Vec<usize>,
    pub clips: Vec<Vec<usize>>,
}

pub fn plan_clips(num_frames: usize, tags: &TagStream, cfg: &PipelineConfig) -> Result<ClipPlan, PipelineError> {
    let key_frames: Vec<usize> = key_frames_or_first(tags, &cfg.keyframe)?
        .into_iter()
        .filter(|&k| k < num_frames)
        .collect();
    let key_frames = if key_frames.is_empty() { alloc::vec![0] } else { key_frames };
    let sampled = uniform_indices(num_frames, cfg.t_o_for(num_frames));
    let clips = split_clips(&sampled, &key_frames);
    Ok(ClipPlan {
        key_frames,
        sampled,
        clips,
    })
}

/// Runs the whole pipeline. A single frame is treated as an image and the
/// tracker is never called.
pub fn run_pipeline(
    video_id: &str,
    frames: &[Frame],
    tags: &TagStream,
    cfg: &PipelineConfig,
    det: &dyn Detector,
    seg: &dyn Segmenter,
    tracker: &dyn Tracker,
) -> Result<MaskSet, PipelineError> {
    cfg.validate()?;
    let first = frames.first().ok_or(PipelineError::EmptyVideo)?;
    if let Some(i) = frames
        .iter()
        .position(|f| f.height != first.height || f.width != first.width)
    {
        return Err(PipelineError::Resolution(i));
    }
    if frames.len() == 1 {
        let tracks = masks_on_frame(0, first, det, seg)
            .into_iter()
            .enumerate()
            .map(|(id, m)| ObjectTrack {
                id,
                masks: alloc::vec![(0, m)],
            })
            .collect();
        return Ok(MaskSet {
            video_id: video_id.into(),
            t_o: 1,
            tracks,
        });
    }
    let plan = plan_clips(frames.len(), tags, cfg)?;
    let clip_tracks: Vec<_> = plan
        .clips
        .iter()
        .map(|clip| track_clip(frames, clip, det, seg, tracker))
        .collect();
    let tracks = merge_objects(&plan.clips, &clip_tracks, cfg.tau_merge);
    Ok(MaskSet {
        video_id: video_id.into(),
        t_o: plan.sampled.len(),
        tracks,
    })
}
