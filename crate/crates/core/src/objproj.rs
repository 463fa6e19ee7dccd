//! Object tokens from mask lists.
//!
//! Pixel masks are rasterized onto the patch grid, each frame's features
//! are averaged under the mask, and a projector fuses the per-frame vectors
//! of one object into a single `d`-dimensional token.

use alloc::vec;
use alloc::vec::Vec;

use crate::featurize::FeatureMap;
use crate::maskpipe::MaskSet;
use crate::numcore::{
    AttnWeights, BlockCache, Linear, Lstm, LstmCache, Mlp, MlpCache, Module, NumError, Param, Tensor,
    TransformerBlock,
};
use crate::rng::SeededRng;
use crate::video::Mask;

/// Token cap per video.
pub const MAX_OBJECT_TOKENS: usize = 64;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProjError {
    #[error("mask covers no patch")]
    EmptyMask,
    #[error("mask grid {got:?} does not match features {want:?}")]
    Grid { got: (usize, usize), want: (usize, usize) },
    #[error("unknown projector variant {0:?}")]
    UnknownVariant(alloc::string::String),
    #[error(transparent)]
    Num(#[from] NumError),
}

/// A mask at patch resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchMask {
    pub frame: usize,
    pub h: usize,
    pub w: usize,
    pub cells: Vec<bool>,
}

impl PatchMask {
    pub fn from_cells(frame: usize, h: usize, w: usize, cells: &[(usize, usize)]) -> Self {
        let mut m = Self {
            frame,
            h,
            w,
            cells: vec![false; h * w],
        };
        for &(y, x) in cells {
            m.cells[y * w + x] = true;
        }
        m
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.cells[y * self.w + x]
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }
}

/// A cell is set when at least half its pixels are in the mask. If no
/// cell qualifies, the single best-covered cell is set (lowest index on
/// ties). An empty mask gives `None`.
pub fn rasterize_mask(mask: &Mask, frame: usize, h: usize, w: usize, p: usize) -> Option<PatchMask> {
    let mut counts = vec![0usize; h * w];
    for y in 0..(h * p).min(mask.height) {
        for x in 0..(w * p).min(mask.width) {
            if mask.get(y, x) {
                counts[(y / p) * w + x / p] += 1;
            }
        }
    }
    let best = (0..counts.len()).fold(0, |b, i| if counts[i] > counts[b] { i } else { b });
    if counts[best] == 0 {
        return None;
    }
    let mut cells: Vec<bool> = counts.iter().map(|&c| 2 * c >= p * p).collect();
    if !cells.iter().any(|&c| c) {
        cells[best] = true;
    }
    Some(PatchMask { frame, h, w, cells })
}

/// Mean feature vector over the set cells of `mask`; `features` is a flat
/// `[h x w x D]` grid.
pub fn mask_pool_slice(features: &[f64], h: usize, w: usize, mask: &PatchMask) -> Result<Vec<f64>, ProjError> {
    if (mask.h, mask.w) != (h, w) {
        return Err(ProjError::Grid {
            got: (mask.h, mask.w),
            want: (h, w),
        });
    }
    let d = features.len() / (h * w);
    let mut out = vec![0.0; d];
    let mut n = 0usize;
    for (i, &c) in mask.cells.iter().enumerate() {
        if c {
            for (o, f) in out.iter_mut().zip(&features[i * d..(i + 1) * d]) {
                *o += f;
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(ProjError::EmptyMask);
    }
    let inv = 1.0 / n as f64;
    out.iter_mut().for_each(|o| *o *= inv);
    Ok(out)
}

/// [`mask_pool_slice`] over a `[h x w x D]` tensor.
pub fn mask_pool(features: &Tensor, mask: &PatchMask) -> Result<Vec<f64>, ProjError> {
    let dims = features.dims();
    if dims.len() != 3 {
        return Err(NumError::Shape("mask_pool expects [h x w x D]").into());
    }
    mask_pool_slice(features.data(), dims[0], dims[1], mask)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Mlp,
    Attention,
    Linear,
    AvgPool,
    Lstm,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Mlp, Variant::Attention, Variant::Linear, Variant::AvgPool, Variant::Lstm];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Mlp => "mlp",
            Variant::Attention => "attention",
            Variant::Linear => "linear",
            Variant::AvgPool => "avgpool",
            Variant::Lstm => "lstm",
        }
    }

    pub fn from_name(s: &str) -> Result<Self, ProjError> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| ProjError::UnknownVariant(s.into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProjectorConfig {
    pub variant: Variant,
    pub d_in: usize,
    pub d_hidden: usize,
    pub d_out: usize,
    pub heads: usize,
    /// Mlp variant only: average over time before the per-frame MLP.
    pub pool_first: bool,
}

impl ProjectorConfig {
    pub fn new(variant: Variant, d_in: usize, d: usize) -> Self {
        Self {
            variant,
            d_in,
            d_hidden: d,
            d_out: d,
            heads: 4,
            pool_first: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum FrameStage {
    Mlp(Mlp),
    Attention { input: Linear, block: TransformerBlock },
    Linear(Linear),
    AvgPool,
    Lstm(Lstm),
}

#[derive(Debug, Clone)]
enum StageCache {
    Mlp(MlpCache),
    Attention { input: Tensor, block: BlockCache },
    Linear(Tensor),
    AvgPool,
    Lstm(LstmCache),
}

#[derive(Debug, Clone)]
pub struct ProjCache {
    k: usize,
    stage: StageCache,
    head: MlpCache,
}

impl ProjCache {
    /// Self-attention weights of the attention variant.
    pub fn attention(&self) -> Option<&AttnWeights> {
        match &self.stage {
            StageCache::Attention { block, .. } => Some(&block.attn.weights),
            _ => None,
        }
    }
}

/// Per-frame transform, temporal fusion and final MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectProjector {
    pub cfg: ProjectorConfig,
    stage: FrameStage,
    pub head: Mlp,
}

fn mean_row(x: &Tensor) -> Tensor {
    Tensor::new(vec![1, x.cols()], x.mean_rows()).expect("non-empty rows")
}

/// Gradient of a row mean, spread back over `k` rows.
fn unmean(g: &Tensor, k: usize) -> Tensor {
    let inv = 1.0 / k as f64;
    let row: Vec<f64> = g.data().iter().map(|v| v * inv).collect();
    let mut data = Vec::with_capacity(k * row.len());
    for _ in 0..k {
        data.extend_from_slice(&row);
    }
    Tensor::new(vec![k, row.len()], data).expect("non-empty rows")
}

impl ObjectProjector {
    pub fn new(cfg: ProjectorConfig, rng: &mut SeededRng) -> Result<Self, ProjError> {
        let (d_in, dh) = (cfg.d_in, cfg.d_hidden);
        let stage = match cfg.variant {
            Variant::Mlp => FrameStage::Mlp(Mlp::new(d_in, dh, dh, rng)),
            Variant::Attention => FrameStage::Attention {
                input: Linear::new(d_in, dh, rng),
                block: TransformerBlock::new(dh, cfg.heads, 2 * dh, false, rng)?,
            },
            Variant::Linear => FrameStage::Linear(Linear::new(d_in, dh, rng)),
            Variant::AvgPool => FrameStage::AvgPool,
            Variant::Lstm => FrameStage::Lstm(Lstm::new(d_in, dh, 2, rng)),
        };
        let head_in = if cfg.variant == Variant::AvgPool { d_in } else { dh };
        let head = Mlp::new(head_in, cfg.d_out, cfg.d_out, rng);
        Ok(Self { cfg, stage, head })
    }

    /// Pooled per-frame vectors `[k x D]` to one token of `d_out` values.
    pub fn forward(&self, x: &Tensor) -> Result<(Vec<f64>, ProjCache), ProjError> {
        let k = x.rows();
        if k == 0 {
            return Err(NumError::EmptySequence.into());
        }
        if x.cols() != self.cfg.d_in {
            return Err(NumError::Dimension {
                left: x.cols(),
                right: self.cfg.d_in,
            }
            .into());
        }
        if !x.is_finite() {
            return Err(NumError::NonFinite.into());
        }
        let (fused, stage) = match &self.stage {
            FrameStage::Mlp(mlp) if self.cfg.pool_first => {
                let (h, c) = mlp.forward(&mean_row(x))?;
                (h, StageCache::Mlp(c))
            }
            FrameStage::Mlp(mlp) => {
                let (h, c) = mlp.forward(x)?;
                (mean_row(&h), StageCache::Mlp(c))
            }
            FrameStage::Attention { input, block } => {
                let a = input.forward(x)?;
                let (b, c) = block.forward(&a)?;
                (
                    mean_row(&b),
                    StageCache::Attention {
                        input: x.clone(),
                        block: c,
                    },
                )
            }
            FrameStage::Linear(lin) => (mean_row(&lin.forward(x)?), StageCache::Linear(x.clone())),
            FrameStage::AvgPool => (mean_row(x), StageCache::AvgPool),
            FrameStage::Lstm(lstm) => {
                let (h, c) = lstm.forward(x)?;
                let last = Tensor::new(vec![1, h.cols()], h.row(k - 1).to_vec())?;
                (last, StageCache::Lstm(c))
            }
        };
        let (y, head) = self.head.forward(&fused)?;
        Ok((y.into_data(), ProjCache { k, stage, head }))
    }

    /// Accumulates parameter gradients; returns the gradient wrt the input.
    pub fn backward(&mut self, grad: &[f64], cache: &ProjCache) -> Tensor {
        let k = cache.k;
        let g = Tensor::new(vec![1, grad.len()], grad.to_vec()).expect("token grad");
        let g_fused = self.head.backward(&g, &cache.head);
        let pool_first = self.cfg.pool_first;
        match (&mut self.stage, &cache.stage) {
            (FrameStage::Mlp(mlp), StageCache::Mlp(c)) if pool_first => unmean(&mlp.backward(&g_fused, c), k),
            (FrameStage::Mlp(mlp), StageCache::Mlp(c)) => mlp.backward(&unmean(&g_fused, k), c),
            (FrameStage::Attention { input, block }, StageCache::Attention { input: x, block: c }) => {
                let ga = block.backward(&unmean(&g_fused, k), c);
                input.backward(x, &ga)
            }
            (FrameStage::Linear(lin), StageCache::Linear(x)) => lin.backward(x, &unmean(&g_fused, k)),
            (FrameStage::AvgPool, StageCache::AvgPool) => unmean(&g_fused, k),
            (FrameStage::Lstm(lstm), StageCache::Lstm(c)) => {
                let hd = g_fused.cols();
                let mut go = vec![0.0; k * hd];
                go[(k - 1) * hd..].copy_from_slice(g_fused.data());
                lstm.backward(&Tensor::new(vec![k, hd], go).expect("lstm grad"), c)
            }
            _ => unreachable!("cache from a different variant"),
        }
    }
}

impl Module for ObjectProjector {
    fn params(&self) -> Vec<&Param> {
        let mut v = match &self.stage {
            FrameStage::Mlp(m) => m.params(),
            FrameStage::Attention { input, block } => {
                let mut v = input.params();
                v.extend(block.params());
                v
            }
            FrameStage::Linear(l) => l.params(),
            FrameStage::AvgPool => Vec::new(),
            FrameStage::Lstm(l) => l.params(),
        };
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = match &mut self.stage {
            FrameStage::Mlp(m) => m.params_mut(),
            FrameStage::Attention { input, block } => {
                let mut v = input.params_mut();
                v.extend(block.params_mut());
                v
            }
            FrameStage::Linear(l) => l.params_mut(),
            FrameStage::AvgPool => Vec::new(),
            FrameStage::Lstm(l) => l.params_mut(),
        };
        v.extend(self.head.params_mut());
        v
    }
}

/// Per-frame pooled features of one object, ready for a projector.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledObject {
    pub id: usize,
    pub first_frame: usize,
    /// Total mask area in pixels over the whole track.
    pub area: usize,
    /// `[k x D]`, one row per feature slice the track touches.
    pub pooled: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectToken {
    pub id: usize,
    pub vector: Vec<f64>,
    pub frames: usize,
    pub area: usize,
}

/// Indices of the tracks kept under `cap`: largest total area first, lower
/// id on ties.
pub fn select_capped(areas: &[(usize, usize)], cap: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..areas.len()).collect();
    idx.sort_by(|&a, &b| areas[b].1.cmp(&areas[a].1).then(areas[a].0.cmp(&areas[b].0)));
    idx.truncate(cap);
    idx
}

/// Pools every track against the feature map, applying the token cap and
/// the token order (first appearance, then larger area, then lower id).
///
/// Track frames map to the nearest feature slice; consecutive frames that
/// land on the same slice contribute once. Objects whose masks never cover
/// a patch are dropped.
pub fn pool_objects(masks: &MaskSet, features: &FeatureMap, cap: usize) -> Result<Vec<PooledObject>, ProjError> {
    let (h, w) = features.grid();
    let d = features.dim();
    let p = features.patch;
    let mut pooled = Vec::new();
    for track in &masks.tracks {
        let mut rows: Vec<f64> = Vec::new();
        let mut last_slice = None;
        for (f, m) in &track.masks {
            let s = features.nearest_slice(*f);
            if last_slice == Some(s) {
                continue;
            }
            if let Some(pm) = rasterize_mask(m, *f, h, w, p) {
                rows.extend(mask_pool_slice(features.slice(s), h, w, &pm)?);
                last_slice = Some(s);
            }
        }
        if rows.is_empty() {
            log::warn!("object {} covers no patch and is dropped", track.id);
            continue;
        }
        let k = rows.len() / d;
        pooled.push(PooledObject {
            id: track.id,
            first_frame: track.first_frame(),
            area: track.total_area(),
            pooled: Tensor::new(vec![k, d], rows)?,
        });
    }
    let keys: Vec<(usize, usize)> = pooled.iter().map(|o| (o.id, o.area)).collect();
    let keep = select_capped(&keys, cap);
    let mut kept: Vec<PooledObject> = keep.into_iter().map(|i| pooled[i].clone()).collect();
    kept.sort_by(|a, b| {
        a.first_frame
            .cmp(&b.first_frame)
            .then(b.area.cmp(&a.area))
            .then(a.id.cmp(&b.id))
    });
    Ok(kept)
}

/// Object tokens for a whole mask set, capped and ordered as in
/// [`pool_objects`].
pub fn encode_all(
    masks: &MaskSet,
    features: &FeatureMap,
    projector: &ObjectProjector,
    cap: usize,
) -> Result<Vec<ObjectToken>, ProjError> {
    pool_objects(masks, features, cap)?
        .into_iter()
        .map(|o| {
            let (vector, _) = projector.forward(&o.pooled)?;
            Ok(ObjectToken {
                id: o.id,
                vector,
                frames: o.pooled.rows(),
                area: o.area,
            })
        })
        .collect()
}
