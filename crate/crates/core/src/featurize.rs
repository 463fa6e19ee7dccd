//! Fixed patch-grid features standing in for a frozen vision encoder.
//!
//! Every `p x p` patch yields `D` numbers: mean and standard deviation of
//! each RGB channel, mean absolute horizontal and vertical Sobel response,
//! the normalized patch center, and a fixed random projection of the raw
//! patch pixels. Nothing here is trainable.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::numcore::Tensor;
use crate::rng::SeededRng;
use crate::video::{Frame, Mask};

/// Count of hand-made features ahead of the random projection.
pub const FIXED_FEATURES: usize = 10;

const PROJECTION_SEED: u64 = 0x0b1ec7;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FeatureError {
    #[error("frame is {got:?}, featurizer expects {want:?}")]
    Resolution { got: (usize, usize), want: (usize, usize) },
    #[error("invalid featurizer config: {0}")]
    Config(&'static str),
    #[error("no frames to featurize")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeaturizerConfig {
    pub patch: usize,
    pub dim: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        Self {
            patch: 8,
            dim: 32,
            height: 64,
            width: 64,
        }
    }
}

impl FeaturizerConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.patch == 0 || self.height % self.patch != 0 || self.width % self.patch != 0 {
            return Err(FeatureError::Config("patch size must divide the frame size"));
        }
        if self.dim < FIXED_FEATURES {
            return Err(FeatureError::Config("feature dim below the fixed feature count"));
        }
        Ok(())
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height / self.patch, self.width / self.patch)
    }
}

/// Holds the config and the fixed projection matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Featurizer {
    cfg: FeaturizerConfig,
    /// `[(dim - FIXED_FEATURES) x (patch * patch * 3)]`, row-major.
    projection: Vec<f64>,
}

impl Featurizer {
    pub fn new(cfg: FeaturizerConfig) -> Result<Self, FeatureError> {
        cfg.validate()?;
        let n_in = cfg.patch * cfg.patch * 3;
        let n_out = cfg.dim - FIXED_FEATURES;
        // Unit-variance entries scaled so outputs stay O(1).
        let a = libm::sqrt(3.0 / n_in as f64);
        let mut rng = SeededRng::new(PROJECTION_SEED);
        let projection = rng.uniform_vec(n_in * n_out, -a, a);
        Ok(Self { cfg, projection })
    }

    pub fn config(&self) -> &FeaturizerConfig {
        &self.cfg
    }

    /// Features of one frame as `[h x w x D]`.
    pub fn patch_features(&self, frame: &Frame) -> Result<Tensor, FeatureError> {
        let c = &self.cfg;
        if frame.height != c.height || frame.width != c.width {
            return Err(FeatureError::Resolution {
                got: (frame.height, frame.width),
                want: (c.height, c.width),
            });
        }
        let (gh, gw) = c.grid();
        let p = c.patch;
        let n = (p * p) as f64;
        let mut out = Vec::with_capacity(gh * gw * c.dim);
        let mut pix = vec![0.0; p * p * 3];
        let mut gray = vec![0.0; p * p];
        for gy in 0..gh {
            for gx in 0..gw {
                for y in 0..p {
                    for x in 0..p {
                        let rgb = frame.pixel(gy * p + y, gx * p + x);
                        let i = y * p + x;
                        for ch in 0..3 {
                            pix[i * 3 + ch] = rgb[ch] as f64 / 255.0;
                        }
                        gray[i] = (pix[i * 3] + pix[i * 3 + 1] + pix[i * 3 + 2]) / 3.0;
                    }
                }
                let mut mean = [0.0; 3];
                for i in 0..p * p {
                    for ch in 0..3 {
                        mean[ch] += pix[i * 3 + ch];
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n);
                let mut var = [0.0; 3];
                for i in 0..p * p {
                    for ch in 0..3 {
                        let d = pix[i * 3 + ch] - mean[ch];
                        var[ch] += d * d;
                    }
                }
                let (eh, ev) = sobel_energy(&gray, p);
                out.extend_from_slice(&mean);
                out.extend(var.iter().map(|v| libm::sqrt(v / n)));
                out.push(eh);
                out.push(ev);
                out.push((gx as f64 + 0.5) / gw as f64);
                out.push((gy as f64 + 0.5) / gh as f64);
                for row in self.projection.chunks(pix.len()) {
                    out.push(row.iter().zip(&pix).map(|(a, b)| a * b).sum());
                }
            }
        }
        Ok(Tensor::new(vec![gh, gw, c.dim], out).expect("feature dims"))
    }

    /// Stacks the features of `frames[i]` for each `i` in `indices`.
    pub fn featurize_video(&self, video_id: &str, frames: &[Frame], indices: &[usize]) -> Result<FeatureMap, FeatureError> {
        if indices.is_empty() {
            return Err(FeatureError::Empty);
        }
        let (gh, gw) = self.cfg.grid();
        let mut data = Vec::with_capacity(indices.len() * gh * gw * self.cfg.dim);
        for &i in indices {
            data.extend_from_slice(self.patch_features(&frames[i])?.data());
        }
        Ok(FeatureMap {
            video_id: video_id.into(),
            frames: indices.to_vec(),
            patch: self.cfg.patch,
            features: Tensor::new(vec![indices.len(), gh, gw, self.cfg.dim], data).expect("feature dims"),
        })
    }
}

/// Mean absolute Sobel response along x and y inside a patch, with edge
/// pixels clamped so patches never read their neighbours.
fn sobel_energy(gray: &[f64], p: usize) -> (f64, f64) {
    let at = |y: isize, x: isize| {
        let cy = y.clamp(0, p as isize - 1) as usize;
        let cx = x.clamp(0, p as isize - 1) as usize;
        gray[cy * p + cx]
    };
    let (mut sh, mut sv) = (0.0, 0.0);
    for y in 0..p as isize {
        for x in 0..p as isize {
            let gx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
            let gy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
            sh += libm::fabs(gx);
            sv += libm::fabs(gy);
        }
    }
    let n = (p * p) as f64;
    (sh / n, sv / n)
}

/// Features for a run of frames, `[t x h x w x D]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub video_id: String,
    /// Video frame index of each slice, sorted.
    pub frames: Vec<usize>,
    pub patch: usize,
    pub features: Tensor,
}

impl FeatureMap {
    pub fn t(&self) -> usize {
        self.features.dims()[0]
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.features.dims()[1], self.features.dims()[2])
    }

    pub fn dim(&self) -> usize {
        self.features.dims()[3]
    }

    /// Slice `s` as a flat `[h * w * D]` view.
    pub fn slice(&self, s: usize) -> &[f64] {
        let n = self.features.len() / self.t();
        &self.features.data()[s * n..(s + 1) * n]
    }

    /// Slice whose frame is nearest to `frame`; the earlier one on ties.
    pub fn nearest_slice(&self, frame: usize) -> usize {
        let mut best = 0;
        for (i, &f) in self.frames.iter().enumerate() {
            if f.abs_diff(frame) < self.frames[best].abs_diff(frame) {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// Stretch to the target without cropping so masks stay aligned.
    Object,
    /// Scale the short side to the target and crop the center.
    Context,
}

/// Source pixel of each target pixel along one axis, nearest neighbour.
fn nearest_map(src: usize, dst: usize, offset: usize, scaled: usize) -> Vec<usize> {
    (0..dst)
        .map(|i| {
            let s = ((i + offset) as f64 + 0.5) * src as f64 / scaled as f64;
            (libm::floor(s) as usize).min(src - 1)
        })
        .collect()
}

/// Source row and column for each target pixel under a branch's policy.
fn resize_maps(h: usize, w: usize, th: usize, tw: usize, branch: Branch) -> (Vec<usize>, Vec<usize>) {
    match branch {
        Branch::Object => (nearest_map(h, th, 0, th), nearest_map(w, tw, 0, tw)),
        Branch::Context => {
            // Scale so the image covers the target, then crop the middle.
            let s = f64::max(th as f64 / h as f64, tw as f64 / w as f64);
            let sh = libm::round(h as f64 * s) as usize;
            let sw = libm::round(w as f64 * s) as usize;
            let (oy, ox) = ((sh - th) / 2, (sw - tw) / 2);
            (nearest_map(h, th, oy, sh), nearest_map(w, tw, ox, sw))
        }
    }
}

pub fn resize_frame(frame: &Frame, th: usize, tw: usize, branch: Branch) -> Frame {
    if frame.height == th && frame.width == tw {
        return frame.clone();
    }
    let (ys, xs) = resize_maps(frame.height, frame.width, th, tw, branch);
    let mut out = Frame::filled(th, tw, [0, 0, 0]);
    for (y, &sy) in ys.iter().enumerate() {
        for (x, &sx) in xs.iter().enumerate() {
            out.set_pixel(y, x, frame.pixel(sy, sx));
        }
    }
    out
}

pub fn resize_mask(mask: &Mask, th: usize, tw: usize, branch: Branch) -> Mask {
    if mask.height == th && mask.width == tw {
        return mask.clone();
    }
    let (ys, xs) = resize_maps(mask.height, mask.width, th, tw, branch);
    let mut out = Mask::empty(th, tw);
    for (y, &sy) in ys.iter().enumerate() {
        for (x, &sx) in xs.iter().enumerate() {
            out.set(y, x, mask.get(sy, sx));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn black_frame_has_no_color_or_edges() {
        let f = Featurizer::new(FeaturizerConfig::default()).unwrap();
        let t = f.patch_features(&Frame::filled(64, 64, [0, 0, 0])).unwrap();
        assert_eq!(t.dims(), &[8, 8, 32]);
        for cell in t.data().chunks(32) {
            assert!(cell[..8].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn center_coordinates() {
        let f = Featurizer::new(FeaturizerConfig::default()).unwrap();
        let t = f.patch_features(&Frame::filled(64, 64, [9, 9, 9])).unwrap();
        let cell = &t.data()[(2 * 8 + 5) * 32..];
        assert_eq!(cell[8], 5.5 / 8.0);
        assert_eq!(cell[9], 2.5 / 8.0);
    }

    #[test]
    fn wrong_resolution_is_rejected() {
        let f = Featurizer::new(FeaturizerConfig::default()).unwrap();
        assert!(matches!(
            f.patch_features(&Frame::filled(32, 64, [0, 0, 0])),
            Err(FeatureError::Resolution { .. })
        ));
        let bad = FeaturizerConfig {
            patch: 7,
            ..FeaturizerConfig::default()
        };
        assert!(Featurizer::new(bad).is_err());
    }

    #[test]
    fn vertical_edge_fires_horizontal_sobel() {
        let mut fr = Frame::filled(8, 8, [0, 0, 0]);
        for y in 0..8 {
            for x in 4..8 {
                fr.set_pixel(y, x, [255, 255, 255]);
            }
        }
        let cfg = FeaturizerConfig {
            patch: 8,
            dim: 12,
            height: 8,
            width: 8,
        };
        let t = Featurizer::new(cfg).unwrap().patch_features(&fr).unwrap();
        // Columns 3 and 4 each see a step of 4 across the kernel.
        assert!((t.data()[6] - 2.0 * 8.0 * 4.0 / 64.0).abs() < 1e-12);
        assert_eq!(t.data()[7], 0.0);
    }

    #[test]
    fn resize_policies() {
        let mut tall = Frame::filled(80, 64, [0, 0, 0]);
        for x in 0..64 {
            tall.set_pixel(8, x, [255, 0, 0]);
            tall.set_pixel(71, x, [0, 255, 0]);
        }
        let ctx = resize_frame(&tall, 64, 64, Branch::Context);
        assert_eq!(ctx.pixel(0, 10), [255, 0, 0]);
        assert_eq!(ctx.pixel(63, 10), [0, 255, 0]);
        let obj = resize_frame(&tall, 64, 64, Branch::Object);
        assert_eq!((obj.height, obj.width), (64, 64));
        let same = Frame::filled(64, 64, [1, 2, 3]);
        assert_eq!(resize_frame(&same, 64, 64, Branch::Context), same);
    }

    #[test]
    fn nearest_slice_prefers_earlier() {
        let fm = FeatureMap {
            video_id: "v".into(),
            frames: vec![0, 4, 8],
            patch: 8,
            features: Tensor::zeros(&[3, 1, 1, 1]),
        };
        assert_eq!(fm.nearest_slice(2), 0);
        assert_eq!(fm.nearest_slice(3), 1);
        assert_eq!(fm.nearest_slice(100), 2);
    }
}
