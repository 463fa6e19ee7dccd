//! Context tokens from the whole feature map.
//!
//! A parameter-free 2x2x2 average pool halves time, height and width, and a
//! two-layer MLP maps each pooled vector to the decoder width.

use alloc::vec;
use alloc::vec::Vec;

use crate::numcore::{Mlp, MlpCache, Module, NumError, Param, Tensor};
use crate::rng::SeededRng;
use crate::video::uniform_indices;

/// Output grid `(t', h', w')` and the tokens in that order, `[N_v x d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextTokens {
    pub layout: (usize, usize, usize),
    pub tokens: Tensor,
}

impl ContextTokens {
    pub fn len(&self) -> usize {
        self.tokens.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.rows() == 0
    }
}

/// Mean over each 2x2x2 block of a `[t x h x w x D]` tensor, giving
/// `[(t/2 * h/2 * w/2) x D]` in `(t', y', x')` order.
pub fn block_pool(x: &Tensor) -> Result<(Tensor, (usize, usize, usize)), NumError> {
    let dims = x.dims();
    if dims.len() != 4 {
        return Err(NumError::Shape("block_pool expects [t x h x w x D]"));
    }
    let (t, h, w, d) = (dims[0], dims[1], dims[2], dims[3]);
    if t % 2 != 0 || h % 2 != 0 || w % 2 != 0 {
        return Err(NumError::Config("t, h and w must be even"));
    }
    let (tp, hp, wp) = (t / 2, h / 2, w / 2);
    let src = x.data();
    let mut out = vec![0.0; tp * hp * wp * d];
    for ti in 0..t {
        for y in 0..h {
            for xx in 0..w {
                let o = ((ti / 2 * hp + y / 2) * wp + xx / 2) * d;
                let s = ((ti * h + y) * w + xx) * d;
                for k in 0..d {
                    out[o + k] += src[s + k];
                }
            }
        }
    }
    out.iter_mut().for_each(|v| *v *= 0.125);
    Ok((Tensor::new(vec![tp * hp * wp, d], out)?, (tp, hp, wp)))
}

/// Gradient of `block_pool`: each pooled row's gradient spread evenly over
/// its eight source cells. `dims` is the `[t, h, w, D]` input shape.
pub fn block_pool_backward(grad: &Tensor, dims: &[usize]) -> Result<Tensor, NumError> {
    if dims.len() != 4 || dims[0] % 2 != 0 || dims[1] % 2 != 0 || dims[2] % 2 != 0 {
        return Err(NumError::Shape("block_pool_backward expects even [t x h x w x D]"));
    }
    let (t, h, w, d) = (dims[0], dims[1], dims[2], dims[3]);
    let (hp, wp) = (h / 2, w / 2);
    if grad.rows() != t / 2 * hp * wp || grad.cols() != d {
        return Err(NumError::Shape("pooled gradient does not match dims"));
    }
    let g = grad.data();
    let mut out = vec![0.0; t * h * w * d];
    for ti in 0..t {
        for y in 0..h {
            for x in 0..w {
                let o = ((ti / 2 * hp + y / 2) * wp + x / 2) * d;
                let s = ((ti * h + y) * w + x) * d;
                for k in 0..d {
                    out[s + k] = 0.125 * g[o + k];
                }
            }
        }
    }
    Tensor::new(dims.to_vec(), out)
}

/// Token-wise MLP over block-pooled features.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoProjector {
    pub mlp: Mlp,
}

impl VideoProjector {
    pub fn new(d_in: usize, d: usize, rng: &mut SeededRng) -> Self {
        Self {
            mlp: Mlp::new(d_in, d, d, rng),
        }
    }

    /// `[N_v x D]` pooled vectors to `[N_v x d]` tokens.
    pub fn forward(&self, pooled: &Tensor) -> Result<(Tensor, MlpCache), NumError> {
        self.mlp.forward(pooled)
    }

    pub fn backward(&mut self, grad: &Tensor, cache: &MlpCache) -> Tensor {
        self.mlp.backward(grad, cache)
    }

    /// Pool then project.
    pub fn stc_lite(&self, features: &Tensor) -> Result<ContextTokens, NumError> {
        let (pooled, layout) = block_pool(features)?;
        let (tokens, _) = self.forward(&pooled)?;
        Ok(ContextTokens { layout, tokens })
    }
}

impl Module for VideoProjector {
    fn params(&self) -> Vec<&Param> {
        self.mlp.params()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.mlp.params_mut()
    }
}

/// `t_v` frame indices spread over `0..total` with both endpoints; short
/// videos repeat their last frame.
pub fn sample_context_frames(total: usize, t_v: usize) -> Vec<usize> {
    if total == 0 {
        return Vec::new();
    }
    let mut idx = uniform_indices(total, t_v);
    while idx.len() < t_v {
        idx.push(total - 1);
    }
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_count() {
        let x = Tensor::zeros(&[8, 8, 8, 3]);
        let (p, layout) = block_pool(&x).unwrap();
        assert_eq!(layout, (4, 4, 4));
        assert_eq!(p.rows(), 64);
        assert!(block_pool(&Tensor::zeros(&[3, 8, 8, 3])).is_err());
    }

    #[test]
    fn constant_map_gives_identical_tokens() {
        let mut rng = SeededRng::new(4);
        let x = Tensor::new(vec![2, 4, 4, 3], vec![0.7; 96]).unwrap();
        let ctx = VideoProjector::new(3, 8, &mut rng).stc_lite(&x).unwrap();
        for r in 1..ctx.len() {
            assert_eq!(ctx.tokens.row(r), ctx.tokens.row(0));
        }
    }

    #[test]
    fn context_frame_examples() {
        assert_eq!(sample_context_frames(8, 8), (0..8).collect::<Vec<_>>());
        assert_eq!(sample_context_frames(64, 8), vec![0, 9, 18, 27, 36, 45, 54, 63]);
        assert_eq!(sample_context_frames(3, 8), vec![0, 1, 2, 2, 2, 2, 2, 2]);
    }
}
