use alloc::vec;
use alloc::vec::Vec;

use super::layers::{LayerNorm, LayerNormCache, Linear, Mlp, MlpCache, Module, Param};
use super::tensor::{dot, softmax_slice, Tensor};
use super::NumError;
use crate::rng::SeededRng;

/// Attention probabilities laid out `heads x len x len` (query-major).
#[derive(Debug, Clone, PartialEq)]
pub struct AttnWeights {
    pub heads: usize,
    pub len: usize,
    pub data: Vec<f64>,
}

impl AttnWeights {
    pub fn get(&self, head: usize, query: usize, key: usize) -> f64 {
        self.data[(head * self.len + query) * self.len + key]
    }

    pub fn row(&self, head: usize, query: usize) -> &[f64] {
        let s = (head * self.len + query) * self.len;
        &self.data[s..s + self.len]
    }
}

fn check_qkv(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize) -> Result<(usize, usize), NumError> {
    let (l, d) = (q.rows(), q.cols());
    if k.rows() != l || v.rows() != l || k.cols() != d || v.cols() != d {
        return Err(NumError::Shape("q, k, v must share dims"));
    }
    if heads == 0 || d % heads != 0 {
        return Err(NumError::Config("model dim not divisible by head count"));
    }
    Ok((l, d))
}

/// Scaled dot-product attention split across `heads`.
pub fn multihead_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    heads: usize,
    causal: bool,
) -> Result<(Tensor, AttnWeights), NumError> {
    let (l, d) = check_qkv(q, k, v, heads)?;
    let dh = d / heads;
    let scale = 1.0 / libm::sqrt(dh as f64);
    let mut weights = vec![0.0; heads * l * l];
    let mut out = vec![0.0; l * d];
    for h in 0..heads {
        let off = h * dh;
        for i in 0..l {
            let qi = &q.row(i)[off..off + dh];
            let visible = if causal { i + 1 } else { l };
            let w = &mut weights[(h * l + i) * l..(h * l + i + 1) * l];
            for j in 0..visible {
                w[j] = dot(qi, &k.row(j)[off..off + dh]) * scale;
            }
            softmax_slice(&mut w[..visible]);
            let o = &mut out[i * d + off..i * d + off + dh];
            for j in 0..visible {
                let wj = w[j];
                for (ov, vv) in o.iter_mut().zip(&v.row(j)[off..off + dh]) {
                    *ov += wj * vv;
                }
            }
        }
    }
    Ok((
        Tensor::new(vec![l, d], out)?,
        AttnWeights {
            heads,
            len: l,
            data: weights,
        },
    ))
}

/// Gradients of `multihead_attention` with respect to q, k and v.
pub fn multihead_attention_backward(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    weights: &AttnWeights,
    grad_out: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (l, d) = (q.rows(), q.cols());
    let heads = weights.heads;
    let dh = d / heads;
    let scale = 1.0 / libm::sqrt(dh as f64);
    let mut gq = vec![0.0; l * d];
    let mut gk = vec![0.0; l * d];
    let mut gv = vec![0.0; l * d];
    let mut dw = vec![0.0; l];
    for h in 0..heads {
        let off = h * dh;
        for i in 0..l {
            let g = &grad_out.row(i)[off..off + dh];
            let w = weights.row(h, i);
            let mut acc = 0.0;
            for j in 0..l {
                if w[j] == 0.0 {
                    dw[j] = 0.0;
                    continue;
                }
                dw[j] = dot(g, &v.row(j)[off..off + dh]);
                acc += w[j] * dw[j];
                for (a, gvv) in gv[j * d + off..j * d + off + dh].iter_mut().zip(g) {
                    *a += w[j] * gvv;
                }
            }
            let qi = &q.row(i)[off..off + dh];
            for j in 0..l {
                if w[j] == 0.0 {
                    continue;
                }
                let ds = w[j] * (dw[j] - acc) * scale;
                let kj = &k.row(j)[off..off + dh];
                for t in 0..dh {
                    gq[i * d + off + t] += ds * kj[t];
                    gk[j * d + off + t] += ds * qi[t];
                }
            }
        }
    }
    let mk = |data| Tensor::new(vec![l, d], data).expect("shape preserved");
    (mk(gq), mk(gk), mk(gv))
}

/// Self-attention with learned q/k/v/output projections.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    heads: usize,
}

#[derive(Debug, Clone)]
pub struct SelfAttentionCache {
    x: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    ctx: Tensor,
    pub weights: AttnWeights,
}

impl SelfAttention {
    pub fn new(d: usize, heads: usize, rng: &mut SeededRng) -> Result<Self, NumError> {
        if heads == 0 || d % heads != 0 {
            return Err(NumError::Config("model dim not divisible by head count"));
        }
        Ok(Self {
            wq: Linear::new(d, d, rng),
            wk: Linear::new(d, d, rng),
            wv: Linear::new(d, d, rng),
            wo: Linear::new(d, d, rng),
            heads,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn forward(&self, x: &Tensor, causal: bool) -> Result<(Tensor, SelfAttentionCache), NumError> {
        let q = self.wq.forward(x)?;
        let k = self.wk.forward(x)?;
        let v = self.wv.forward(x)?;
        let (ctx, weights) = multihead_attention(&q, &k, &v, self.heads, causal)?;
        let y = self.wo.forward(&ctx)?;
        Ok((
            y,
            SelfAttentionCache {
                x: x.clone(),
                q,
                k,
                v,
                ctx,
                weights,
            },
        ))
    }

    pub fn backward(&mut self, grad_out: &Tensor, c: &SelfAttentionCache) -> Tensor {
        let g_ctx = self.wo.backward(&c.ctx, grad_out);
        let (gq, gk, gv) = multihead_attention_backward(&c.q, &c.k, &c.v, &c.weights, &g_ctx);
        let mut gx = self.wq.backward(&c.x, &gq);
        for (a, b) in gx.data_mut().iter_mut().zip(self.wk.backward(&c.x, &gk).data()) {
            *a += b;
        }
        for (a, b) in gx.data_mut().iter_mut().zip(self.wv.backward(&c.x, &gv).data()) {
            *a += b;
        }
        gx
    }
}

impl Module for SelfAttention {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.wq.params();
        v.extend(self.wk.params());
        v.extend(self.wv.params());
        v.extend(self.wo.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.wq.params_mut();
        v.extend(self.wk.params_mut());
        v.extend(self.wv.params_mut());
        v.extend(self.wo.params_mut());
        v
    }
}

/// Pre-norm transformer block: `x + attn(ln(x))`, then `x + mlp(ln(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: SelfAttention,
    pub ln2: LayerNorm,
    pub mlp: Mlp,
    pub causal: bool,
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    ln1: LayerNormCache,
    pub attn: SelfAttentionCache,
    ln2: LayerNormCache,
    mlp: MlpCache,
}

impl TransformerBlock {
    pub fn new(d: usize, heads: usize, d_ff: usize, causal: bool, rng: &mut SeededRng) -> Result<Self, NumError> {
        Ok(Self {
            ln1: LayerNorm::new(d),
            attn: SelfAttention::new(d, heads, rng)?,
            ln2: LayerNorm::new(d),
            mlp: Mlp::new(d, d_ff, d, rng),
            causal,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, BlockCache), NumError> {
        let (n1, ln1) = self.ln1.forward(x);
        let (a, attn) = self.attn.forward(&n1, self.causal)?;
        let h = x.add(&a)?;
        let (n2, ln2) = self.ln2.forward(&h);
        let (m, mlp) = self.mlp.forward(&n2)?;
        let y = h.add(&m)?;
        Ok((y, BlockCache { ln1, attn, ln2, mlp }))
    }

    pub fn backward(&mut self, grad_out: &Tensor, c: &BlockCache) -> Tensor {
        let g_n2 = self.mlp.backward(grad_out, &c.mlp);
        let mut g_h = self.ln2.backward(&g_n2, &c.ln2);
        for (a, b) in g_h.data_mut().iter_mut().zip(grad_out.data()) {
            *a += b;
        }
        let g_n1 = self.attn.backward(&g_h, &c.attn);
        let mut g_x = self.ln1.backward(&g_n1, &c.ln1);
        for (a, b) in g_x.data_mut().iter_mut().zip(g_h.data()) {
            *a += b;
        }
        g_x
    }
}

impl Module for TransformerBlock {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.ln1.params();
        v.extend(self.attn.params());
        v.extend(self.ln2.params());
        v.extend(self.mlp.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.ln1.params_mut();
        v.extend(self.attn.params_mut());
        v.extend(self.ln2.params_mut());
        v.extend(self.mlp.params_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_t(rng: &mut SeededRng, l: usize, d: usize) -> Tensor {
        Tensor::new(vec![l, d], rng.uniform_vec(l * d, -1.0, 1.0)).unwrap()
    }

    #[test]
    fn single_position_returns_value_row() {
        let mut rng = SeededRng::new(2);
        let (q, k, v) = (rand_t(&mut rng, 1, 4), rand_t(&mut rng, 1, 4), rand_t(&mut rng, 1, 4));
        let (out, w) = multihead_attention(&q, &k, &v, 2, false).unwrap();
        assert_eq!(out.data(), v.data());
        assert_eq!(w.data, vec![1.0, 1.0]);
    }

    #[test]
    fn causal_mask_zeroes_future() {
        let mut rng = SeededRng::new(3);
        let (q, k, v) = (rand_t(&mut rng, 3, 4), rand_t(&mut rng, 3, 4), rand_t(&mut rng, 3, 4));
        let (_, w) = multihead_attention(&q, &k, &v, 1, true).unwrap();
        for i in 0..3 {
            for j in i + 1..3 {
                assert_eq!(w.get(0, i, j), 0.0);
            }
            assert!((w.row(0, i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn indivisible_dim_is_config_error() {
        let t = Tensor::zeros(&[2, 6]);
        assert!(matches!(
            multihead_attention(&t, &t, &t, 4, false),
            Err(NumError::Config(_))
        ));
    }

    #[test]
    fn matches_per_head_reference() {
        let mut rng = SeededRng::new(11);
        let (l, d, heads) = (4, 8, 2);
        let (q, k, v) = (rand_t(&mut rng, l, d), rand_t(&mut rng, l, d), rand_t(&mut rng, l, d));
        let (out, _) = multihead_attention(&q, &k, &v, heads, false).unwrap();
        let dh = d / heads;
        for h in 0..heads {
            // Slice out each head as its own small matrix and run textbook attention.
            let slice = |t: &Tensor, r: usize| -> Vec<f64> { t.row(r)[h * dh..(h + 1) * dh].to_vec() };
            for i in 0..l {
                let scores: Vec<f64> = (0..l)
                    .map(|j| {
                        let (a, b) = (slice(&q, i), slice(&k, j));
                        a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / (dh as f64).sqrt()
                    })
                    .collect();
                let m = scores.iter().cloned().fold(f64::MIN, f64::max);
                let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
                for t in 0..dh {
                    let expect: f64 = (0..l).map(|j| (scores[j] - m).exp() / z * slice(&v, j)[t]).sum();
                    assert!((out.row(i)[h * dh + t] - expect).abs() < 1e-10);
                }
            }
        }
    }
}
