use alloc::vec;
use alloc::vec::Vec;

use super::tensor::{dot, matmul_into, Tensor};
use super::NumError;
use crate::rng::SeededRng;

/// A learnable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = vec![0.0; value.len()];
        Self { value, grad }
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn init_uniform(dims: &[usize], fan_in: usize, rng: &mut SeededRng) -> Self {
        let bound = 1.0 / libm::sqrt(fan_in as f64);
        let n = dims.iter().product();
        let value = Tensor::new(dims.to_vec(), rng.uniform_vec(n, -bound, bound))
            .expect("dims are positive");
        Self::new(value)
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::new(Tensor::zeros(dims))
    }

    pub fn filled(dims: &[usize], v: f64) -> Self {
        let mut p = Self::zeros(dims);
        p.value.data_mut().iter_mut().for_each(|x| *x = v);
        p
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Anything that owns parameters. Order of `params` is fixed for the
/// lifetime of the module; optimizers and checkpoints rely on it.
pub trait Module {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    /// All parameter values concatenated in `params` order.
    fn flat_values(&self) -> Vec<f64> {
        self.params()
            .iter()
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }

    fn flat_grads(&self) -> Vec<f64> {
        self.params()
            .iter()
            .flat_map(|p| p.grad.iter().copied())
            .collect()
    }

    fn set_flat_values(&mut self, flat: &[f64]) {
        let mut off = 0;
        for p in self.params_mut() {
            let n = p.value.len();
            p.value.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Param,
    pub b: Param,
}

impl Linear {
    pub fn new(d_in: usize, d_out: usize, rng: &mut SeededRng) -> Self {
        Self {
            w: Param::init_uniform(&[d_in, d_out], d_in, rng),
            b: Param::zeros(&[d_out]),
        }
    }

    pub fn d_in(&self) -> usize {
        self.w.value.dims()[0]
    }

    pub fn d_out(&self) -> usize {
        self.w.value.dims()[1]
    }

    /// `x[n x d_in] -> [n x d_out]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NumError> {
        let (n, d_in, d_out) = (x.rows(), self.d_in(), self.d_out());
        if x.cols() != d_in {
            return Err(NumError::Dimension {
                left: x.cols(),
                right: d_in,
            });
        }
        let mut out = vec![0.0; n * d_out];
        for row in out.chunks_mut(d_out) {
            row.copy_from_slice(self.b.value.data());
        }
        matmul_into(x.data(), self.w.value.data(), &mut out, n, d_in, d_out);
        Tensor::new(vec![n, d_out], out)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Tensor, grad_out: &Tensor) -> Tensor {
        let (n, d_in, d_out) = (x.rows(), self.d_in(), self.d_out());
        let w = self.w.value.data();
        let mut grad_x = vec![0.0; n * d_in];
        for r in 0..n {
            let g = grad_out.row(r);
            let xr = x.row(r);
            for (bg, gv) in self.b.grad.iter_mut().zip(g) {
                *bg += gv;
            }
            for i in 0..d_in {
                let xi = xr[i];
                let wrow = &w[i * d_out..(i + 1) * d_out];
                grad_x[r * d_in + i] = dot(g, wrow);
                if xi != 0.0 {
                    let gw = &mut self.w.grad[i * d_out..(i + 1) * d_out];
                    for (a, gv) in gw.iter_mut().zip(g) {
                        *a += xi * gv;
                    }
                }
            }
        }
        Tensor::new(vec![n, d_in], grad_x).expect("shape preserved")
    }
}

impl Module for Linear {
    fn params(&self) -> Vec<&Param> {
        vec![&self.w, &self.b]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w, &mut self.b]
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

/// tanh-approximated GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::tanh(GELU_K * (x + GELU_C * x * x * x)))
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = libm::tanh(GELU_K * (x + GELU_C * x * x * x));
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

pub fn gelu_tensor(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| gelu(v)).collect();
    Tensor::new(x.dims().to_vec(), data).expect("shape preserved")
}

/// Two linear maps with a GELU between them.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    x: Tensor,
    pre: Tensor,
    act: Tensor,
}

impl Mlp {
    pub fn new(d_in: usize, d_hidden: usize, d_out: usize, rng: &mut SeededRng) -> Self {
        Self {
            fc1: Linear::new(d_in, d_hidden, rng),
            fc2: Linear::new(d_hidden, d_out, rng),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, MlpCache), NumError> {
        let pre = self.fc1.forward(x)?;
        let act = gelu_tensor(&pre);
        let y = self.fc2.forward(&act)?;
        Ok((
            y,
            MlpCache {
                x: x.clone(),
                pre,
                act,
            },
        ))
    }

    pub fn backward(&mut self, grad_out: &Tensor, cache: &MlpCache) -> Tensor {
        let mut g = self.fc2.backward(&cache.act, grad_out);
        for (gv, &p) in g.data_mut().iter_mut().zip(cache.pre.data()) {
            *gv *= gelu_grad(p);
        }
        self.fc1.backward(&cache.x, &g)
    }
}

impl Module for Mlp {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.fc1.params();
        v.extend(self.fc2.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.fc1.params_mut();
        v.extend(self.fc2.params_mut());
        v
    }
}

/// Layer normalization over the last axis.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Param,
    pub beta: Param,
    eps: f64,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(d: usize) -> Self {
        Self {
            gamma: Param::filled(&[d], 1.0),
            beta: Param::zeros(&[d]),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Tensor) -> (Tensor, LayerNormCache) {
        let (n, d) = (x.rows(), x.cols());
        let mut xhat = x.clone();
        let mut y = x.clone();
        let mut inv_std = Vec::with_capacity(n);
        let (g, b) = (self.gamma.value.data(), self.beta.value.data());
        for r in 0..n {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / libm::sqrt(var + self.eps);
            inv_std.push(is);
            let xh = xhat.row_mut(r);
            for (o, v) in xh.iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            let yr = y.row_mut(r);
            for i in 0..d {
                yr[i] = xhat.row(r)[i] * g[i] + b[i];
            }
        }
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&mut self, grad_out: &Tensor, cache: &LayerNormCache) -> Tensor {
        let (n, d) = (grad_out.rows(), grad_out.cols());
        let g = self.gamma.value.data().to_vec();
        let mut grad_x = grad_out.clone();
        for r in 0..n {
            let go = grad_out.row(r);
            let xh = cache.xhat.row(r);
            let mut dxhat = vec![0.0; d];
            for i in 0..d {
                self.gamma.grad[i] += go[i] * xh[i];
                self.beta.grad[i] += go[i];
                dxhat[i] = go[i] * g[i];
            }
            let mean_d = dxhat.iter().sum::<f64>() / d as f64;
            let mean_dx = dot(&dxhat, xh) / d as f64;
            let is = cache.inv_std[r];
            let gx = grad_x.row_mut(r);
            for i in 0..d {
                gx[i] = is * (dxhat[i] - mean_d - xh[i] * mean_dx);
            }
        }
        grad_x
    }
}

impl Module for LayerNorm {
    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

/// Lookup table of row vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub table: Param,
}

impl Embedding {
    pub fn new(rows: usize, d: usize, rng: &mut SeededRng) -> Self {
        Self {
            table: Param::init_uniform(&[rows, d], d, rng),
        }
    }

    pub fn len(&self) -> usize {
        self.table.value.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.table.value.cols()
    }

    pub fn lookup(&self, id: usize) -> Result<&[f64], NumError> {
        if id >= self.len() {
            return Err(NumError::Index {
                index: id,
                bound: self.len(),
            });
        }
        Ok(self.table.value.row(id))
    }

    pub fn accumulate(&mut self, id: usize, grad: &[f64]) {
        let d = self.dim();
        for (a, g) in self.table.grad[id * d..(id + 1) * d].iter_mut().zip(grad) {
            *a += g;
        }
    }
}

impl Module for Embedding {
    fn params(&self) -> Vec<&Param> {
        vec![&self.table]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.table]
    }
}
