use alloc::vec;
use alloc::vec::Vec;

use super::layers::{Module, Param};
use super::tensor::{dot, Tensor};
use super::NumError;
use crate::rng::SeededRng;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

/// One LSTM layer. Gate blocks are packed `[input, forget, cell, output]`
/// along the columns of each weight.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    pub w_ih: Param,
    pub w_hh: Param,
    pub b: Param,
}

#[derive(Debug, Clone)]
struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl LstmLayer {
    pub fn new(d_in: usize, hidden: usize, rng: &mut SeededRng) -> Self {
        Self {
            w_ih: Param::init_uniform(&[d_in, 4 * hidden], hidden, rng),
            w_hh: Param::init_uniform(&[hidden, 4 * hidden], hidden, rng),
            b: Param::zeros(&[4 * hidden]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.value.dims()[0]
    }

    pub fn d_in(&self) -> usize {
        self.w_ih.value.dims()[0]
    }

    /// Single cell update from `(h_prev, c_prev)`; returns `(h, c)`.
    pub fn cell(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (h, c, _) = self.step(x, h_prev, c_prev);
        (h, c)
    }

    fn step(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> (Vec<f64>, Vec<f64>, StepCache) {
        let hd = self.hidden();
        let g4 = 4 * hd;
        let mut z = self.b.value.data().to_vec();
        let wih = self.w_ih.value.data();
        let whh = self.w_hh.value.data();
        for (r, &xv) in x.iter().enumerate() {
            for (zv, w) in z.iter_mut().zip(&wih[r * g4..(r + 1) * g4]) {
                *zv += xv * w;
            }
        }
        for (r, &hv) in h_prev.iter().enumerate() {
            for (zv, w) in z.iter_mut().zip(&whh[r * g4..(r + 1) * g4]) {
                *zv += hv * w;
            }
        }
        let i: Vec<f64> = z[..hd].iter().map(|&v| sigmoid(v)).collect();
        let f: Vec<f64> = z[hd..2 * hd].iter().map(|&v| sigmoid(v)).collect();
        let g: Vec<f64> = z[2 * hd..3 * hd].iter().map(|&v| libm::tanh(v)).collect();
        let o: Vec<f64> = z[3 * hd..].iter().map(|&v| sigmoid(v)).collect();
        let c: Vec<f64> = (0..hd).map(|t| f[t] * c_prev[t] + i[t] * g[t]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|&v| libm::tanh(v)).collect();
        let h: Vec<f64> = (0..hd).map(|t| o[t] * tanh_c[t]).collect();
        let cache = StepCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            i,
            f,
            g,
            o,
            tanh_c,
        };
        (h, c, cache)
    }

    fn forward(&self, seq: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<StepCache>) {
        let hd = self.hidden();
        let mut h = vec![0.0; hd];
        let mut c = vec![0.0; hd];
        let mut outs = Vec::with_capacity(seq.len());
        let mut caches = Vec::with_capacity(seq.len());
        for x in seq {
            let (h2, c2, cache) = self.step(x, &h, &c);
            outs.push(h2.clone());
            caches.push(cache);
            h = h2;
            c = c2;
        }
        (outs, caches)
    }

    fn backward(&mut self, grad_h: &[Vec<f64>], caches: &[StepCache]) -> Vec<Vec<f64>> {
        let hd = self.hidden();
        let d_in = self.d_in();
        let g4 = 4 * hd;
        let mut dh_next = vec![0.0; hd];
        let mut dc_next = vec![0.0; hd];
        let mut dx_all = vec![Vec::new(); caches.len()];
        let mut dz = vec![0.0; g4];
        for t in (0..caches.len()).rev() {
            let s = &caches[t];
            for u in 0..hd {
                let dh = grad_h[t][u] + dh_next[u];
                let dc = dc_next[u] + dh * s.o[u] * (1.0 - s.tanh_c[u] * s.tanh_c[u]);
                let (di, df, dg, d_o) = (dc * s.g[u], dc * s.c_prev[u], dc * s.i[u], dh * s.tanh_c[u]);
                dz[u] = di * s.i[u] * (1.0 - s.i[u]);
                dz[hd + u] = df * s.f[u] * (1.0 - s.f[u]);
                dz[2 * hd + u] = dg * (1.0 - s.g[u] * s.g[u]);
                dz[3 * hd + u] = d_o * s.o[u] * (1.0 - s.o[u]);
                dc_next[u] = dc * s.f[u];
            }
            for (bg, z) in self.b.grad.iter_mut().zip(&dz) {
                *bg += z;
            }
            let mut dx = vec![0.0; d_in];
            let wih = self.w_ih.value.data();
            for r in 0..d_in {
                dx[r] = dot(&wih[r * g4..(r + 1) * g4], &dz);
                let xv = s.x[r];
                for (a, z) in self.w_ih.grad[r * g4..(r + 1) * g4].iter_mut().zip(&dz) {
                    *a += xv * z;
                }
            }
            let whh = self.w_hh.value.data();
            for r in 0..hd {
                dh_next[r] = dot(&whh[r * g4..(r + 1) * g4], &dz);
                let hv = s.h_prev[r];
                for (a, z) in self.w_hh.grad[r * g4..(r + 1) * g4].iter_mut().zip(&dz) {
                    *a += hv * z;
                }
            }
            dx_all[t] = dx;
        }
        dx_all
    }
}

impl Module for LstmLayer {
    fn params(&self) -> Vec<&Param> {
        vec![&self.w_ih, &self.w_hh, &self.b]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w_ih, &mut self.w_hh, &mut self.b]
    }
}

/// Stacked LSTM with zero initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub layers: Vec<LstmLayer>,
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    steps: Vec<Vec<StepCache>>,
    rows: usize,
}

impl Lstm {
    pub fn new(d_in: usize, hidden: usize, layers: usize, rng: &mut SeededRng) -> Self {
        let layers = (0..layers)
            .map(|l| LstmLayer::new(if l == 0 { d_in } else { hidden }, hidden, rng))
            .collect();
        Self { layers }
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].hidden()
    }

    /// All top-layer hidden states, `[k x hidden]`.
    pub fn forward(&self, seq: &Tensor) -> Result<(Tensor, LstmCache), NumError> {
        let rows: Vec<Vec<f64>> = (0..seq.rows()).map(|r| seq.row(r).to_vec()).collect();
        self.forward_rows(&rows)
    }

    pub fn forward_rows(&self, seq: &[Vec<f64>]) -> Result<(Tensor, LstmCache), NumError> {
        if seq.is_empty() {
            return Err(NumError::EmptySequence);
        }
        let d_in = self.layers[0].d_in();
        if seq.iter().any(|r| r.len() != d_in) {
            return Err(NumError::Shape("lstm input width mismatch"));
        }
        let mut cur = seq.to_vec();
        let mut steps = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (out, cache) = layer.forward(&cur);
            steps.push(cache);
            cur = out;
        }
        let hd = self.hidden();
        let data = cur.into_iter().flatten().collect();
        Ok((
            Tensor::new(vec![seq.len(), hd], data)?,
            LstmCache {
                steps,
                rows: seq.len(),
            },
        ))
    }

    pub fn backward(&mut self, grad_out: &Tensor, cache: &LstmCache) -> Tensor {
        let mut g: Vec<Vec<f64>> = (0..cache.rows).map(|r| grad_out.row(r).to_vec()).collect();
        for (layer, steps) in self.layers.iter_mut().zip(&cache.steps).rev() {
            g = layer.backward(&g, steps);
        }
        let cols = g[0].len();
        Tensor::new(vec![cache.rows, cols], g.into_iter().flatten().collect()).expect("non-empty")
    }
}

impl Module for Lstm {
    fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_zero_inputs_give_zero_states() {
        let mut rng = SeededRng::new(0);
        let mut lstm = Lstm::new(3, 4, 2, &mut rng);
        lstm.set_flat_values(&vec![0.0; lstm.param_count()]);
        let (h, _) = lstm.forward(&Tensor::zeros(&[5, 3])).unwrap();
        assert!(h.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_sequence_rejected() {
        let mut rng = SeededRng::new(0);
        let lstm = Lstm::new(3, 4, 2, &mut rng);
        assert!(matches!(lstm.forward_rows(&[]), Err(NumError::EmptySequence)));
    }

    #[test]
    fn single_step_equals_cell() {
        let mut rng = SeededRng::new(5);
        let lstm = Lstm::new(3, 4, 1, &mut rng);
        let x = rng.uniform_vec(3, -1.0, 1.0);
        let (h, _) = lstm.forward_rows(&[x.clone()]).unwrap();
        let (hc, _) = lstm.layers[0].cell(&x, &[0.0; 4], &[0.0; 4]);
        assert_eq!(h.data(), hc.as_slice());
    }

    // Scalar gate equations written out independently of the packed layout.
    #[test]
    fn matches_scalar_gate_reference() {
        let mut rng = SeededRng::new(9);
        let (d_in, hd) = (3, 2);
        let lstm = Lstm::new(d_in, hd, 2, &mut rng);
        let seq: Vec<Vec<f64>> = (0..3).map(|_| rng.uniform_vec(d_in, -1.0, 1.0)).collect();
        let (out, _) = lstm.forward_rows(&seq).unwrap();

        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut inputs = seq.clone();
        for layer in &lstm.layers {
            let w_ih = layer.w_ih.value.data();
            let w_hh = layer.w_hh.value.data();
            let b = layer.b.value.data();
            let n_in = inputs[0].len();
            let (mut h, mut c) = (vec![0.0; hd], vec![0.0; hd]);
            let mut outs = Vec::new();
            for x in &inputs {
                let pre = |gate: usize, u: usize| -> f64 {
                    let col = gate * hd + u;
                    let mut s = b[col];
                    for r in 0..n_in {
                        s += x[r] * w_ih[r * 4 * hd + col];
                    }
                    for r in 0..hd {
                        s += h[r] * w_hh[r * 4 * hd + col];
                    }
                    s
                };
                let mut nh = vec![0.0; hd];
                let mut nc = vec![0.0; hd];
                for u in 0..hd {
                    let ig = sig(pre(0, u));
                    let fg = sig(pre(1, u));
                    let gg = pre(2, u).tanh();
                    let og = sig(pre(3, u));
                    nc[u] = fg * c[u] + ig * gg;
                    nh[u] = og * nc[u].tanh();
                }
                h = nh;
                c = nc;
                outs.push(h.clone());
            }
            inputs = outs;
        }
        for (t, row) in inputs.iter().enumerate() {
            for u in 0..hd {
                assert!((out.row(t)[u] - row[u]).abs() < 1e-10);
            }
        }
    }
}
