//! Minimal dense layers with hand-written backward passes.
//!
//! The model is small enough that explicit loops beat any tensor library
//! here, and analytic gradients stay fully inspectable.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Row-major matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn matvec(&self, x: &[f64], out: &mut Vec<f64>) {
        debug_assert_eq!(x.len(), self.cols);
        out.clear();
        out.reserve(self.rows);
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            let mut acc = 0.0;
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            out.push(acc);
        }
    }

    /// `out += W^T y`
    pub fn matvec_t_add(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for r in 0..self.rows {
            let yr = y[r];
            if yr == 0.0 {
                continue;
            }
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * yr;
            }
        }
    }

    /// `W += y x^T`
    pub fn add_outer(&mut self, y: &[f64], x: &[f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(x.len(), self.cols);
        for r in 0..self.rows {
            let yr = y[r];
            if yr == 0.0 {
                continue;
            }
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (w, xi) in row.iter_mut().zip(x) {
                *w += yr * xi;
            }
        }
    }
}

/// Fully connected layer `y = W x + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Dense { w: Matrix::zeros(out_dim, in_dim), b: vec![0.0; out_dim] }
    }

    pub fn xavier(out_dim: usize, in_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let mut layer = Dense::zeros(out_dim, in_dim);
        for w in layer.w.data.iter_mut() {
            *w = rng.random_range(-bound..bound);
        }
        layer
    }

    pub fn in_dim(&self) -> usize {
        self.w.cols
    }

    pub fn out_dim(&self) -> usize {
        self.w.rows
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::new();
        self.w.matvec(x, &mut out);
        for (o, b) in out.iter_mut().zip(&self.b) {
            *o += b;
        }
        out
    }

    /// Accumulate gradients for `d_out` and add the input gradient into
    /// `d_in`.
    pub fn backward(&self, x: &[f64], d_out: &[f64], grad: &mut Dense, d_in: &mut [f64]) {
        grad.w.add_outer(d_out, x);
        for (g, d) in grad.b.iter_mut().zip(d_out) {
            *g += d;
        }
        self.w.matvec_t_add(d_out, d_in);
    }

    pub fn param_count(&self) -> usize {
        self.w.data.len() + self.b.len()
    }

    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.w.data);
        out.extend_from_slice(&self.b);
    }

    pub fn read_from(&mut self, flat: &[f64], offset: &mut usize) {
        let nw = self.w.data.len();
        self.w.data.copy_from_slice(&flat[*offset..*offset + nw]);
        *offset += nw;
        let nb = self.b.len();
        self.b.copy_from_slice(&flat[*offset..*offset + nb]);
        *offset += nb;
    }
}

/// Stack of dense layers with tanh after every layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Per-layer inputs and post-activation outputs kept for backprop.
#[derive(Clone, Debug, Default)]
pub struct MlpCache {
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn xavier(dims: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let layers = dims
            .windows(2)
            .map(|w| Dense::xavier(w[1], w[0], rng))
            .collect();
        Mlp { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.out_dim(), l.in_dim()))
                .collect(),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("mlp has layers").out_dim()
    }

    pub fn forward(&self, x: &[f64], cache: &mut MlpCache) -> Vec<f64> {
        cache.inputs.clear();
        cache.outputs.clear();
        let mut cur = x.to_vec();
        for layer in &self.layers {
            cache.inputs.push(cur.clone());
            let mut out = layer.forward(&cur);
            for v in out.iter_mut() {
                *v = v.tanh();
            }
            cache.outputs.push(out.clone());
            cur = out;
        }
        cur
    }

    /// Backprop `d_out` through the stack; returns the input gradient.
    pub fn backward(&self, cache: &MlpCache, d_out: &[f64], grad: &mut Mlp) -> Vec<f64> {
        let mut delta = d_out.to_vec();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let out = &cache.outputs[idx];
            for (d, y) in delta.iter_mut().zip(out) {
                *d *= 1.0 - y * y;
            }
            let mut d_in = vec![0.0; layer.in_dim()];
            layer.backward(&cache.inputs[idx], &delta, &mut grad.layers[idx], &mut d_in);
            delta = d_in;
        }
        delta
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            l.flatten_into(out);
        }
    }

    pub fn read_from(&mut self, flat: &[f64], offset: &mut usize) {
        for l in &mut self.layers {
            l.read_from(flat, offset);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    // Finite-difference check of the raw MLP backward pass on a scalar
    // objective: f = sum(mlp(x)).
    #[test]
    fn mlp_gradients_match_finite_differences() {
        let mut rng = rng::rng_from(99);
        let mlp = Mlp::xavier(&[3, 5, 4], &mut rng);
        let x = vec![0.3, -0.8, 1.1];

        let mut cache = MlpCache::default();
        let out = mlp.forward(&x, &mut cache);
        let mut grad = mlp.zeros_like();
        let d_out = vec![1.0; out.len()];
        let d_in = mlp.backward(&cache, &d_out, &mut grad);

        let f = |m: &Mlp, x: &[f64]| -> f64 {
            let mut c = MlpCache::default();
            m.forward(x, &mut c).iter().sum()
        };
        let eps = 1e-6;

        // Input gradient.
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += eps;
            xm[i] -= eps;
            let fd = (f(&mlp, &xp) - f(&mlp, &xm)) / (2.0 * eps);
            assert!((fd - d_in[i]).abs() < 1e-7, "input {i}: fd {fd} vs {}", d_in[i]);
        }

        // A few weight coordinates.
        let mut flat = Vec::new();
        mlp.flatten_into(&mut flat);
        let mut gflat = Vec::new();
        grad.flatten_into(&mut gflat);
        for i in (0..flat.len()).step_by(7) {
            let mut per = mlp.clone();
            let mut fp = flat.clone();
            fp[i] += eps;
            per.read_from(&fp, &mut 0);
            let up = f(&per, &x);
            fp[i] -= 2.0 * eps;
            per.read_from(&fp, &mut 0);
            let dn = f(&per, &x);
            let fd = (up - dn) / (2.0 * eps);
            assert!((fd - gflat[i]).abs() < 1e-7, "weight {i}: fd {fd} vs {}", gflat[i]);
        }
    }
}
