//! Small dense networks with hand-written reverse mode.
//!
//! Hidden layers apply `affine → ReLU → [LayerNorm] → [dropout]`; the final
//! layer is affine. Parameters live in one flat vector (per layer: row-major
//! weights, then biases) so optimizers and checkpoints can treat a network as
//! a plain slice.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::math::{exp, log, sqrt};
use crate::{Error, Result};

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    layer_norm: Vec<bool>,
    dropout: Vec<f64>,
    params: Vec<f64>,
    #[serde(skip)]
    generation: u64,
}

/// Per-hidden-layer multiplicative masks (entries `0` or `1/(1−p)`); an empty
/// entry leaves that layer unmasked.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    pub layers: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Cache {
    generation: u64,
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    normed: Vec<Vec<f64>>,
    inv_std: Vec<f64>,
    masks: Vec<Vec<f64>>,
}

impl Cache {
    /// Output of the last hidden layer (the input of the final affine map).
    pub fn last_hidden(&self) -> &[f64] {
        self.inputs.last().map(|v| v.as_slice()).unwrap_or(&[])
    }
}

impl Mlp {
    /// `sizes` lists layer widths from input to output; `layer_norm` and
    /// `dropout` have one entry per hidden layer.
    pub fn new(sizes: &[usize], layer_norm: &[bool], dropout: &[f64]) -> Result<Mlp> {
        if sizes.len() < 2 || sizes.iter().any(|s| *s == 0) {
            return Err(Error::Internal(format!("invalid layer sizes {sizes:?}")));
        }
        let hidden = sizes.len() - 2;
        if layer_norm.len() != hidden || dropout.len() != hidden {
            return Err(Error::Internal(format!(
                "expected {hidden} hidden-layer flags, got {} and {}",
                layer_norm.len(),
                dropout.len()
            )));
        }
        if dropout.iter().any(|p| !(0.0..1.0).contains(p)) {
            return Err(Error::Internal("dropout probability outside [0, 1)".into()));
        }
        let n: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Mlp {
            sizes: sizes.to_vec(),
            layer_norm: layer_norm.to_vec(),
            dropout: dropout.to_vec(),
            params: vec![0.0; n],
            generation: 0,
        })
    }

    /// Plain ReLU network without normalization or dropout.
    pub fn plain(sizes: &[usize]) -> Result<Mlp> {
        let h = sizes.len().saturating_sub(2);
        Mlp::new(sizes, &vec![false; h], &vec![0.0; h])
    }

    /// Uniform in `±√(6/(fan_in+fan_out))`, zero biases.
    pub fn init_glorot<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let mut off = 0;
        for l in 0..self.n_layers() {
            let (fi, fo) = (self.sizes[l], self.sizes[l + 1]);
            let a = sqrt(6.0 / (fi + fo) as f64);
            for w in &mut self.params[off..off + fi * fo] {
                *w = (rng.gen::<f64>() * 2.0 - 1.0) * a;
            }
            off += fi * fo;
            for b in &mut self.params[off..off + fo] {
                *b = 0.0;
            }
            off += fo;
        }
        self.generation += 1;
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_width(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn dropout(&self) -> &[f64] {
        &self.dropout
    }

    pub fn set_dropout(&mut self, dropout: &[f64]) {
        self.dropout = dropout.to_vec();
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.generation += 1;
        &mut self.params
    }

    pub fn set_params(&mut self, p: &[f64]) {
        self.params.copy_from_slice(p);
        self.generation += 1;
    }

    /// Offset of layer `l`'s weights and biases in the flat vector.
    pub fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let mut off = 0;
        for j in 0..l {
            off += self.sizes[j] * self.sizes[j + 1] + self.sizes[j + 1];
        }
        (off, off + self.sizes[l] * self.sizes[l + 1])
    }

    /// Multiply-add count of one forward pass (two flops each).
    pub fn forward_flops(&self) -> usize {
        self.sizes.windows(2).map(|w| 2 * w[0] * w[1]).sum::<usize>()
            + self.sizes[1..self.sizes.len() - 1].iter().map(|s| 6 * s).sum::<usize>()
    }

    pub fn sample_mask<R: Rng + ?Sized>(&self, rng: &mut R) -> DropoutMask {
        let layers = self
            .dropout
            .iter()
            .enumerate()
            .map(|(l, &p)| {
                if p > 0.0 {
                    let scale = 1.0 / (1.0 - p);
                    (0..self.sizes[l + 1])
                        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { scale })
                        .collect()
                } else {
                    Vec::new()
                }
            })
            .collect();
        DropoutMask { layers }
    }

    fn affine(&self, l: usize, x: &[f64], out: &mut Vec<f64>) {
        let (fi, fo) = (self.sizes[l], self.sizes[l + 1]);
        let (w_off, b_off) = self.layer_offsets(l);
        out.clear();
        for o in 0..fo {
            let row = &self.params[w_off + o * fi..w_off + (o + 1) * fi];
            let mut s = self.params[b_off + o];
            for (w, v) in row.iter().zip(x) {
                s += w * v;
            }
            out.push(s);
        }
    }

    fn check_mask(&self, mask: Option<&DropoutMask>) -> Result<()> {
        if let Some(m) = mask {
            if m.layers.len() != self.dropout.len() {
                return Err(Error::Internal("dropout mask layer count mismatch".into()));
            }
            for (l, v) in m.layers.iter().enumerate() {
                if !v.is_empty() && v.len() != self.sizes[l + 1] {
                    return Err(Error::Internal(format!("dropout mask width mismatch at layer {l}")));
                }
            }
        }
        Ok(())
    }

    /// Forward pass without a cache. Dropout is applied only through `mask`.
    pub fn predict(&self, x: &[f64], mask: Option<&DropoutMask>) -> Result<Vec<f64>> {
        if x.len() != self.sizes[0] {
            return Err(Error::Internal(format!(
                "input width {} does not match network width {}",
                x.len(),
                self.sizes[0]
            )));
        }
        self.check_mask(mask)?;
        let mut h = x.to_vec();
        let mut a = Vec::new();
        for l in 0..self.n_layers() {
            self.affine(l, &h, &mut a);
            if l + 1 == self.n_layers() {
                return Ok(a);
            }
            for v in a.iter_mut() {
                *v = v.max(0.0);
            }
            if self.layer_norm[l] {
                layer_norm_in_place(&mut a);
            }
            if let Some(m) = mask {
                for (v, s) in a.iter_mut().zip(&m.layers[l]) {
                    *v *= s;
                }
            }
            core::mem::swap(&mut h, &mut a);
        }
        unreachable!()
    }

    pub fn forward(&self, x: &[f64], mask: Option<&DropoutMask>) -> Result<(Vec<f64>, Cache)> {
        if x.len() != self.sizes[0] {
            return Err(Error::Internal(format!(
                "input width {} does not match network width {}",
                x.len(),
                self.sizes[0]
            )));
        }
        self.check_mask(mask)?;
        let n = self.n_layers();
        let mut cache = Cache {
            generation: self.generation,
            inputs: Vec::with_capacity(n),
            pre: Vec::with_capacity(n),
            normed: Vec::with_capacity(n),
            inv_std: Vec::with_capacity(n),
            masks: Vec::with_capacity(n),
        };
        let mut h = x.to_vec();
        for l in 0..n {
            let mut a = Vec::new();
            self.affine(l, &h, &mut a);
            cache.inputs.push(h);
            if l + 1 == n {
                cache.pre.push(a.clone());
                return Ok((a, cache));
            }
            let mut r: Vec<f64> = a.iter().map(|v| v.max(0.0)).collect();
            cache.pre.push(a);
            let inv = if self.layer_norm[l] {
                layer_norm_in_place(&mut r)
            } else {
                1.0
            };
            cache.inv_std.push(inv);
            cache.normed.push(r.clone());
            let m = mask.map(|m| m.layers[l].clone()).unwrap_or_default();
            for (v, s) in r.iter_mut().zip(&m) {
                *v *= s;
            }
            cache.masks.push(m);
            h = r;
        }
        unreachable!()
    }

    /// Accumulates parameter gradients of a scalar loss into `grads` given
    /// `d_out = ∂loss/∂output` and an optional extra gradient on the last
    /// hidden layer's output. Returns `∂loss/∂input`.
    pub fn backward_into(
        &self,
        cache: &Cache,
        d_out: &[f64],
        d_last_hidden: Option<&[f64]>,
        grads: &mut [f64],
    ) -> Result<Vec<f64>> {
        if cache.generation != self.generation || cache.inputs.len() != self.n_layers() {
            return Err(Error::Internal("stale forward cache".into()));
        }
        if grads.len() != self.params.len() || d_out.len() != self.output_width() {
            return Err(Error::Internal("gradient buffer shape mismatch".into()));
        }
        let n = self.n_layers();
        let mut delta = d_out.to_vec();
        for l in (0..n).rev() {
            if l + 1 < n {
                // delta is ∂/∂(block output); undo dropout, LN, ReLU
                if l + 2 == n {
                    if let Some(extra) = d_last_hidden {
                        for (d, e) in delta.iter_mut().zip(extra) {
                            *d += e;
                        }
                    }
                }
                for (d, s) in delta.iter_mut().zip(&cache.masks[l]) {
                    *d *= s;
                }
                if self.layer_norm[l] {
                    let y = &cache.normed[l];
                    let k = y.len() as f64;
                    let mean_d = delta.iter().sum::<f64>() / k;
                    let mean_dy = delta.iter().zip(y).map(|(d, v)| d * v).sum::<f64>() / k;
                    let s = cache.inv_std[l];
                    for (d, v) in delta.iter_mut().zip(y) {
                        *d = s * (*d - mean_d - v * mean_dy);
                    }
                }
                for (d, a) in delta.iter_mut().zip(&cache.pre[l]) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let (fi, fo) = (self.sizes[l], self.sizes[l + 1]);
            let (w_off, b_off) = self.layer_offsets(l);
            let input = &cache.inputs[l];
            let mut d_in = vec![0.0; fi];
            for o in 0..fo {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                grads[b_off + o] += d;
                let g_row = &mut grads[w_off + o * fi..w_off + (o + 1) * fi];
                for (g, v) in g_row.iter_mut().zip(input) {
                    *g += d * v;
                }
                let w_row = &self.params[w_off + o * fi..w_off + (o + 1) * fi];
                for (di, w) in d_in.iter_mut().zip(w_row) {
                    *di += d * w;
                }
            }
            delta = d_in;
        }
        Ok(delta)
    }

    /// Fresh parameter gradients for one forward cache.
    pub fn backward(&self, cache: &Cache, d_out: &[f64]) -> Result<Vec<f64>> {
        let mut g = vec![0.0; self.params.len()];
        self.backward_into(cache, d_out, None, &mut g)?;
        Ok(g)
    }
}

/// Normalizes in place and returns `1/√(var + ε)`.
fn layer_norm_in_place(v: &mut [f64]) -> f64 {
    let k = v.len() as f64;
    let mean = v.iter().sum::<f64>() / k;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / k;
    let inv = 1.0 / sqrt(var + LN_EPS);
    for x in v.iter_mut() {
        *x = (*x - mean) * inv;
    }
    inv
}

/// `(v − mean) / √(var + 1e−5)`, no learned affine.
pub fn layer_norm(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    if !out.is_empty() {
        layer_norm_in_place(&mut out);
    }
    out
}

pub fn softmax_temperature(z: &[f64], t: f64) -> Result<Vec<f64>> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("temperature must be positive; got {t}")));
    }
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| exp((v - max) / t)).collect();
    let s: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / s).collect())
}

/// `log softmax(z / t)`.
pub fn log_softmax_temperature(z: &[f64], t: f64) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = z.iter().map(|v| exp((v - max) / t)).sum();
    let lse = log(s);
    z.iter().map(|v| (v - max) / t - lse).collect()
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|v| **v > 0.0)
        .map(|v| v * log(*v))
        .sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn with_defaults(n_params: usize) -> Adam {
        Adam::new(n_params, 1e-3)
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One bias-corrected step; `params` and `grads` must match the state.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Internal(format!(
                "optimizer state has {} entries, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - libm::pow(self.beta1, t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, t as f64);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (sqrt(vh) + self.eps);
        }
        Ok(())
    }
}

impl Mlp {
    pub fn adam_step(&mut self, grads: &[f64], state: &mut Adam) -> Result<()> {
        self.generation += 1;
        state.update(&mut self.params, grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn zero_net_gives_zero_logits() {
        let net = Mlp::new(&[3, 4, 2], &[true], &[0.2]).unwrap();
        assert_eq!(net.predict(&[1.0, -2.0, 3.0], None).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_is_relu() {
        let mut net = Mlp::plain(&[3, 3]).unwrap();
        let p = net.params_mut();
        p[0] = 1.0;
        p[4] = 1.0;
        p[8] = 1.0;
        let out = net.predict(&[1.0, -2.0, 3.0], None).unwrap();
        assert_eq!(out, vec![1.0, -2.0, 3.0]);
        let mut two = Mlp::plain(&[3, 3, 3]).unwrap();
        let p = two.params_mut();
        for l in [0usize, 12] {
            p[l] = 1.0;
            p[l + 4] = 1.0;
            p[l + 8] = 1.0;
        }
        assert_eq!(two.predict(&[1.0, -2.0, 3.0], None).unwrap(), vec![1.0, 0.0, 3.0]);
    }

    #[test]
    fn layer_norm_properties() {
        assert_eq!(layer_norm(&[2.0, 2.0, 2.0]), vec![0.0, 0.0, 0.0]);
        let v = [1.0, 4.0, -2.0, 7.0];
        let a = layer_norm(&v);
        let b = layer_norm(&[11.0, 14.0, 8.0, 17.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(crate::math::mean(&a).abs() < 1e-12);
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax_temperature(&[0.0, 0.0], 3.0).unwrap(), vec![0.5, 0.5]);
        let p = softmax_temperature(&[10.0, 0.0], 1.0).unwrap();
        assert!((p[0] - 1.0 / (1.0 + exp(-10.0))).abs() < 1e-15);
        let u = softmax_temperature(&[5.0, -3.0, 1.0], 1e6).unwrap();
        assert!(u.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-5));
        assert!(softmax_temperature(&[1.0], 0.0).is_err());
    }

    #[test]
    fn adam_examples() {
        let mut p = vec![1.0, -1.0];
        let mut a = Adam::with_defaults(2);
        a.update(&mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![1.0, -1.0]);
        assert_eq!(a.step, 1);
        for _ in 0..100 {
            a.update(&mut p, &[1.0, -1.0]).unwrap();
        }
        assert!(p[0] < 1.0 && p[1] > -1.0);
    }

    #[test]
    fn stale_cache_rejected() {
        let mut net = Mlp::plain(&[2, 3, 1]).unwrap();
        net.init_glorot(&mut stream(1, 0));
        let (_, cache) = net.forward(&[0.1, 0.2], None).unwrap();
        net.params_mut()[0] += 1.0;
        assert!(matches!(net.backward(&cache, &[1.0]), Err(Error::Internal(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut net = Mlp::new(&[3, 5, 4, 2], &[true, true], &[0.2, 0.0]).unwrap();
        net.init_glorot(&mut stream(2, 0));
        let (_, cache) = net.forward(&[0.3, 0.1, 0.9], None).unwrap();
        assert!(net.backward(&cache, &[0.0, 0.0]).unwrap().iter().all(|g| *g == 0.0));
    }
}
