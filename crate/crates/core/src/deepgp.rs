//! Per-objective two-layer deep GP surrogate.
//!
//! Layer 1 is a whitened sparse variational GP on the unit-scaled decision
//! vector with an ARD RBF kernel, a neural mean `m(x) = wᵀφ(x) + b` and a
//! diagonal `q(v)`; with `u = m(Z) + L v` the marginal at `x` is
//!
//! ```text
//! μ₁ = m(x) + aᵀ m_v,   σ₁² = σ_f² − aᵀa + Σ a_j² s_j,   a = L⁻¹ k_Z(x)
//! ```
//!
//! Layer 2 is a random-Fourier-feature linear model `g(h) = βᵀψ(h)` with a
//! factorized Gaussian posterior on `β`. The noise variance is
//! `σ²(x) = exp(s(φ(x)))` for a small network `s` on the mean-net features.
//! Layer-1 uncertainty is propagated through layer 2 with fixed stratified
//! normal quantiles, so both the training objective and the predictions are
//! deterministic.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::math::{
    cholesky_jittered, cos, exp, log, lower_inverse, median, normal_quantile_nodes, sin,
    solve_lower, solve_lower_transpose, solve_spd, sq_dist, sqrt, Matrix, LN_2PI, PI,
};
use crate::neural::{Adam, Cache, Mlp};
use crate::pareto::Archive;
use crate::rng::standard_normal;
use crate::{Error, Result};

/// Flop weight charged for one `exp`/`cos`/`sin` evaluation in the cost model.
pub const TRANSCENDENTAL_FLOPS: usize = 20;

const PROXY_NODES: usize = 513;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateConfig {
    pub n_inducing: usize,
    pub d_rff: usize,
    pub rff_lengthscale: f64,
    pub rff_variance: f64,
    pub s_train: usize,
    pub s_gp: usize,
    pub lr: f64,
    pub warm_epochs: usize,
    pub full_epochs: usize,
    pub min_epochs: usize,
    pub steps_per_epoch: usize,
    pub rel_tol: f64,
    pub nlpd_patience: usize,
    pub validation_fraction: f64,
    pub inducing_drop_tol: f64,
    pub freeze_noise_iterations: usize,
    pub noise_init: f64,
    pub kmeans_iters: usize,
    /// `false` drops layer 2 and replaces the neural mean and the noise network
    /// by learned constants.
    pub deep: bool,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            n_inducing: 40,
            d_rff: 256,
            rff_lengthscale: 2.0,
            rff_variance: 4.0,
            s_train: 8,
            s_gp: 8,
            lr: 0.01,
            warm_epochs: 10,
            full_epochs: 50,
            min_epochs: 5,
            steps_per_epoch: 4,
            rel_tol: 1e-3,
            nlpd_patience: 3,
            validation_fraction: 0.2,
            inducing_drop_tol: 0.02,
            freeze_noise_iterations: 3,
            noise_init: 0.01,
            kmeans_iters: 25,
            deep: true,
        }
    }
}

impl SurrogateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_inducing == 0 {
            return Err(Error::Config("n_inducing must be at least 1".into()));
        }
        if self.deep && (self.d_rff == 0 || self.d_rff % 2 != 0) {
            return Err(Error::Config(format!(
                "d_rff must be a positive even number; got {}",
                self.d_rff
            )));
        }
        if self.s_train == 0 || self.s_gp == 0 {
            return Err(Error::Config("s_train and s_gp must be at least 1".into()));
        }
        if !(self.lr > 0.0) || !(self.rff_lengthscale > 0.0) || !(self.rff_variance > 0.0) {
            return Err(Error::Config("surrogate lr and RFF scales must be positive".into()));
        }
        if !(self.noise_init > 0.0) {
            return Err(Error::Config("noise_init must be positive".into()));
        }
        if self.steps_per_epoch == 0 {
            return Err(Error::Config("steps_per_epoch must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    WarmBounded,
    FullRefit,
}

impl FitMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FitMode::WarmBounded => "warm",
            FitMode::FullRefit => "full",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub mode: FitMode,
    pub elbo_trace: Vec<f64>,
    pub epochs_run: usize,
    pub initial_elbo: f64,
    pub final_elbo: f64,
    pub inducing: usize,
    pub doubled: bool,
    /// Validation NLPD rose for `nlpd_patience` consecutive epochs.
    pub nlpd_degraded: bool,
    pub validation_elbo: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogatePrediction {
    pub f_hat: Vec<f64>,
    pub u_ep: Vec<f64>,
    pub u_al: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyPrediction {
    pub means: Vec<f64>,
    pub coarse_var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Rff {
    omega: Vec<f64>,
    phase: Vec<f64>,
    amp: f64,
    mu: Vec<f64>,
    log_s: Vec<f64>,
}

impl Rff {
    fn features(&self, h: f64, psi: &mut [f64], dpsi: Option<&mut [f64]>) {
        match dpsi {
            Some(d) => {
                for j in 0..self.omega.len() {
                    let t = self.omega[j] * h + self.phase[j];
                    psi[j] = self.amp * cos(t);
                    d[j] = -self.amp * self.omega[j] * sin(t);
                }
            }
            None => {
                for j in 0..self.omega.len() {
                    psi[j] = self.amp * cos(self.omega[j] * h + self.phase[j]);
                }
            }
        }
    }

    /// `(g(h), Σ s_j ψ_j(h)²)`.
    fn mean_var(&self, h: f64, psi: &mut [f64]) -> (f64, f64) {
        self.features(h, psi, None);
        let mut g = 0.0;
        let mut v = 0.0;
        for j in 0..psi.len() {
            g += self.mu[j] * psi[j];
            v += exp(self.log_s[j]) * psi[j] * psi[j];
        }
        (g, v)
    }

    fn mean_and_slope(&self, h: f64, psi: &mut [f64], dpsi: &mut [f64]) -> (f64, f64) {
        self.features(h, psi, Some(dpsi));
        let g = psi.iter().zip(&self.mu).map(|(a, b)| a * b).sum();
        let dg = dpsi.iter().zip(&self.mu).map(|(a, b)| a * b).sum();
        (g, dg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ProxyTable {
    lo: f64,
    hi: f64,
    g: Vec<f64>,
    dg: Vec<f64>,
}

impl ProxyTable {
    fn lookup(&self, h: f64) -> Option<(f64, f64)> {
        if !(h >= self.lo && h <= self.hi) {
            return None;
        }
        let n = self.g.len() - 1;
        let w = (self.hi - self.lo) / n as f64;
        let pos = (h - self.lo) / w;
        let k = (libm::floor(pos) as usize).min(n - 1);
        let t = pos - k as f64;
        let (t2, t3) = (t * t, t * t * t);
        let g = (2.0 * t3 - 3.0 * t2 + 1.0) * self.g[k]
            + (t3 - 2.0 * t2 + t) * w * self.dg[k]
            + (-2.0 * t3 + 3.0 * t2) * self.g[k + 1]
            + (t3 - t2) * w * self.dg[k + 1];
        let dg = (1.0 - t) * self.dg[k] + t * self.dg[k + 1];
        Some((g, dg))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum MeanFn {
    Net(Mlp),
    Const(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum NoiseFn {
    Net(Mlp),
    Const(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Posterior {
    chol: Matrix,
    alpha: Vec<f64>,
    proxy: Option<ProxyTable>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ObjectiveModel {
    log_ls: Vec<f64>,
    log_sf2: f64,
    z: Vec<Vec<f64>>,
    mv: Vec<f64>,
    log_sv: Vec<f64>,
    mean: MeanFn,
    rff: Option<Rff>,
    noise: NoiseFn,
    post: Option<Posterior>,
}

fn kernel(a: &[f64], b: &[f64], inv_ls2: &[f64], sf2: f64) -> f64 {
    let mut r = 0.0;
    for d in 0..a.len() {
        let t = a[d] - b[d];
        r += t * t * inv_ls2[d];
    }
    sf2 * exp(-0.5 * r)
}

struct Layer1Point {
    mu1: f64,
    s2: f64,
    clamped: bool,
    a: Vec<f64>,
    phi_cache: Option<Cache>,
    noise_cache: Option<Cache>,
    log_noise: f64,
}

impl ObjectiveModel {
    fn n_params(&self) -> usize {
        let d = self.log_ls.len();
        let mi = self.z.len();
        let mean = match &self.mean {
            MeanFn::Net(n) => n.n_params(),
            MeanFn::Const(_) => 1,
        };
        let rff = self.rff.as_ref().map(|r| 2 * r.mu.len()).unwrap_or(0);
        let noise = match &self.noise {
            NoiseFn::Net(n) => n.n_params(),
            NoiseFn::Const(_) => 1,
        };
        d + 1 + 2 * mi + mean + rff + noise
    }

    fn pack(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        p.extend_from_slice(&self.log_ls);
        p.push(self.log_sf2);
        p.extend_from_slice(&self.mv);
        p.extend_from_slice(&self.log_sv);
        match &self.mean {
            MeanFn::Net(n) => p.extend_from_slice(n.params()),
            MeanFn::Const(c) => p.push(*c),
        }
        if let Some(r) = &self.rff {
            p.extend_from_slice(&r.mu);
            p.extend_from_slice(&r.log_s);
        }
        match &self.noise {
            NoiseFn::Net(n) => p.extend_from_slice(n.params()),
            NoiseFn::Const(c) => p.push(*c),
        }
        p
    }

    fn unpack(&mut self, p: &[f64]) {
        let mut o = 0;
        let mut take = |n: usize| {
            let s = &p[o..o + n];
            o += n;
            s
        };
        let d = self.log_ls.len();
        let mi = self.z.len();
        self.log_ls.copy_from_slice(take(d));
        self.log_sf2 = take(1)[0];
        self.mv.copy_from_slice(take(mi));
        self.log_sv.copy_from_slice(take(mi));
        match &mut self.mean {
            MeanFn::Net(n) => {
                let k = n.n_params();
                n.set_params(take(k));
            }
            MeanFn::Const(c) => *c = take(1)[0],
        }
        if let Some(r) = &mut self.rff {
            let k = r.mu.len();
            r.mu.copy_from_slice(take(k));
            r.log_s.copy_from_slice(take(k));
        }
        match &mut self.noise {
            NoiseFn::Net(n) => {
                let k = n.n_params();
                n.set_params(take(k));
            }
            NoiseFn::Const(c) => *c = take(1)[0],
        }
    }

    /// Offset of the noise parameters inside the packed vector.
    fn noise_offset(&self) -> usize {
        let noise = match &self.noise {
            NoiseFn::Net(n) => n.n_params(),
            NoiseFn::Const(_) => 1,
        };
        self.n_params() - noise
    }

    fn kzz(&self) -> Matrix {
        let mi = self.z.len();
        let inv_ls2: Vec<f64> = self.log_ls.iter().map(|l| exp(-2.0 * l)).collect();
        let sf2 = exp(self.log_sf2);
        let mut k = Matrix::zeros(mi, mi);
        for i in 0..mi {
            for j in 0..=i {
                let v = kernel(&self.z[i], &self.z[j], &inv_ls2, sf2);
                k.set(i, j, v);
                k.set(j, i, v);
            }
        }
        k
    }

    fn cholesky(&self) -> Result<Matrix> {
        cholesky_jittered(&self.kzz(), 1e-8, 1e-4).map(|(l, _)| l)
    }

    fn layer1(&self, x: &[f64], chol: &Matrix, with_cache: bool) -> Result<Layer1Point> {
        let inv_ls2: Vec<f64> = self.log_ls.iter().map(|l| exp(-2.0 * l)).collect();
        let sf2 = exp(self.log_sf2);
        let k: Vec<f64> = self.z.iter().map(|z| kernel(z, x, &inv_ls2, sf2)).collect();
        let a = solve_lower(chol, &k);
        let (m, phi_cache) = match &self.mean {
            MeanFn::Net(net) => {
                if with_cache {
                    let (out, cache) = net.forward(x, None)?;
                    (out[0], Some(cache))
                } else {
                    (net.predict(x, None)?[0], None)
                }
            }
            MeanFn::Const(c) => (*c, None),
        };
        let mut mu1 = m;
        let mut s2 = sf2;
        for j in 0..a.len() {
            mu1 += a[j] * self.mv[j];
            s2 += a[j] * a[j] * (exp(self.log_sv[j]) - 1.0);
        }
        let clamped = s2 < 1e-10;
        if clamped {
            s2 = 1e-10;
        }
        let (log_noise, noise_cache) = match (&self.noise, &self.mean) {
            (NoiseFn::Net(nn), MeanFn::Net(net)) => {
                let phi = match &phi_cache {
                    Some(c) => c.last_hidden().to_vec(),
                    None => hidden_features(net, x)?,
                };
                if with_cache {
                    let (out, c) = nn.forward(&phi, None)?;
                    (out[0], Some(c))
                } else {
                    (nn.predict(&phi, None)?[0], None)
                }
            }
            (NoiseFn::Const(c), _) => (*c, None),
            (NoiseFn::Net(_), MeanFn::Const(_)) => {
                return Err(Error::Internal("noise network needs mean-net features".into()))
            }
        };
        Ok(Layer1Point {
            mu1,
            s2,
            clamped,
            a,
            phi_cache,
            noise_cache,
            log_noise,
        })
    }

    /// ELBO of this objective and its gradient in packed order.
    fn elbo_grad(
        &self,
        xs: &[Vec<f64>],
        ys: &[f64],
        eps: &[f64],
        want_grad: bool,
    ) -> Result<(f64, Vec<f64>)> {
        let d = self.log_ls.len();
        let mi = self.z.len();
        let n = xs.len();
        let chol = self.cholesky()?;
        let sf2 = exp(self.log_sf2);
        let sv: Vec<f64> = self.log_sv.iter().map(|v| exp(*v)).collect();
        let mut grad = if want_grad { vec![0.0; self.n_params()] } else { Vec::new() };
        let o_mv = d + 1;
        let o_sv = o_mv + mi;
        let o_mean = o_sv + mi;
        let n_mean = match &self.mean {
            MeanFn::Net(net) => net.n_params(),
            MeanFn::Const(_) => 1,
        };
        let o_rff = o_mean + n_mean;
        let d_rff = self.rff.as_ref().map(|r| r.mu.len()).unwrap_or(0);
        let o_noise = self.noise_offset();
        let mut abar = vec![0.0; mi * n];
        let mut elbo = 0.0;
        let s = eps.len() as f64;
        let mut psi = vec![0.0; d_rff];
        let mut dpsi = vec![0.0; d_rff];
        let s_beta: Vec<f64> = self
            .rff
            .as_ref()
            .map(|r| r.log_s.iter().map(|v| exp(*v)).collect())
            .unwrap_or_default();
        for i in 0..n {
            let p = self.layer1(&xs[i], &chol, want_grad)?;
            let inv_noise = exp(-p.log_noise);
            let y = ys[i];
            let (ell, d_mu, d_s2, d_ln) = match &self.rff {
                Some(rff) => {
                    let sigma = sqrt(p.s2);
                    let mut ell = 0.0;
                    let mut d_mu = 0.0;
                    let mut d_s2 = 0.0;
                    let mut d_ln = 0.0;
                    for &e in eps {
                        let h = p.mu1 + sigma * e;
                        rff.features(h, &mut psi, Some(&mut dpsi));
                        let mut g = 0.0;
                        let mut dg = 0.0;
                        let mut vw = 0.0;
                        let mut dvw = 0.0;
                        for j in 0..d_rff {
                            g += rff.mu[j] * psi[j];
                            dg += rff.mu[j] * dpsi[j];
                            vw += s_beta[j] * psi[j] * psi[j];
                            dvw += 2.0 * s_beta[j] * psi[j] * dpsi[j];
                        }
                        let r = y - g;
                        let sq = r * r + vw;
                        ell += -0.5 * LN_2PI - 0.5 * p.log_noise - 0.5 * sq * inv_noise;
                        if want_grad {
                            let dh = (r * dg - 0.5 * dvw) * inv_noise;
                            d_mu += dh;
                            d_s2 += dh * e / (2.0 * sigma);
                            d_ln += -0.5 + 0.5 * sq * inv_noise;
                            let cm = r * inv_noise / s;
                            let cs = -0.5 * inv_noise / s;
                            for j in 0..d_rff {
                                grad[o_rff + j] += cm * psi[j];
                                grad[o_rff + d_rff + j] += cs * psi[j] * psi[j] * s_beta[j];
                            }
                        }
                    }
                    (ell / s, d_mu / s, d_s2 / s, d_ln / s)
                }
                None => {
                    let r = y - p.mu1;
                    let sq = r * r + p.s2;
                    (
                        -0.5 * LN_2PI - 0.5 * p.log_noise - 0.5 * sq * inv_noise,
                        r * inv_noise,
                        -0.5 * inv_noise,
                        -0.5 + 0.5 * sq * inv_noise,
                    )
                }
            };
            elbo += ell;
            if !want_grad {
                continue;
            }
            let d_s2 = if p.clamped { 0.0 } else { d_s2 };
            for j in 0..mi {
                let a = p.a[j];
                abar[j * n + i] = d_mu * self.mv[j] + d_s2 * 2.0 * a * (sv[j] - 1.0);
                grad[o_mv + j] += d_mu * a;
                grad[o_sv + j] += d_s2 * a * a * sv[j];
            }
            grad[d] += d_s2 * sf2;
            // noise path, then mean path (which also receives ∂/∂φ)
            let mut d_phi: Option<Vec<f64>> = None;
            match &self.noise {
                NoiseFn::Net(nn) => {
                    let cache = p.noise_cache.as_ref().unwrap();
                    let g = &mut grad[o_noise..];
                    d_phi = Some(nn.backward_into(cache, &[d_ln], None, g)?);
                }
                NoiseFn::Const(_) => grad[o_noise] += d_ln,
            }
            match &self.mean {
                MeanFn::Net(net) => {
                    let cache = p.phi_cache.as_ref().unwrap();
                    let g = &mut grad[o_mean..o_mean + n_mean];
                    net.backward_into(cache, &[d_mu], d_phi.as_deref(), g)?;
                }
                MeanFn::Const(_) => grad[o_mean] += d_mu,
            }
        }
        // KL terms
        let mut kl = 0.0;
        for j in 0..mi {
            kl += 0.5 * (sv[j] + self.mv[j] * self.mv[j] - 1.0 - self.log_sv[j]);
            if want_grad {
                grad[o_mv + j] -= self.mv[j];
                grad[o_sv + j] -= 0.5 * (sv[j] - 1.0);
            }
        }
        if let Some(rff) = &self.rff {
            for j in 0..d_rff {
                kl += 0.5 * (s_beta[j] + rff.mu[j] * rff.mu[j] - 1.0 - rff.log_s[j]);
                if want_grad {
                    grad[o_rff + j] -= rff.mu[j];
                    grad[o_rff + d_rff + j] -= 0.5 * (s_beta[j] - 1.0);
                }
            }
        }
        elbo -= kl;
        if !want_grad {
            return Ok((elbo, grad));
        }
        self.kernel_backward(xs, &chol, &abar, &mut grad)?;
        Ok((elbo, grad))
    }

    /// Chain rule from `∂/∂A` (`A = L⁻¹ K_ZX`, column-major by point in
    /// `abar[j·n + i]`) to the kernel hyperparameters.
    fn kernel_backward(
        &self,
        xs: &[Vec<f64>],
        chol: &Matrix,
        abar: &[f64],
        grad: &mut [f64],
    ) -> Result<()> {
        let d = self.log_ls.len();
        let mi = self.z.len();
        let n = xs.len();
        let inv_ls2: Vec<f64> = self.log_ls.iter().map(|l| exp(-2.0 * l)).collect();
        let sf2 = exp(self.log_sf2);
        // K̄_ZX = L⁻ᵀ Ā and A itself, column by column
        let mut kbar = vec![0.0; mi * n];
        let mut amat = vec![0.0; mi * n];
        let mut kzx = vec![0.0; mi * n];
        for i in 0..n {
            let col: Vec<f64> = (0..mi).map(|j| abar[j * n + i]).collect();
            let kb = solve_lower_transpose(chol, &col);
            let k: Vec<f64> = self.z.iter().map(|z| kernel(z, &xs[i], &inv_ls2, sf2)).collect();
            let a = solve_lower(chol, &k);
            for j in 0..mi {
                kbar[j * n + i] = kb[j];
                amat[j * n + i] = a[j];
                kzx[j * n + i] = k[j];
            }
        }
        // L̄ = −K̄_ZX Aᵀ (lower part used)
        let mut lbar = Matrix::zeros(mi, mi);
        for r in 0..mi {
            for c in 0..=r {
                let mut s = 0.0;
                for i in 0..n {
                    s += kbar[r * n + i] * amat[c * n + i];
                }
                lbar.set(r, c, -s);
            }
        }
        // Σ̄ = L⁻ᵀ sym(Φ(Lᵀ L̄)) L⁻¹
        let p = chol.transpose().matmul(&lbar);
        let mut phi = Matrix::zeros(mi, mi);
        for r in 0..mi {
            for c in 0..=r {
                let v = if r == c { 0.5 * p.get(r, c) } else { p.get(r, c) };
                phi.add(r, c, 0.5 * v);
                phi.add(c, r, 0.5 * v);
            }
        }
        let linv = lower_inverse(chol);
        let sbar = linv.transpose().matmul(&phi).matmul(&linv);
        // hyperparameter gradients
        for r in 0..mi {
            for c in 0..mi {
                let kv = kernel(&self.z[r], &self.z[c], &inv_ls2, sf2);
                let w = sbar.get(r, c) * kv;
                grad[d] += w;
                for q in 0..d {
                    let t = self.z[r][q] - self.z[c][q];
                    grad[q] += w * t * t * inv_ls2[q];
                }
            }
        }
        for j in 0..mi {
            for i in 0..n {
                let w = kbar[j * n + i] * kzx[j * n + i];
                grad[d] += w;
                for q in 0..d {
                    let t = self.z[j][q] - xs[i][q];
                    grad[q] += w * t * t * inv_ls2[q];
                }
            }
        }
        Ok(())
    }

    fn refresh(&mut self, xs: &[Vec<f64>]) -> Result<()> {
        let chol = self.cholesky()?;
        let alpha = solve_lower_transpose(&chol, &self.mv);
        let proxy = match &self.rff {
            Some(rff) => {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                let mut smax: f64 = 0.0;
                for x in xs {
                    let p = self.layer1(x, &chol, false)?;
                    lo = lo.min(p.mu1);
                    hi = hi.max(p.mu1);
                    smax = smax.max(sqrt(p.s2));
                }
                let pad = 4.0 * smax.max(sqrt(exp(self.log_sf2))) + 1.0;
                let (lo, hi) = (lo - pad, hi + pad);
                let mut psi = vec![0.0; rff.mu.len()];
                let mut dpsi = vec![0.0; rff.mu.len()];
                let mut g = Vec::with_capacity(PROXY_NODES);
                let mut dg = Vec::with_capacity(PROXY_NODES);
                for k in 0..PROXY_NODES {
                    let h = lo + (hi - lo) * k as f64 / (PROXY_NODES - 1) as f64;
                    let (a, b) = rff.mean_and_slope(h, &mut psi, &mut dpsi);
                    g.push(a);
                    dg.push(b);
                }
                Some(ProxyTable { lo, hi, g, dg })
            }
            None => None,
        };
        self.post = Some(Posterior { chol, alpha, proxy });
        Ok(())
    }

    /// Predictive triple in standardized units.
    fn predict(&self, x: &[f64], eps: &[f64]) -> Result<(f64, f64, f64)> {
        let post = self.post.as_ref().ok_or_else(|| Error::State("surrogate not fitted".into()))?;
        let p = self.layer1(x, &post.chol, false)?;
        let u_al = exp(p.log_noise);
        match &self.rff {
            Some(rff) => {
                let sigma = sqrt(p.s2);
                let mut psi = vec![0.0; rff.mu.len()];
                let s = eps.len() as f64;
                let mut gs = Vec::with_capacity(eps.len());
                let mut vw = 0.0;
                for &e in eps {
                    let (g, v) = rff.mean_var(p.mu1 + sigma * e, &mut psi);
                    gs.push(g);
                    vw += v / s;
                }
                let mean = gs.iter().sum::<f64>() / s;
                let var = gs.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / s;
                Ok((mean, var + vw, u_al))
            }
            None => Ok((p.mu1, p.s2, u_al)),
        }
    }

    /// Layer-1 mean pushed through the tabulated layer-2 mean, and the
    /// first-order variance `g'(μ₁)² σ₁²`.
    fn proxy(&self, x: &[f64]) -> Result<(f64, f64)> {
        let post = self.post.as_ref().ok_or_else(|| Error::State("surrogate not fitted".into()))?;
        let inv_ls2: Vec<f64> = self.log_ls.iter().map(|l| exp(-2.0 * l)).collect();
        let sf2 = exp(self.log_sf2);
        let k: Vec<f64> = self.z.iter().map(|z| kernel(z, x, &inv_ls2, sf2)).collect();
        let m = match &self.mean {
            MeanFn::Net(net) => net.predict(x, None)?[0],
            MeanFn::Const(c) => *c,
        };
        let mu1 = m + k.iter().zip(&post.alpha).map(|(a, b)| a * b).sum::<f64>();
        let a = solve_lower(&post.chol, &k);
        let mut s2 = sf2;
        for j in 0..a.len() {
            s2 += a[j] * a[j] * (exp(self.log_sv[j]) - 1.0);
        }
        let s2 = s2.max(1e-10);
        match (&self.rff, &post.proxy) {
            (Some(rff), Some(table)) => {
                let (g, dg) = match table.lookup(mu1) {
                    Some(v) => v,
                    None => {
                        let mut psi = vec![0.0; rff.mu.len()];
                        let mut dpsi = vec![0.0; rff.mu.len()];
                        rff.mean_and_slope(mu1, &mut psi, &mut dpsi)
                    }
                };
                Ok((g, dg * dg * s2))
            }
            _ => Ok((mu1, s2)),
        }
    }

    fn predict_flops(&self, s_gp: usize) -> usize {
        let t = TRANSCENDENTAL_FLOPS;
        let d = self.log_ls.len();
        let mi = self.z.len();
        let mut f = mi * (3 * d + 1 + t) + mi * mi + 6 * mi;
        if let MeanFn::Net(n) = &self.mean {
            f += n.forward_flops();
        }
        if let NoiseFn::Net(n) = &self.noise {
            f += n.forward_flops() + t;
        }
        if let Some(r) = &self.rff {
            f += s_gp * (r.mu.len() * (7 + t) + 4) + 3 * s_gp;
        }
        f
    }

    fn proxy_flops(&self) -> usize {
        let t = TRANSCENDENTAL_FLOPS;
        let d = self.log_ls.len();
        let mi = self.z.len();
        let mut f = mi * (3 * d + 1 + t) + 2 * mi + mi * mi + 4 * mi;
        if let MeanFn::Net(n) = &self.mean {
            f += n.forward_flops();
        }
        if self.rff.is_some() {
            f += 30;
        }
        f
    }
}

fn hidden_features(net: &Mlp, x: &[f64]) -> Result<Vec<f64>> {
    let (_, cache) = net.forward(x, None)?;
    Ok(cache.last_hidden().to_vec())
}

/// k-means++ seeding followed by Lloyd iterations. With `k ≥ n` the points
/// themselves are returned.
pub fn kmeans<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, iters: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = points.len();
    if k >= n {
        return points.to_vec();
    }
    let mut centers = vec![points[rng.gen_range(0..n)].clone()];
    let mut dist: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let idx = if total > 0.0 {
            let mut t = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, d) in dist.iter().enumerate() {
                if t < *d {
                    pick = i;
                    break;
                }
                t -= d;
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        centers.push(points[idx].clone());
        for (i, p) in points.iter().enumerate() {
            dist[i] = dist[i].min(sq_dist(p, &centers[centers.len() - 1]));
        }
    }
    let dim = points[0].len();
    let mut assign = vec![usize::MAX; n];
    for _ in 0..iters {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = (f64::INFINITY, 0);
            for (c, ctr) in centers.iter().enumerate() {
                let d = sq_dist(p, ctr);
                if d < best.0 {
                    best = (d, c);
                }
            }
            if assign[i] != best.1 {
                assign[i] = best.1;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            counts[assign[i]] += 1;
            for (s, v) in sums[assign[i]].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    centers
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateModel {
    pub cfg: SurrogateConfig,
    lower: Vec<f64>,
    upper: Vec<f64>,
    pub y_mean: Vec<f64>,
    pub y_std: Vec<f64>,
    objectives: Vec<ObjectiveModel>,
    #[serde(skip)]
    adam: Option<Adam>,
    fitted: bool,
    /// Mean per-point validation ELBO at the end of the previous fit; the
    /// inducing-count doubling rule compares against it.
    pub last_validation_elbo: Option<f64>,
}

struct TrainingSet {
    x: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    n_val: usize,
}

impl SurrogateModel {
    pub fn init<R: Rng + ?Sized>(
        cfg: &SurrogateConfig,
        lower: &[f64],
        upper: &[f64],
        archive: &Archive,
        rng: &mut R,
    ) -> Result<SurrogateModel> {
        cfg.validate()?;
        if archive.len() < 2 {
            return Err(Error::State(format!(
                "surrogate needs at least 2 archive samples; got {}",
                archive.len()
            )));
        }
        let ys = archive.objectives();
        let m = ys[0].len();
        let mut y_mean = vec![0.0; m];
        let mut y_std = vec![1.0; m];
        for j in 0..m {
            let col: Vec<f64> = ys.iter().map(|y| y[j]).collect();
            y_mean[j] = crate::math::mean(&col);
            let s = crate::math::std_dev(&col);
            y_std[j] = if s > 1e-12 { s } else { 1.0 };
        }
        let mut model = SurrogateModel {
            cfg: cfg.clone(),
            lower: lower.to_vec(),
            upper: upper.to_vec(),
            y_mean,
            y_std,
            objectives: Vec::new(),
            adam: None,
            fitted: false,
            last_validation_elbo: None,
        };
        let data = model.training_set(archive);
        let d = lower.len();
        let mut pair_d = Vec::new();
        let step = (data.x.len() / 60).max(1);
        for i in (0..data.x.len()).step_by(step) {
            for j in (i + 1..data.x.len()).step_by(step) {
                pair_d.push(sqrt(sq_dist(&data.x[i], &data.x[j])));
            }
        }
        let ls0 = 0.5 * median(&pair_d).filter(|v| *v > 1e-6).unwrap_or(1.0);
        let z = kmeans(&data.x, cfg.n_inducing, cfg.kmeans_iters, rng);
        for _ in 0..m {
            let (mean, noise) = if cfg.deep {
                let mut net = Mlp::plain(&[d, 32, 16, 1])?;
                net.init_glorot(rng);
                let mut nn = Mlp::plain(&[16, 16, 1])?;
                nn.init_glorot(rng);
                let (_, b_off) = nn.layer_offsets(1);
                nn.params_mut()[b_off] = log(cfg.noise_init);
                (MeanFn::Net(net), NoiseFn::Net(nn))
            } else {
                (MeanFn::Const(0.0), NoiseFn::Const(log(cfg.noise_init)))
            };
            let rff = if cfg.deep {
                let omega: Vec<f64> = (0..cfg.d_rff)
                    .map(|_| standard_normal(rng) / cfg.rff_lengthscale)
                    .collect();
                let phase: Vec<f64> = (0..cfg.d_rff).map(|_| rng.gen::<f64>() * 2.0 * PI).collect();
                Some(Rff {
                    omega,
                    phase,
                    amp: sqrt(2.0 * cfg.rff_variance / cfg.d_rff as f64),
                    mu: vec![0.0; cfg.d_rff],
                    log_s: vec![0.0; cfg.d_rff],
                })
            } else {
                None
            };
            model.objectives.push(ObjectiveModel {
                log_ls: vec![log(ls0); d],
                log_sf2: 0.0,
                z: z.clone(),
                mv: vec![0.0; z.len()],
                log_sv: vec![0.0; z.len()],
                mean,
                rff,
                noise,
                post: None,
            });
        }
        for obj in model.objectives.iter_mut() {
            if let Some(rff) = &mut obj.rff {
                init_identity(rff)?;
            }
        }
        for (j, obj) in model.objectives.iter_mut().enumerate() {
            closed_form_q(obj, &data.x, &data.y[j], cfg.noise_init)?;
        }
        Ok(model)
    }

    pub fn n_obj(&self) -> usize {
        self.objectives.len()
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted
    }

    pub fn inducing_count(&self) -> usize {
        self.objectives.first().map(|o| o.z.len()).unwrap_or(0)
    }

    /// ARD lengthscales and signal variance of layer 1 for one objective.
    pub fn kernel_hyperparameters(&self, objective: usize) -> (Vec<f64>, f64) {
        let o = &self.objectives[objective];
        (o.log_ls.iter().map(|v| exp(*v)).collect(), exp(o.log_sf2))
    }

    pub fn inducing_points(&self, objective: usize) -> &[Vec<f64>] {
        &self.objectives[objective].z
    }

    pub fn standardize(&self, f: &[f64]) -> Vec<f64> {
        f.iter()
            .enumerate()
            .map(|(j, v)| (v - self.y_mean[j]) / self.y_std[j])
            .collect()
    }

    pub fn destandardize(&self, f: &[f64]) -> Vec<f64> {
        f.iter()
            .enumerate()
            .map(|(j, v)| v * self.y_std[j] + self.y_mean[j])
            .collect()
    }

    fn scale(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, v)| (v - self.lower[i]) / (self.upper[i] - self.lower[i]))
            .collect()
    }

    fn training_set(&self, archive: &Archive) -> TrainingSet {
        let x: Vec<Vec<f64>> = archive.samples().iter().map(|s| self.scale(&s.x)).collect();
        let m = self.y_mean.len();
        let mut y = vec![Vec::with_capacity(x.len()); m];
        for s in archive.samples() {
            let f = self.standardize(&s.f);
            for j in 0..m {
                y[j].push(f[j]);
            }
        }
        let n = x.len();
        let n_val = if n >= 5 {
            (libm::ceil(n as f64 * self.cfg.validation_fraction) as usize).clamp(1, n - 1)
        } else {
            0
        };
        TrainingSet { x, y, n_val }
    }

    fn pack(&self) -> Vec<f64> {
        self.objectives.iter().flat_map(|o| o.pack()).collect()
    }

    fn unpack(&mut self, p: &[f64]) {
        let mut o = 0;
        for obj in self.objectives.iter_mut() {
            let n = obj.n_params();
            obj.unpack(&p[o..o + n]);
            o += n;
        }
    }

    fn total_elbo(&self, data: &TrainingSet, eps: &[f64], want_grad: bool) -> Result<(f64, Vec<f64>)> {
        let mut total = 0.0;
        let mut grad = Vec::new();
        for (j, obj) in self.objectives.iter().enumerate() {
            let (e, g) = obj.elbo_grad(&data.x, &data.y[j], eps, want_grad)?;
            total += e;
            grad.extend(g);
        }
        Ok((total, grad))
    }

    /// Mean per-point expected log-likelihood on the validation tail (KL
    /// excluded), averaged over objectives.
    fn validation_elbo(&self, data: &TrainingSet, eps: &[f64]) -> Result<f64> {
        if data.n_val == 0 {
            return Ok(0.0);
        }
        let start = data.x.len() - data.n_val;
        let xs = &data.x[start..];
        let mut total = 0.0;
        for (j, obj) in self.objectives.iter().enumerate() {
            let (e, _) = obj.elbo_grad(xs, &data.y[j][start..], eps, false)?;
            let kl = kl_total(obj);
            total += (e + kl) / xs.len() as f64;
        }
        Ok(total / self.objectives.len() as f64)
    }

    fn validation_nlpd(&self, data: &TrainingSet, eps: &[f64]) -> Result<f64> {
        if data.n_val == 0 {
            return Ok(0.0);
        }
        let start = data.x.len() - data.n_val;
        let mut total = 0.0;
        for (j, obj) in self.objectives.iter().enumerate() {
            let chol = obj.cholesky()?;
            let mut o = obj.clone();
            o.post = Some(Posterior {
                alpha: solve_lower_transpose(&chol, &obj.mv),
                chol,
                proxy: None,
            });
            for i in start..data.x.len() {
                let (mu, ue, ua) = o.predict(&data.x[i], eps)?;
                let v = (ue + ua).max(1e-300);
                let r = data.y[j][i] - mu;
                total += 0.5 * LN_2PI + 0.5 * log(v) + 0.5 * r * r / v;
            }
        }
        Ok(total / (data.n_val * self.objectives.len()) as f64)
    }

    /// ELBO summed over objectives on the archive, in standardized units.
    pub fn elbo(&self, archive: &Archive) -> Result<f64> {
        let data = self.training_set(archive);
        let eps = normal_quantile_nodes(self.cfg.s_train);
        Ok(self.total_elbo(&data, &eps, false)?.0)
    }

    /// Packed parameters and ELBO gradient, exposed for gradient checks.
    pub fn elbo_and_gradient(&self, archive: &Archive) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let data = self.training_set(archive);
        let eps = normal_quantile_nodes(self.cfg.s_train);
        let (e, g) = self.total_elbo(&data, &eps, true)?;
        Ok((e, self.pack(), g))
    }

    /// Sets packed parameters (gradient checks only).
    pub fn set_packed(&mut self, p: &[f64]) {
        self.unpack(p);
    }

    pub fn fit<R: Rng + ?Sized>(
        &mut self,
        archive: &Archive,
        mode: FitMode,
        train_noise: bool,
        rng: &mut R,
    ) -> Result<FitReport> {
        let data = self.training_set(archive);
        let eps = normal_quantile_nodes(self.cfg.s_train);
        let n = data.x.len();
        let mut doubled = false;
        if let Some(prev) = self.last_validation_elbo {
            let now = self.validation_elbo(&data, &eps)?;
            if now < prev - self.cfg.inducing_drop_tol * prev.abs() && self.inducing_count() < n {
                let k = (2 * self.inducing_count()).min(n);
                let z = kmeans(&data.x, k, self.cfg.kmeans_iters, rng);
                for (j, obj) in self.objectives.iter_mut().enumerate() {
                    obj.z = z.clone();
                    obj.mv = vec![0.0; z.len()];
                    obj.log_sv = vec![0.0; z.len()];
                    let noise = match &obj.noise {
                        NoiseFn::Const(c) => exp(*c),
                        NoiseFn::Net(_) => self.cfg.noise_init,
                    };
                    closed_form_q(obj, &data.x, &data.y[j], noise)?;
                }
                self.adam = None;
                doubled = true;
            }
        }
        let max_epochs = match mode {
            FitMode::WarmBounded => self.cfg.warm_epochs,
            FitMode::FullRefit => self.cfg.full_epochs,
        };
        let mut params = self.pack();
        let n_params = params.len();
        let mut adam = self
            .adam
            .take()
            .filter(|a| a.len() == n_params)
            .unwrap_or_else(|| Adam::new(n_params, self.cfg.lr));
        let frozen: Vec<(usize, usize)> = if train_noise {
            Vec::new()
        } else {
            let mut off = 0;
            let mut v = Vec::new();
            for obj in &self.objectives {
                v.push((off + obj.noise_offset(), off + obj.n_params()));
                off += obj.n_params();
            }
            v
        };
        let (initial, _) = self.total_elbo(&data, &eps, false)?;
        if !initial.is_finite() {
            return Err(Error::Numeric("initial ELBO is not finite".into()));
        }
        let mut best = (initial, params.clone());
        let mut trace = Vec::new();
        let mut prev_epoch = initial;
        let mut nlpd_prev = self.validation_nlpd(&data, &eps)?;
        let mut rising = 0;
        let mut nlpd_degraded = false;
        for epoch in 0..max_epochs {
            let mut current = prev_epoch;
            for _ in 0..self.cfg.steps_per_epoch {
                let (e, g) = self.total_elbo(&data, &eps, true)?;
                if !e.is_finite() || g.iter().any(|v| !v.is_finite()) {
                    break;
                }
                if e > best.0 {
                    best = (e, params.clone());
                }
                let mut neg: Vec<f64> = g.iter().map(|v| -v).collect();
                for &(a, b) in &frozen {
                    neg[a..b].iter_mut().for_each(|v| *v = 0.0);
                }
                adam.update(&mut params, &neg)?;
                self.unpack(&params);
                current = e;
            }
            let (e, _) = match self.total_elbo(&data, &eps, false) {
                Ok(v) => v,
                Err(_) => (f64::NEG_INFINITY, Vec::new()),
            };
            if e.is_finite() {
                current = e;
                if e > best.0 {
                    best = (e, params.clone());
                }
            }
            trace.push(current);
            let nlpd = self.validation_nlpd(&data, &eps).unwrap_or(f64::INFINITY);
            if nlpd > nlpd_prev {
                rising += 1;
            } else {
                rising = 0;
            }
            nlpd_prev = nlpd;
            if rising >= self.cfg.nlpd_patience {
                nlpd_degraded = true;
            }
            let improvement = (current - prev_epoch) / prev_epoch.abs().max(1e-12);
            prev_epoch = current;
            if mode == FitMode::FullRefit
                && epoch + 1 >= self.cfg.min_epochs
                && (improvement < self.cfg.rel_tol || nlpd_degraded)
            {
                break;
            }
        }
        self.unpack(&best.1);
        self.adam = Some(adam);
        for obj in self.objectives.iter_mut() {
            obj.refresh(&data.x)?;
        }
        let val = self.validation_elbo(&data, &eps)?;
        self.last_validation_elbo = if data.n_val > 0 { Some(val) } else { None };
        self.fitted = true;
        Ok(FitReport {
            mode,
            epochs_run: trace.len(),
            elbo_trace: trace,
            initial_elbo: initial,
            final_elbo: best.0,
            inducing: self.inducing_count(),
            doubled,
            nlpd_degraded,
            validation_elbo: val,
        })
    }

    fn check_ready(&self, x: &[f64]) -> Result<()> {
        if !self.fitted {
            return Err(Error::State("surrogate used before fitting".into()));
        }
        if x.len() != self.lower.len() {
            return Err(Error::Domain(format!(
                "decision vector has length {}, surrogate expects {}",
                x.len(),
                self.lower.len()
            )));
        }
        Ok(())
    }

    pub fn predict(&self, x: &[f64], s_gp: usize) -> Result<SurrogatePrediction> {
        self.check_ready(x)?;
        let xs = self.scale(x);
        let eps = normal_quantile_nodes(s_gp.max(1));
        let m = self.objectives.len();
        let mut out = SurrogatePrediction {
            f_hat: vec![0.0; m],
            u_ep: vec![0.0; m],
            u_al: vec![0.0; m],
        };
        for (j, obj) in self.objectives.iter().enumerate() {
            let (mu, ue, ua) = obj.predict(&xs, &eps)?;
            let s2 = self.y_std[j] * self.y_std[j];
            out.f_hat[j] = mu * self.y_std[j] + self.y_mean[j];
            out.u_ep[j] = ue.max(0.0) * s2;
            out.u_al[j] = ua * s2;
        }
        Ok(out)
    }

    /// Cheap screening pass; `coarse_var` sums the per-objective first-order
    /// variances.
    pub fn proxy_predict(&self, x: &[f64]) -> Result<ProxyPrediction> {
        self.check_ready(x)?;
        let xs = self.scale(x);
        let mut means = Vec::with_capacity(self.objectives.len());
        let mut coarse = 0.0;
        for (j, obj) in self.objectives.iter().enumerate() {
            let (mu, v) = obj.proxy(&xs)?;
            means.push(mu * self.y_std[j] + self.y_mean[j]);
            coarse += v * self.y_std[j] * self.y_std[j];
        }
        Ok(ProxyPrediction {
            means,
            coarse_var: coarse,
        })
    }

    pub fn predict_flops(&self, s_gp: usize) -> usize {
        self.objectives.iter().map(|o| o.predict_flops(s_gp)).sum()
    }

    pub fn proxy_flops(&self) -> usize {
        self.objectives.iter().map(|o| o.proxy_flops()).sum()
    }

    /// Mean Gaussian negative log predictive density on the original scale,
    /// averaged over points and objectives.
    pub fn nlpd(&self, holdout: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
        if holdout.is_empty() {
            return Err(Error::Domain("NLPD needs a nonempty holdout".into()));
        }
        let mut total = 0.0;
        for (x, f) in holdout {
            let p = self.predict(x, self.cfg.s_gp)?;
            total += gaussian_nlpd(f, &p);
        }
        Ok(total / holdout.len() as f64)
    }
}

/// Per-point Gaussian NLPD averaged over objectives.
pub fn gaussian_nlpd(f: &[f64], p: &SurrogatePrediction) -> f64 {
    let m = f.len();
    (0..m)
        .map(|j| {
            let v = (p.u_ep[j] + p.u_al[j]).max(1e-300);
            let r = f[j] - p.f_hat[j];
            0.5 * LN_2PI + 0.5 * log(v) + 0.5 * r * r / v
        })
        .sum::<f64>()
        / m as f64
}

/// Variational KL of the inducing posterior (plus the layer-2 weights).
fn kl_total(obj: &ObjectiveModel) -> f64 {
    let mut kl = kl_diag(&obj.mv, &obj.log_sv);
    if let Some(r) = &obj.rff {
        kl += kl_diag(&r.mu, &r.log_s);
    }
    kl
}

/// `KL(N(m, diag s) ‖ N(0, I))` with `s = exp(log_s)`.
pub fn kl_diag(m: &[f64], log_s: &[f64]) -> f64 {
    m.iter()
        .zip(log_s)
        .map(|(mu, ls)| 0.5 * (exp(*ls) + mu * mu - 1.0 - ls))
        .sum()
}

/// Ridge fit of the layer-2 weights to the identity map on `[−4, 4]`, with
/// a small weight variance.
fn init_identity(rff: &mut Rff) -> Result<()> {
    let d = rff.mu.len();
    let grid: Vec<f64> = (0..201).map(|i| -4.0 + 8.0 * i as f64 / 200.0).collect();
    let mut gram = Matrix::zeros(d, d);
    let mut rhs = vec![0.0; d];
    let mut psi = vec![0.0; d];
    for &h in &grid {
        rff.features(h, &mut psi, None);
        for a in 0..d {
            rhs[a] += psi[a] * h;
            for b in 0..=a {
                gram.add(a, b, psi[a] * psi[b]);
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            let v = gram.get(a, b);
            gram.set(b, a, v);
        }
        gram.add(a, a, 1e-3);
    }
    rff.mu = solve_spd(&gram, &rhs)?;
    rff.log_s = vec![log(1e-4); d];
    Ok(())
}

/// Mean-field optimum of `q(v)` for a Gaussian likelihood with variance
/// `noise` on the residual after the mean function.
fn closed_form_q(obj: &mut ObjectiveModel, xs: &[Vec<f64>], ys: &[f64], noise: f64) -> Result<()> {
    let chol = obj.cholesky()?;
    let mi = obj.z.len();
    let inv_ls2: Vec<f64> = obj.log_ls.iter().map(|l| exp(-2.0 * l)).collect();
    let sf2 = exp(obj.log_sf2);
    let mut lam = Matrix::zeros(mi, mi);
    let mut rhs = vec![0.0; mi];
    for (x, y) in xs.iter().zip(ys) {
        let k: Vec<f64> = obj.z.iter().map(|z| kernel(z, x, &inv_ls2, sf2)).collect();
        let a = solve_lower(&chol, &k);
        let m = match &obj.mean {
            MeanFn::Net(net) => net.predict(x, None)?[0],
            MeanFn::Const(c) => *c,
        };
        for r in 0..mi {
            rhs[r] += a[r] * (y - m) / noise;
            for c in 0..=r {
                lam.add(r, c, a[r] * a[c] / noise);
            }
        }
    }
    for r in 0..mi {
        for c in 0..r {
            let v = lam.get(r, c);
            lam.set(c, r, v);
        }
        lam.add(r, r, 1.0);
    }
    obj.mv = solve_spd(&lam, &rhs)?;
    obj.log_sv = (0..mi).map(|j| -log(lam.get(j, j))).collect();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn toy_archive(n: usize) -> Archive {
        let mut a = Archive::new();
        a.push_evaluated(
            (0..n)
                .map(|i| {
                    let x = i as f64 / (n - 1) as f64;
                    (vec![x], vec![2.0 * x + 1.0])
                })
                .collect(),
        )
        .unwrap();
        a
    }

    #[test]
    fn kl_hand_formula() {
        assert_eq!(kl_diag(&[0.0], &[0.0]), 0.0);
        let v = kl_diag(&[1.0, -2.0], &[log(0.5), log(2.0)]);
        let hand = 0.5 * (0.5 + 1.0 - 1.0 - log(0.5)) + 0.5 * (2.0 + 4.0 - 1.0 - log(2.0));
        assert!((v - hand).abs() < 1e-12);
        assert!(kl_diag(&[0.3, 0.0], &[-3.0, 2.0]) >= 0.0);
    }

    #[test]
    fn kmeans_returns_points_when_k_large() {
        let pts = vec![vec![0.1], vec![0.5], vec![0.9]];
        assert_eq!(kmeans(&pts, 5, 10, &mut stream(1, 0)), pts);
    }

    #[test]
    fn standardization_round_trip() {
        let a = toy_archive(12);
        let cfg = SurrogateConfig::default();
        let m = SurrogateModel::init(&cfg, &[0.0], &[1.0], &a, &mut stream(2, 0)).unwrap();
        for s in a.samples() {
            let back = m.destandardize(&m.standardize(&s.f));
            assert!((back[0] - s.f[0]).abs() < 1e-10);
        }
    }

    #[test]
    fn init_is_deterministic_and_rejects_tiny_archives() {
        let a = toy_archive(12);
        let cfg = SurrogateConfig::default();
        let m1 = SurrogateModel::init(&cfg, &[0.0], &[1.0], &a, &mut stream(3, 0)).unwrap();
        let m2 = SurrogateModel::init(&cfg, &[0.0], &[1.0], &a, &mut stream(3, 0)).unwrap();
        assert_eq!(m1, m2);
        let one = toy_archive(12).prefix(1);
        assert!(matches!(
            SurrogateModel::init(&cfg, &[0.0], &[1.0], &one, &mut stream(3, 0)),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn unfitted_predict_is_state_error() {
        let a = toy_archive(12);
        let m = SurrogateModel::init(&SurrogateConfig::default(), &[0.0], &[1.0], &a, &mut stream(4, 0)).unwrap();
        assert!(matches!(m.predict(&[0.5], 8), Err(Error::State(_))));
        assert!(matches!(m.proxy_predict(&[0.5]), Err(Error::State(_))));
    }

    #[test]
    fn linear_toy_fit() {
        let a = toy_archive(20);
        let mut m =
            SurrogateModel::init(&SurrogateConfig::default(), &[0.0], &[1.0], &a, &mut stream(5, 0)).unwrap();
        let rep = m.fit(&a, FitMode::FullRefit, true, &mut stream(5, 1)).unwrap();
        assert!(rep.final_elbo >= rep.initial_elbo);
        let mut sq = 0.0;
        for s in a.samples() {
            let p = m.predict(&s.x, 8).unwrap();
            let r = (p.f_hat[0] - s.f[0]) / m.y_std[0];
            sq += r * r;
        }
        assert!(sqrt(sq / a.len() as f64) < 0.05);
    }
}
