//! Learned acquisition: per-candidate features, a bounded history of
//! observed gains, and a two-output scorer trained online.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::deepgp::SurrogatePrediction;
use crate::math::{abs, expm1, log1p, sqrt};
use crate::neural::{Adam, Mlp};
use crate::rankclf::ClassifierOutput;
use crate::{Error, Result};

pub const DEFAULT_WINDOW: usize = 20;
pub const DEFAULT_CAPACITY: usize = 1000;
pub const DIV_EPS: f64 = 1e-8;
pub const DIV_DECAY: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcqConfig {
    pub hidden: usize,
    pub capacity: usize,
    pub window: usize,
    pub lambda_div: f64,
    pub lambda_reg: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for AcqConfig {
    fn default() -> Self {
        AcqConfig {
            hidden: 64,
            capacity: DEFAULT_CAPACITY,
            window: DEFAULT_WINDOW,
            lambda_div: 0.5,
            lambda_reg: 1e-4,
            steps: 100,
            batch_size: 64,
            lr: 5e-3,
        }
    }
}

impl AcqConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.capacity == 0 || self.window == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "acquisition hidden, capacity, window and batch_size must be positive".into(),
            ));
        }
        if !(self.lambda_div >= 0.0) || !(self.lambda_reg >= 0.0) || !(self.lr > 0.0) {
            return Err(Error::Config("acquisition λ_div, λ_reg must be ≥ 0 and lr > 0".into()));
        }
        Ok(())
    }
}

/// `[f̂ (M), u_ep (M), u_al (M), p̄ (K), μ_ΔHV, σ_ΔHV]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub m: usize,
    pub k: usize,
}

impl FeatureVector {
    pub fn width(&self) -> usize {
        self.values.len()
    }

    pub fn f_hat(&self) -> &[f64] {
        &self.values[..self.m]
    }

    pub fn u_ep(&self) -> &[f64] {
        &self.values[self.m..2 * self.m]
    }

    pub fn u_al(&self) -> &[f64] {
        &self.values[2 * self.m..3 * self.m]
    }

    pub fn p_bar(&self) -> &[f64] {
        &self.values[3 * self.m..3 * self.m + self.k]
    }

    pub fn window_stats(&self) -> (f64, f64) {
        let n = self.values.len();
        (self.values[n - 2], self.values[n - 1])
    }
}

pub fn feature_width(m: usize, k: usize) -> usize {
    3 * m + k + 2
}

fn check_finite(name: &str, v: &[f64]) -> Result<()> {
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::Feature(format!("non-finite value in {name}[{i}]")));
    }
    Ok(())
}

pub fn build_features(
    pred: &SurrogatePrediction,
    clf: &ClassifierOutput,
    stats: (f64, f64),
) -> Result<FeatureVector> {
    let m = pred.f_hat.len();
    if pred.u_ep.len() != m || pred.u_al.len() != m {
        return Err(Error::Feature("surrogate prediction has inconsistent widths".into()));
    }
    check_finite("f_hat", &pred.f_hat)?;
    check_finite("u_ep_gp", &pred.u_ep)?;
    check_finite("u_al_gp", &pred.u_al)?;
    check_finite("p_bar", &clf.p_bar)?;
    check_finite("window_stats", &[stats.0, stats.1])?;
    let k = clf.p_bar.len();
    let mut values = Vec::with_capacity(feature_width(m, k));
    values.extend_from_slice(&pred.f_hat);
    values.extend_from_slice(&pred.u_ep);
    values.extend_from_slice(&pred.u_al);
    values.extend_from_slice(&clf.p_bar);
    values.push(stats.0);
    values.push(stats.1);
    Ok(FeatureVector { values, m, k })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub feat: FeatureVector,
    pub delta_hv: f64,
    pub delta_div_norm: f64,
    pub eval_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryBuffer {
    records: VecDeque<HistoryRecord>,
    capacity: usize,
    /// Bias-corrected EMA of |Δ_div|.
    running_abs_div: f64,
    ema_raw: f64,
    ema_count: u32,
}

impl HistoryBuffer {
    pub fn new(capacity: usize) -> HistoryBuffer {
        HistoryBuffer {
            records: VecDeque::new(),
            capacity: capacity.max(1),
            running_abs_div: 0.0,
            ema_raw: 0.0,
            ema_count: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn running_abs_div(&self) -> f64 {
        self.running_abs_div
    }

    pub fn records(&self) -> impl Iterator<Item = &HistoryRecord> {
        self.records.iter()
    }

    pub fn push(&mut self, record: HistoryRecord) -> Result<()> {
        if !(record.delta_hv >= 0.0) || !record.delta_hv.is_finite() || !record.delta_div_norm.is_finite() {
            return Err(Error::Domain(format!(
                "history record needs finite ΔHV ≥ 0 and finite Δdiv; got ({}, {})",
                record.delta_hv, record.delta_div_norm
            )));
        }
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back(record);
        Ok(())
    }

    fn update_abs_div(&mut self, a: f64) {
        self.ema_raw = DIV_DECAY * self.ema_raw + (1.0 - DIV_DECAY) * a;
        self.ema_count = self.ema_count.saturating_add(1);
        let correction = 1.0 - libm::pow(DIV_DECAY, self.ema_count as f64);
        self.running_abs_div = self.ema_raw / correction;
    }
}

/// Population mean and standard deviation of the last `min(w, len)` ΔHV
/// values; `(0, 0)` for an empty buffer.
pub fn window_stats(buffer: &HistoryBuffer, w: usize) -> (f64, f64) {
    let n = buffer.records.len().min(w);
    if n == 0 {
        return (0.0, 0.0);
    }
    let vals: Vec<f64> = buffer.records.iter().rev().take(n).map(|r| r.delta_hv).collect();
    let mean = vals.iter().sum::<f64>() / n as f64;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, sqrt(var))
}

/// Normalized diversity gain. The running |Δ| average is updated with the
/// current gain first, so the very first value is ±1 (or 0).
pub fn diversity_target(div_before: f64, div_after: f64, buffer: &mut HistoryBuffer) -> f64 {
    let delta = div_after - div_before;
    buffer.update_abs_div(abs(delta));
    delta / (DIV_EPS + buffer.running_abs_div)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcqNet {
    net: Mlp,
    feat_mean: Vec<f64>,
    feat_std: Vec<f64>,
    #[serde(skip)]
    adam: Option<Adam>,
    lr: f64,
}

impl AcqNet {
    pub fn new<R: Rng + ?Sized>(width: usize, hidden: usize, lr: f64, rng: &mut R) -> Result<AcqNet> {
        let mut net = Mlp::plain(&[width, hidden, 2])?;
        net.init_glorot(rng);
        Ok(AcqNet {
            net,
            feat_mean: vec![0.0; width],
            feat_std: vec![1.0; width],
            adam: None,
            lr,
        })
    }

    pub fn width(&self) -> usize {
        self.net.input_width()
    }

    pub fn mlp(&self) -> &Mlp {
        &self.net
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    /// Refreshes the z-score transform from the buffer contents.
    pub fn refresh_transform(&mut self, buffer: &HistoryBuffer) {
        let w = self.width();
        let n = buffer.len();
        if n == 0 {
            return;
        }
        let mut mean = vec![0.0; w];
        for r in buffer.records() {
            for (m, v) in mean.iter_mut().zip(&r.feat.values) {
                *m += v / n as f64;
            }
        }
        let mut var = vec![0.0; w];
        for r in buffer.records() {
            for j in 0..w {
                let d = r.feat.values[j] - mean[j];
                var[j] += d * d / n as f64;
            }
        }
        self.feat_mean = mean;
        self.feat_std = var.iter().map(|v| if *v > 1e-24 { sqrt(*v) } else { 1.0 }).collect();
    }

    fn normalize(&self, feat: &FeatureVector) -> Result<Vec<f64>> {
        if feat.width() != self.width() {
            return Err(Error::Feature(format!(
                "feature width {} does not match scorer width {}",
                feat.width(),
                self.width()
            )));
        }
        Ok(feat
            .values
            .iter()
            .zip(self.feat_mean.iter().zip(&self.feat_std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }

    /// Raw network outputs: `(log1p ŝ_HV, ŝ_div)`.
    pub fn raw_score(&self, feat: &FeatureVector) -> Result<(f64, f64)> {
        let out = self.net.predict(&self.normalize(feat)?, None)?;
        Ok((out[0], out[1]))
    }

    /// `(ŝ_HV, ŝ_div)` with the HV head mapped back from the log1p scale.
    pub fn score(&self, feat: &FeatureVector) -> Result<(f64, f64)> {
        let (h, d) = self.raw_score(feat)?;
        Ok((expm1(h), d))
    }

    pub fn score_batch(&self, feats: &[FeatureVector]) -> Result<Vec<(f64, f64)>> {
        feats.iter().map(|f| self.score(f)).collect()
    }

    /// Composite loss on `records` and its gradient in parameter order.
    pub fn loss_and_grad(
        &self,
        records: &[&HistoryRecord],
        lambda_div: f64,
        lambda_reg: f64,
    ) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.net.n_params()];
        let n = records.len().max(1) as f64;
        let mut loss = 0.0;
        for r in records {
            let x = self.normalize(&r.feat)?;
            let (out, cache) = self.net.forward(&x, None)?;
            let eh = out[0] - log1p(r.delta_hv);
            let ed = out[1] - r.delta_div_norm;
            loss += (eh * eh + lambda_div * ed * ed) / n;
            let d_out = [2.0 * eh / n, 2.0 * lambda_div * ed / n];
            self.net.backward_into(&cache, &d_out, None, &mut grad)?;
        }
        for (g, p) in grad.iter_mut().zip(self.net.params()) {
            loss += lambda_reg * p * p;
            *g += 2.0 * lambda_reg * p;
        }
        Ok((loss, grad))
    }

    /// Loss over the whole buffer.
    pub fn buffer_loss(&self, buffer: &HistoryBuffer, lambda_div: f64, lambda_reg: f64) -> Result<f64> {
        let recs: Vec<&HistoryRecord> = buffer.records().collect();
        Ok(self.loss_and_grad(&recs, lambda_div, lambda_reg)?.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcqTraining {
    pub steps: usize,
    pub first_loss: f64,
    pub final_loss: f64,
    pub losses: Vec<f64>,
}

/// Mini-batch Adam on the composite loss. Returns `None` (with a warning)
/// for an empty buffer.
pub fn train_acquisition<R: Rng + ?Sized>(
    net: &mut AcqNet,
    buffer: &HistoryBuffer,
    lambda_div: f64,
    lambda_reg: f64,
    steps: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<Option<AcqTraining>> {
    if buffer.is_empty() {
        log::debug!("acquisition buffer is empty; skipping scorer training");
        return Ok(None);
    }
    net.refresh_transform(buffer);
    let recs: Vec<&HistoryRecord> = buffer.records().collect();
    let n = recs.len();
    let bs = batch_size.min(n).max(1);
    let n_params = net.net.n_params();
    let mut adam = net
        .adam
        .take()
        .filter(|a| a.len() == n_params)
        .unwrap_or_else(|| Adam::new(n_params, net.lr));
    let mut losses = Vec::with_capacity(steps);
    let mut idx: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    for _ in 0..steps {
        let batch: Vec<&HistoryRecord> = if bs == n {
            recs.clone()
        } else {
            if cursor + bs > n {
                for i in (1..n).rev() {
                    let j = rng.gen_range(0..=i);
                    idx.swap(i, j);
                }
                cursor = 0;
            }
            let b = idx[cursor..cursor + bs].iter().map(|&i| recs[i]).collect();
            cursor += bs;
            b
        };
        let (loss, grad) = net.loss_and_grad(&batch, lambda_div, lambda_reg)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Training(String::from("acquisition loss became non-finite")));
        }
        losses.push(loss);
        let mut p = net.net.params().to_vec();
        adam.update(&mut p, &grad)?;
        net.net.set_params(&p);
    }
    net.adam = Some(adam);
    let final_loss = net.loss_and_grad(&recs, lambda_div, lambda_reg)?.0;
    Ok(Some(AcqTraining {
        steps,
        first_loss: losses.first().copied().unwrap_or(final_loss),
        final_loss,
        losses,
    }))
}

/// Fixed linear score of the static baseline.
pub fn static_score(feat: &FeatureVector, weights: &[f64; 6], proxy_hv: f64) -> f64 {
    let (mu, sigma) = feat.window_stats();
    let ep: f64 = feat.u_ep().iter().map(|v| abs(*v)).sum();
    let al: f64 = feat.u_al().iter().map(|v| abs(*v)).sum();
    let p1 = feat.p_bar().first().copied().unwrap_or(0.0);
    weights[0] * proxy_hv + weights[1] * ep + weights[2] * al + weights[3] * p1 + weights[4] * mu + weights[5] * sigma
}
