//! Nondomination-rank classifier with temperature calibration and adaptive
//! MC-dropout uncertainty.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::math::{exp, log, mean, sample_variance};
use crate::neural::{entropy, log_softmax_temperature, softmax_temperature, Adam, Mlp};
use crate::pareto::{rank_labels, Archive};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub k: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub dropout: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub refit_epochs: usize,
    pub calibration_fraction: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            k: 5,
            hidden1: 128,
            hidden2: 128,
            dropout: 0.2,
            lr: 1e-3,
            batch_size: 32,
            epochs: 200,
            refit_epochs: 50,
            calibration_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    pub s0: usize,
    pub s_max: usize,
    pub tau_mc: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            s0: 4,
            s_max: 32,
            tau_mc: 0.01,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.s0 == 0 || self.s0 > self.s_max || !(self.tau_mc > 0.0) {
            return Err(Error::Config(format!(
                "MC config needs 1 <= s0 <= s_max and tau_mc > 0; got s0 = {}, s_max = {}, tau_mc = {}",
                self.s0, self.s_max, self.tau_mc
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierOutput {
    pub p_bar: Vec<f64>,
    pub u_ep: f64,
    pub s_used: usize,
}

impl ClassifierOutput {
    /// 1-based argmax rank.
    pub fn predicted_rank(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.p_bar.iter().enumerate() {
            if *p > self.p_bar[best] {
                best = i;
            }
        }
        best + 1
    }
}

/// Pass count after the baseline batch: `S0` below threshold, otherwise
/// `min(S_max, S0·⌈σ̂²/τ⌉)`.
pub fn adaptive_pass_count(sigma2: f64, mc: &McConfig) -> usize {
    if sigma2 <= mc.tau_mc {
        mc.s0
    } else {
        let factor = libm::ceil(sigma2 / mc.tau_mc) as usize;
        mc.s_max.min(mc.s0.saturating_mul(factor))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub net: Mlp,
    pub temperature: f64,
    pub k: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    trained: bool,
    #[serde(skip)]
    adam: Option<Adam>,
    lr: f64,
    batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierFit {
    pub loss: f64,
    pub first_epoch_loss: f64,
    pub epochs: usize,
    pub temperature: f64,
    pub calibration_size: usize,
}

/// Temperature grid: 200 log-spaced values over `[0.05, 20]`, preceded by
/// `T = 1` so the identity is always a candidate.
pub fn temperature_grid() -> Vec<f64> {
    let (a, b) = (log(0.05), log(20.0));
    let mut g = vec![1.0];
    g.extend((0..200).map(|i| exp(a + (b - a) * i as f64 / 199.0)));
    g
}

pub fn mean_nll(logits: &[Vec<f64>], labels: &[usize], t: f64) -> f64 {
    let total: f64 = logits
        .iter()
        .zip(labels)
        .map(|(z, &y)| -log_softmax_temperature(z, t)[y - 1])
        .sum();
    total / logits.len().max(1) as f64
}

/// Grid-search NLL minimizer; labels are 1-based. Returns 1 for empty input.
pub fn fit_temperature_from_logits(logits: &[Vec<f64>], labels: &[usize]) -> f64 {
    if logits.is_empty() {
        return 1.0;
    }
    let mut best = (f64::INFINITY, 1.0);
    for t in temperature_grid() {
        let nll = mean_nll(logits, labels, t);
        if nll < best.0 {
            best = (nll, t);
        }
    }
    best.1
}

/// Stratified split: about `fraction` of each label goes to the second set
/// (at least one per label when the label has two or more members).
pub fn stratified_split<R: Rng + ?Sized>(
    labels: &[usize],
    fraction: f64,
    rng: &mut R,
) -> (Vec<usize>, Vec<usize>) {
    let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_label.entry(l).or_default().push(i);
    }
    let mut train = Vec::new();
    let mut calib = Vec::new();
    for (_, mut idx) in by_label {
        idx.shuffle(rng);
        let mut n_cal = libm::round(idx.len() as f64 * fraction) as usize;
        if n_cal == 0 && idx.len() >= 2 && fraction > 0.0 {
            n_cal = 1;
        }
        calib.extend_from_slice(&idx[..n_cal]);
        train.extend_from_slice(&idx[n_cal..]);
    }
    train.sort_unstable();
    calib.sort_unstable();
    (train, calib)
}

impl ClassifierModel {
    pub fn new<R: Rng + ?Sized>(
        cfg: &ClassifierConfig,
        lower: &[f64],
        upper: &[f64],
        rng: &mut R,
    ) -> Result<ClassifierModel> {
        if cfg.k < 2 {
            return Err(Error::Config(format!("K must be at least 2; got {}", cfg.k)));
        }
        let d = lower.len();
        let mut net = Mlp::new(
            &[d, cfg.hidden1, cfg.hidden2, cfg.k],
            &[true, true],
            &[cfg.dropout, 0.0],
        )?;
        net.init_glorot(rng);
        Ok(ClassifierModel {
            net,
            temperature: 1.0,
            k: cfg.k,
            lower: lower.to_vec(),
            upper: upper.to_vec(),
            trained: false,
            adam: None,
            lr: cfg.lr,
            batch_size: cfg.batch_size.max(1),
        })
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    fn scale(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, v)| (v - self.lower[i]) / (self.upper[i] - self.lower[i]))
            .collect()
    }

    /// Class-weighted cross-entropy training by Adam with dropout active.
    /// Labels are 1-based. Returns the mean loss of the last epoch.
    pub fn fit<R: Rng + ?Sized>(
        &mut self,
        xs: &[Vec<f64>],
        labels: &[usize],
        epochs: usize,
        rng: &mut R,
    ) -> Result<(f64, f64)> {
        if xs.is_empty() || xs.len() != labels.len() {
            return Err(Error::Training("classifier needs a nonempty labelled set".into()));
        }
        if labels.iter().any(|l| *l == 0 || *l > self.k) {
            return Err(Error::Training(format!("labels must lie in 1..={}", self.k)));
        }
        let epochs = epochs.max(1);
        let mut counts = vec![0usize; self.k];
        for &l in labels {
            counts[l - 1] += 1;
        }
        let present = counts.iter().filter(|c| **c > 0).count() as f64;
        let n = xs.len() as f64;
        let weights: Vec<f64> = counts
            .iter()
            .map(|&c| if c > 0 { n / (present * c as f64) } else { 0.0 })
            .collect();
        let scaled: Vec<Vec<f64>> = xs.iter().map(|x| self.scale(x)).collect();
        let n_params = self.net.n_params();
        let mut adam = self
            .adam
            .take()
            .filter(|a| a.len() == n_params)
            .unwrap_or_else(|| Adam::new(n_params, self.lr));
        let mut order: Vec<usize> = (0..xs.len()).collect();
        let mut grads = vec![0.0; n_params];
        let mut first = 0.0;
        let mut last = 0.0;
        for epoch in 0..epochs {
            order.shuffle(rng);
            let mut epoch_loss = 0.0;
            for batch in order.chunks(self.batch_size) {
                grads.iter_mut().for_each(|g| *g = 0.0);
                let inv = 1.0 / batch.len() as f64;
                for &i in batch {
                    let mask = self.net.sample_mask(rng);
                    let (z, cache) = self.net.forward(&scaled[i], Some(&mask))?;
                    let y = labels[i] - 1;
                    let w = weights[y];
                    let p = softmax_temperature(&z, 1.0)?;
                    epoch_loss += -w * log(p[y].max(1e-300));
                    let d: Vec<f64> = p
                        .iter()
                        .enumerate()
                        .map(|(c, pc)| w * inv * (pc - if c == y { 1.0 } else { 0.0 }))
                        .collect();
                    self.net.backward_into(&cache, &d, None, &mut grads)?;
                }
                self.net.adam_step(&grads, &mut adam)?;
            }
            epoch_loss /= n;
            if !epoch_loss.is_finite() {
                return Err(Error::Training("classifier loss became non-finite".into()));
            }
            if epoch == 0 {
                first = epoch_loss;
            }
            last = epoch_loss;
        }
        self.adam = Some(adam);
        self.trained = true;
        Ok((first, last))
    }

    /// Rank labels from the archive, stratified calibration split, training
    /// on the rest, then temperature fitting on the held-out part (skipped
    /// when `calibrate` is false).
    pub fn fit_archive<R: Rng + ?Sized>(
        &mut self,
        archive: &Archive,
        epochs: usize,
        calibration_fraction: f64,
        calibrate: bool,
        rng: &mut R,
    ) -> Result<ClassifierFit> {
        if archive.len() < self.k {
            return Err(Error::Training(format!(
                "archive holds {} samples but K = {} ranks need at least as many; enlarge the initial design",
                archive.len(),
                self.k
            )));
        }
        let labels = rank_labels(archive.ranks(), self.k);
        let xs = archive.decisions();
        let frac = if calibrate { calibration_fraction } else { 0.0 };
        let (train, calib) = stratified_split(&labels, frac, rng);
        let tx: Vec<Vec<f64>> = train.iter().map(|&i| xs[i].clone()).collect();
        let ty: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
        let (first, loss) = self.fit(&tx, &ty, epochs, rng)?;
        if calibrate {
            let cx: Vec<Vec<f64>> = calib.iter().map(|&i| xs[i].clone()).collect();
            let cy: Vec<usize> = calib.iter().map(|&i| labels[i]).collect();
            self.fit_temperature(&cx, &cy)?;
        } else {
            self.temperature = 1.0;
        }
        Ok(ClassifierFit {
            loss,
            first_epoch_loss: first,
            epochs: epochs.max(1),
            temperature: self.temperature,
            calibration_size: calib.len(),
        })
    }

    /// Deterministic logits (no dropout, no temperature).
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.net.predict(&self.scale(x), None)
    }

    pub fn fit_temperature(&mut self, xs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
        if xs.is_empty() {
            warn!("empty calibration set; temperature left at 1");
            self.temperature = 1.0;
            return Ok(1.0);
        }
        let logits: Vec<Vec<f64>> = xs.iter().map(|x| self.logits(x)).collect::<Result<_>>()?;
        self.temperature = fit_temperature_from_logits(&logits, labels);
        Ok(self.temperature)
    }

    /// Single deterministic temperature-scaled pass.
    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        softmax_temperature(&self.logits(x)?, self.temperature)
    }

    /// One deterministic pass reported with zero epistemic score.
    pub fn predict_deterministic(&self, x: &[f64]) -> Result<ClassifierOutput> {
        if !self.trained {
            return Err(Error::State("classifier used before training".into()));
        }
        Ok(ClassifierOutput {
            p_bar: self.predict_proba(x)?,
            u_ep: 0.0,
            s_used: 1,
        })
    }

    fn mc_pass<R: Rng + ?Sized>(&self, xs: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let mask = self.net.sample_mask(rng);
        let z = self.net.predict(xs, Some(&mask))?;
        softmax_temperature(&z, self.temperature)
    }

    pub fn predict_with_uncertainty<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        mc: &McConfig,
        rng: &mut R,
    ) -> Result<ClassifierOutput> {
        if !self.trained {
            return Err(Error::State("classifier used before training".into()));
        }
        mc.validate()?;
        let xs = self.scale(x);
        let mut passes: Vec<Vec<f64>> = (0..mc.s0)
            .map(|_| self.mc_pass(&xs, rng))
            .collect::<Result<_>>()?;
        let sigma2 = if passes.len() > 1 {
            mean(
                &(0..self.k)
                    .map(|c| sample_variance(&passes.iter().map(|p| p[c]).collect::<Vec<_>>()))
                    .collect::<Vec<_>>(),
            )
        } else {
            0.0
        };
        let s_used = adaptive_pass_count(sigma2, mc);
        while passes.len() < s_used {
            passes.push(self.mc_pass(&xs, rng)?);
        }
        Ok(summarize_passes(&passes))
    }
}

/// Mean distribution and entropy gap `H[p̄] − mean H[p⁽ˢ⁾]`, clamped at zero.
pub fn summarize_passes(passes: &[Vec<f64>]) -> ClassifierOutput {
    let k = passes[0].len();
    let s = passes.len() as f64;
    let mut p_bar = vec![0.0; k];
    for p in passes {
        for (a, b) in p_bar.iter_mut().zip(p) {
            *a += b / s;
        }
    }
    let identical = passes.iter().all(|p| p == &passes[0]);
    let u_ep = if identical {
        0.0
    } else {
        let mean_h = passes.iter().map(|p| entropy(p)).sum::<f64>() / s;
        (entropy(&p_bar) - mean_h).max(0.0)
    };
    ClassifierOutput {
        p_bar,
        u_ep,
        s_used: passes.len(),
    }
}

/// Per-iteration memo of classifier outputs keyed by the bit pattern of `x`.
#[derive(Debug, Clone, Default)]
pub struct PredictionCache {
    map: BTreeMap<Vec<u64>, ClassifierOutput>,
}

impl PredictionCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&mut self) {
        self.map.clear();
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

fn key(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

/// Order-preserving batch prediction that reuses cached outputs. With
/// `mc = None` a single deterministic pass is used.
pub fn predict_batch<R: Rng + ?Sized>(
    model: &ClassifierModel,
    pool: &[Vec<f64>],
    mc: Option<&McConfig>,
    rng: &mut R,
    cache: &mut PredictionCache,
) -> Result<Vec<ClassifierOutput>> {
    pool.iter()
        .map(|x| {
            let k = key(x);
            if let Some(out) = cache.map.get(&k) {
                return Ok(out.clone());
            }
            let out = match mc {
                Some(cfg) => model.predict_with_uncertainty(x, cfg, rng)?,
                None => model.predict_deterministic(x)?,
            };
            cache.map.insert(k, out.clone());
            Ok(out)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn adaptive_rule_examples() {
        let mc = McConfig {
            s0: 4,
            s_max: 32,
            tau_mc: 0.01,
        };
        assert_eq!(adaptive_pass_count(0.005, &mc), 4);
        assert_eq!(adaptive_pass_count(0.03, &mc), 12);
        assert_eq!(adaptive_pass_count(10.0, &mc), 32);
    }

    #[test]
    fn grid_contains_identity_and_bounds() {
        let g = temperature_grid();
        assert_eq!(g.len(), 201);
        assert_eq!(g[0], 1.0);
        assert!((g[1] - 0.05).abs() < 1e-12 && (g[200] - 20.0).abs() < 1e-9);
    }

    #[test]
    fn untrained_model_is_rejected() {
        let cfg = ClassifierConfig::default();
        let m = ClassifierModel::new(&cfg, &[0.0; 3], &[1.0; 3], &mut stream(1, 0)).unwrap();
        assert!(matches!(
            m.predict_with_uncertainty(&[0.5; 3], &McConfig::default(), &mut stream(1, 1)),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn separable_clusters() {
        let mut rng = stream(5, 0);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..40 {
            let c = i % 2;
            let base = if c == 0 { 0.2 } else { 0.8 };
            xs.push(vec![base + 0.05 * rng.gen::<f64>(), base - 0.05 * rng.gen::<f64>()]);
            ys.push(c + 1);
        }
        let cfg = ClassifierConfig {
            k: 2,
            hidden1: 16,
            hidden2: 16,
            ..ClassifierConfig::default()
        };
        let mut m = ClassifierModel::new(&cfg, &[0.0; 2], &[1.0; 2], &mut rng).unwrap();
        let (first, last) = m.fit(&xs, &ys, 300, &mut rng).unwrap();
        assert!(last < first);
        let correct = xs
            .iter()
            .zip(&ys)
            .filter(|(x, y)| {
                let p = m.predict_proba(x).unwrap();
                (if p[0] > p[1] { 1 } else { 2 }) == **y
            })
            .count();
        assert!(correct as f64 / xs.len() as f64 >= 0.95);
    }

    #[test]
    fn cache_returns_identical_outputs() {
        let cfg = ClassifierConfig {
            hidden1: 8,
            hidden2: 8,
            ..ClassifierConfig::default()
        };
        let mut rng = stream(9, 0);
        let mut m = ClassifierModel::new(&cfg, &[0.0; 2], &[1.0; 2], &mut rng).unwrap();
        let xs: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 / 10.0, 0.5]).collect();
        let ys: Vec<usize> = (0..10).map(|i| i % 5 + 1).collect();
        m.fit(&xs, &ys, 2, &mut rng).unwrap();
        let mut cache = PredictionCache::new();
        let mc = McConfig::default();
        let a = predict_batch(&m, &xs[..3], Some(&mc), &mut rng, &mut cache).unwrap();
        let b = predict_batch(&m, &xs[..3], Some(&mc), &mut rng, &mut cache).unwrap();
        assert_eq!(a, b);
        assert_eq!(cache.len(), 3);
    }
}
