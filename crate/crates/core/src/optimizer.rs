//! The outer optimization loop, its baselines and ablations.
//!
//! One iteration: refit the rank classifier and the surrogate, train the
//! acquisition scorer on the history buffer, generate a rank-conditioned
//! candidate pool, screen it with the cheap proxy, run the full surrogate on
//! the top `k`, pick `q` by the composite score and evaluate them.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::acq::{
    build_features, diversity_target, static_score, train_acquisition, window_stats, AcqConfig, AcqNet,
    FeatureVector, HistoryBuffer, HistoryRecord,
};
use crate::bench::{evaluate, latin_hypercube, reference_front, ProblemSpec};
use crate::deepgp::{FitMode, FitReport, SurrogateConfig, SurrogateModel, SurrogatePrediction};
use crate::math::{abs, pow, total_cmp};
use crate::pareto::{diversity_of_front, nondominated_indices, Archive, Sample};
use crate::quality::{
    delta_hv, estimate_h_max, estimate_l_h, estimate_rho, hv_contribution, hypervolume, igd, reference_point,
    HvConfig, LipschitzEstimate,
};
use crate::rankclf::{predict_batch, ClassifierConfig, ClassifierModel, ClassifierOutput, McConfig, PredictionCache};
use crate::rng::{self, ChaCha8Rng};
use crate::{Error, Result};

pub const DEDUP_TOL: f64 = 1e-6;
pub const DEFAULT_STATIC_WEIGHTS: [f64; 6] = [1.0, 0.3, 0.0, 0.3, 0.0, 0.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoopConfig {
    pub budget: usize,
    pub q: usize,
    pub pool_size: usize,
    pub n_screen: usize,
    pub k: usize,
    /// `None` selects 100 points for `D < 100` and 200 otherwise.
    pub initial_size: Option<usize>,
    pub seed: u64,
    pub alpha_hv: f64,
    pub alpha_div: f64,
    pub alpha_clf: f64,
    pub eta_c: f64,
    pub crossover_rate: f64,
    pub static_weights: [f64; 6],
    pub mc: McConfig,
    pub classifier: ClassifierConfig,
    pub surrogate: SurrogateConfig,
    pub acquisition: AcqConfig,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            budget: 300,
            q: 5,
            pool_size: 1000,
            n_screen: 500,
            k: 50,
            initial_size: None,
            seed: 0,
            alpha_hv: 1.0,
            alpha_div: 0.3,
            alpha_clf: 0.3,
            eta_c: 15.0,
            crossover_rate: 0.9,
            static_weights: DEFAULT_STATIC_WEIGHTS,
            mc: McConfig::default(),
            classifier: ClassifierConfig::default(),
            surrogate: SurrogateConfig::default(),
            acquisition: AcqConfig::default(),
        }
    }
}

impl LoopConfig {
    pub fn initial_design_size(&self, dim: usize) -> usize {
        self.initial_size.unwrap_or(if dim < 100 { 100 } else { 200 })
    }

    pub fn validate(&self, problem: &ProblemSpec) -> Result<()> {
        if self.q == 0 {
            return Err(Error::Config("q must be at least 1".into()));
        }
        if self.q > self.k {
            return Err(Error::Config(format!("q exceeds k: q = {} > k = {}", self.q, self.k)));
        }
        if self.k > self.n_screen {
            return Err(Error::Config(format!(
                "k exceeds n_screen: k = {} > n_screen = {}",
                self.k, self.n_screen
            )));
        }
        if self.n_screen > self.pool_size {
            return Err(Error::Config(format!(
                "n_screen exceeds pool_size: n_screen = {} > pool_size = {}",
                self.n_screen, self.pool_size
            )));
        }
        let n0 = self.initial_design_size(problem.dim);
        if n0 > self.budget {
            return Err(Error::Config(format!(
                "initial_size exceeds budget: initial_size = {} > budget = {}",
                n0, self.budget
            )));
        }
        if n0 < self.classifier.k.max(2) {
            return Err(Error::Config(format!(
                "initial_size = {} must be at least K = {} (and 2)",
                n0, self.classifier.k
            )));
        }
        if self.classifier.k < 2 {
            return Err(Error::Config(format!("classifier.k must be at least 2; got {}", self.classifier.k)));
        }
        if !(self.eta_c >= 0.0) || !(0.0..=1.0).contains(&self.crossover_rate) {
            return Err(Error::Config("eta_c must be ≥ 0 and crossover_rate in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.classifier.calibration_fraction) {
            return Err(Error::Config(format!(
                "classifier.calibration_fraction must be in [0, 1); got {}",
                self.classifier.calibration_fraction
            )));
        }
        if [self.alpha_hv, self.alpha_div, self.alpha_clf].iter().any(|a| !a.is_finite())
            || self.static_weights.iter().any(|w| !w.is_finite())
        {
            return Err(Error::Config("selection weights must be finite".into()));
        }
        self.mc.validate()?;
        self.surrogate.validate()?;
        self.acquisition.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablations {
    pub uncertainty: bool,
    pub deepgp: bool,
    pub learned_acq: bool,
    pub temp_scaling: bool,
}

impl Ablations {
    pub const ALL: [&'static str; 4] = ["uncertainty", "deepgp", "learned_acq", "temp_scaling"];

    pub fn parse_list(items: &[&str]) -> Result<Ablations> {
        let mut a = Ablations::default();
        for it in items {
            match *it {
                "uncertainty" => a.uncertainty = true,
                "deepgp" => a.deepgp = true,
                "learned_acq" => a.learned_acq = true,
                "temp_scaling" => a.temp_scaling = true,
                other => {
                    return Err(Error::Config(format!(
                        "unknown ablation '{other}'; expected uncertainty, deepgp, learned_acq or temp_scaling"
                    )))
                }
            }
        }
        Ok(a)
    }

    pub fn names(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if self.uncertainty {
            v.push("uncertainty");
        }
        if self.deepgp {
            v.push("deepgp");
        }
        if self.learned_acq {
            v.push("learned_acq");
        }
        if self.temp_scaling {
            v.push("temp_scaling");
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    Learned,
    Static([f64; 6]),
}

/// Source of the `seconds` column; the default yields zeros so tables are
/// reproducible bit for bit.
pub trait Clock {
    fn seconds(&mut self) -> f64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NullClock;

impl Clock for NullClock {
    fn seconds(&mut self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub iteration: usize,
    pub evals: usize,
    pub hv: f64,
    pub igd: f64,
    pub mean_s_used: f64,
    pub refit: String,
    pub epochs: usize,
    pub acq_loss: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub mode: String,
    pub rows: Vec<RunRow>,
    pub archive: Archive,
    /// Every record ever appended, in evaluation order (the buffer itself
    /// is bounded).
    pub history: Vec<HistoryRecord>,
    pub temperatures: Vec<f64>,
    pub fits: Vec<FitReport>,
    /// Reference point for in-loop ΔHV and contributions.
    pub work_ref: Vec<f64>,
    /// Reference point for the reported HV column.
    pub report_ref: Vec<f64>,
    pub feature_width: usize,
}

impl RunResult {
    pub fn final_hv(&self) -> f64 {
        self.rows.last().map(|r| r.hv).unwrap_or(0.0)
    }

    pub fn final_igd(&self) -> f64 {
        self.rows.last().map(|r| r.igd).unwrap_or(f64::INFINITY)
    }
}

/// Reported HV reference: ideal + 2·(nadir − ideal) of the reference front.
pub fn report_reference(front: &[Vec<f64>]) -> Vec<f64> {
    let m = front[0].len();
    (0..m)
        .map(|j| {
            let lo = front.iter().map(|p| p[j]).fold(f64::INFINITY, f64::min);
            let hi = front.iter().map(|p| p[j]).fold(f64::NEG_INFINITY, f64::max);
            let span = if hi - lo > 1e-12 { hi - lo } else { 1.0 };
            lo + 2.0 * span
        })
        .collect()
}

fn hv_cfg(ref_point: Vec<f64>) -> HvConfig {
    HvConfig::new(ref_point)
}

/// Rank-1 objective vectors of a point set.
fn front_of(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    nondominated_indices(points).into_iter().map(|i| points[i].clone()).collect()
}

/// Within-iteration z-scores; a constant channel maps to zeros.
pub fn zscores(v: &[f64]) -> Vec<f64> {
    let n = v.len().max(1) as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    if !(var > 1e-300) {
        return vec![0.0; v.len()];
    }
    let sd = libm::sqrt(var);
    v.iter().map(|x| (x - mean) / sd).collect()
}

/// Indices sorted by descending score, ties by index.
pub fn argsort_desc(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| total_cmp(&scores[b], &scores[a]).then(a.cmp(&b)));
    idx
}

/// Distribution index of the rank-modulated polynomial mutation.
pub fn mutation_eta(mean_rank: f64, k: usize) -> f64 {
    if k <= 1 {
        return 25.0;
    }
    20.0 * (1.0 - (mean_rank - 1.0) / (k as f64 - 1.0)) + 5.0
}

fn sbx_pair<R: Rng + ?Sized>(
    a: &[f64],
    b: &[f64],
    problem: &ProblemSpec,
    eta: f64,
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    let mut c1 = a.to_vec();
    let mut c2 = b.to_vec();
    for i in 0..a.len() {
        if rng.gen::<f64>() > 0.5 {
            continue;
        }
        let (y1, y2) = if a[i] < b[i] { (a[i], b[i]) } else { (b[i], a[i]) };
        if y2 - y1 < 1e-14 {
            continue;
        }
        let (lo, hi) = (problem.lower[i], problem.upper[i]);
        let u: f64 = rng.gen();
        let child = |beta: f64| -> f64 {
            let alpha = 2.0 - pow(beta, -(eta + 1.0));
            let bq = if u <= 1.0 / alpha {
                pow(u * alpha, 1.0 / (eta + 1.0))
            } else {
                pow(1.0 / (2.0 - u * alpha), 1.0 / (eta + 1.0))
            };
            bq
        };
        let beta1 = 1.0 + 2.0 * (y1 - lo) / (y2 - y1);
        let v1 = 0.5 * ((y1 + y2) - child(beta1) * (y2 - y1));
        let beta2 = 1.0 + 2.0 * (hi - y2) / (y2 - y1);
        let v2 = 0.5 * ((y1 + y2) + child(beta2) * (y2 - y1));
        let (v1, v2) = (v1.clamp(lo, hi), v2.clamp(lo, hi));
        if rng.gen::<bool>() {
            c1[i] = v2;
            c2[i] = v1;
        } else {
            c1[i] = v1;
            c2[i] = v2;
        }
    }
    (c1, c2)
}

fn polynomial_mutation<R: Rng + ?Sized>(x: &mut [f64], problem: &ProblemSpec, eta: f64, rng: &mut R) {
    let rate = 1.0 / x.len() as f64;
    for i in 0..x.len() {
        if rng.gen::<f64>() >= rate {
            continue;
        }
        let (lo, hi) = (problem.lower[i], problem.upper[i]);
        let span = hi - lo;
        let d1 = (x[i] - lo) / span;
        let d2 = (hi - x[i]) / span;
        let u: f64 = rng.gen();
        let p = 1.0 / (eta + 1.0);
        let dq = if u < 0.5 {
            pow(2.0 * u + (1.0 - 2.0 * u) * pow(1.0 - d1, eta + 1.0), p) - 1.0
        } else {
            1.0 - pow(2.0 * (1.0 - u) + 2.0 * (u - 0.5) * pow(1.0 - d2, eta + 1.0), p)
        };
        x[i] = (x[i] + dq * span).clamp(lo, hi);
    }
}

fn weighted_pick<R: Rng + ?Sized>(weights: &[f64], total: f64, rng: &mut R) -> usize {
    let mut t = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if t < *w {
            return i;
        }
        t -= w;
    }
    weights.len() - 1
}

/// Rank-biased parent selection (weight `2^(K − rank)`), SBX and
/// rank-modulated polynomial mutation.
pub fn generate_candidates<R: Rng + ?Sized>(
    problem: &ProblemSpec,
    parents: &[Vec<f64>],
    parent_ranks: &[usize],
    k: usize,
    pool_size: usize,
    eta_c: f64,
    crossover_rate: f64,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if parents.len() < 2 || parents.len() != parent_ranks.len() {
        return Err(Error::State(format!(
            "candidate generation needs at least 2 parents with ranks; got {} parents, {} ranks",
            parents.len(),
            parent_ranks.len()
        )));
    }
    let weights: Vec<f64> = parent_ranks
        .iter()
        .map(|&r| pow(2.0, k.saturating_sub(r.min(k)) as f64))
        .collect();
    let total: f64 = weights.iter().sum();
    let mut pool = Vec::with_capacity(pool_size);
    while pool.len() < pool_size {
        let i = weighted_pick(&weights, total, rng);
        let mut j = weighted_pick(&weights, total, rng);
        if j == i {
            j = (i + 1 + rng.gen_range(0..parents.len() - 1)) % parents.len();
        }
        let (mut c1, mut c2) = if rng.gen::<f64>() < crossover_rate {
            sbx_pair(&parents[i], &parents[j], problem, eta_c, rng)
        } else {
            (parents[i].clone(), parents[j].clone())
        };
        let r_bar = 0.5 * (parent_ranks[i] + parent_ranks[j]) as f64;
        let eta_m = mutation_eta(r_bar, k);
        polynomial_mutation(&mut c1, problem, eta_m, rng);
        polynomial_mutation(&mut c2, problem, eta_m, rng);
        problem.clip(&mut c1);
        problem.clip(&mut c2);
        pool.push(c1);
        if pool.len() < pool_size {
            pool.push(c2);
        }
    }
    Ok(pool)
}

/// Proxy screening score `HVC(proxy mean) − 0.5·coarse var + 0.1·u_ep_clf`.
pub fn screen_scores(
    surrogate: &SurrogateModel,
    pool: &[Vec<f64>],
    clf: &[ClassifierOutput],
    front: &[Vec<f64>],
    cfg: &HvConfig,
) -> Result<Vec<f64>> {
    pool.iter()
        .zip(clf)
        .map(|(x, c)| {
            let p = surrogate.proxy_predict(x)?;
            let hv = hv_contribution(front, &p.means, cfg)?;
            Ok(hv - 0.5 * p.coarse_var + 0.1 * c.u_ep)
        })
        .collect()
}

/// Keeps the `n_screen` best indices in descending score order.
pub fn screen(scores: &[f64], n_screen: usize) -> Vec<usize> {
    if scores.len() < n_screen {
        log::warn!(
            "pool of {} candidates is smaller than n_screen = {}; keeping all",
            scores.len(),
            n_screen
        );
    }
    let mut idx = argsort_desc(scores);
    idx.truncate(n_screen);
    idx
}

/// Composite score of the learned selection rule.
pub fn composite_scores(
    s_hv: &[f64],
    s_div: &[f64],
    u_ep_clf: &[f64],
    s_hv_sur: &[f64],
    alpha: (f64, f64, f64),
) -> Vec<f64> {
    let (a, b, c, d) = (zscores(s_hv), zscores(s_div), zscores(u_ep_clf), zscores(s_hv_sur));
    (0..s_hv.len())
        .map(|i| alpha.0 * a[i] + alpha.1 * b[i] + alpha.2 * c[i] + d[i])
        .collect()
}

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| abs(x - y)).fold(0.0, f64::max)
}

/// Greedy pick of up to `q` candidates by descending score, skipping any
/// within `L∞ ≤ 1e-6` (normalized) of an earlier pick or of `existing`.
pub fn greedy_select(
    normalized: &[Vec<f64>],
    scores: &[f64],
    q: usize,
    existing: &[Vec<f64>],
) -> Vec<usize> {
    let mut picked: Vec<usize> = Vec::with_capacity(q);
    for i in argsort_desc(scores) {
        if picked.len() == q {
            break;
        }
        let x = &normalized[i];
        if picked.iter().any(|&j| linf(&normalized[j], x) <= DEDUP_TOL)
            || existing.iter().any(|e| linf(e, x) <= DEDUP_TOL)
        {
            continue;
        }
        picked.push(i);
    }
    if picked.len() < q {
        log::warn!("only {} distinct candidates for a batch of {}", picked.len(), q);
    }
    picked
}

struct Streams {
    design: ChaCha8Rng,
    classifier: ChaCha8Rng,
    surrogate: ChaCha8Rng,
    acquisition: ChaCha8Rng,
    variation: ChaCha8Rng,
    mc: ChaCha8Rng,
    baseline: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Streams {
        Streams {
            design: rng::stream(seed, rng::streams::DESIGN),
            classifier: rng::stream(seed, rng::streams::CLASSIFIER),
            surrogate: rng::stream(seed, rng::streams::SURROGATE),
            acquisition: rng::stream(seed, rng::streams::ACQUISITION),
            variation: rng::stream(seed, rng::streams::VARIATION),
            mc: rng::stream(seed, rng::streams::MC_DROPOUT),
            baseline: rng::stream(seed, rng::streams::BASELINE),
        }
    }
}

struct Metrics {
    front: Vec<Vec<f64>>,
    report: HvConfig,
}

impl Metrics {
    fn new(problem: &ProblemSpec) -> Result<Metrics> {
        let front = reference_front(problem, problem.default_front_size())?;
        let report = hv_cfg(report_reference(&front));
        Ok(Metrics { front, report })
    }

    fn row(&self, archive: &Archive, iteration: usize, seconds: f64) -> Result<RunRow> {
        let pf = archive.pareto_front();
        Ok(RunRow {
            iteration,
            evals: archive.len(),
            hv: hypervolume(&pf, &self.report)?,
            igd: igd(&pf, &self.front)?,
            mean_s_used: 0.0,
            refit: String::from("none"),
            epochs: 0,
            acq_loss: None,
            seconds,
        })
    }
}

fn initial_design(
    problem: &ProblemSpec,
    cfg: &LoopConfig,
    streams: &mut Streams,
) -> Result<Archive> {
    let n0 = cfg.initial_design_size(problem.dim).min(cfg.budget);
    let xs = latin_hypercube(n0, &problem.lower, &problem.upper, &mut streams.design);
    let mut pts = Vec::with_capacity(n0);
    for x in xs {
        let f = evaluate(problem, &x)?;
        pts.push((x, f));
    }
    let mut a = Archive::new();
    a.push_evaluated(pts)?;
    Ok(a)
}

/// Oracle and realized batch gains per iteration (analysis mode).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleTrace {
    pub oracle: Vec<f64>,
    pub realized: Vec<f64>,
    pub oracle_evaluations: usize,
}

/// Greedy best batch of `q` from true objective vectors: sequential ΔHV
/// maximization against `base`.
fn greedy_oracle_gain(base: &[Vec<f64>], fs: &[Vec<f64>], q: usize, cfg: &HvConfig) -> Result<f64> {
    let mut cur = base.to_vec();
    let mut used = vec![false; fs.len()];
    let mut total = 0.0;
    for _ in 0..q.min(fs.len()) {
        let mut best = (0.0, usize::MAX);
        for (i, f) in fs.iter().enumerate() {
            if used[i] {
                continue;
            }
            let g = delta_hv(&cur, f, cfg)?;
            if g > best.0 || best.1 == usize::MAX {
                best = (g, i);
            }
        }
        if best.1 == usize::MAX {
            break;
        }
        used[best.1] = true;
        total += best.0;
        cur.push(fs[best.1].clone());
    }
    Ok(total)
}

fn run_inner(
    problem: &ProblemSpec,
    cfg: &LoopConfig,
    selection: Selection,
    disable: Ablations,
    clock: &mut dyn Clock,
    mut oracle: Option<&mut OracleTrace>,
) -> Result<RunResult> {
    cfg.validate(problem)?;
    let selection = if disable.learned_acq {
        Selection::Static(DEFAULT_STATIC_WEIGHTS)
    } else {
        selection
    };
    let mut streams = Streams::new(cfg.seed);
    let metrics = Metrics::new(problem)?;
    let t0 = clock.seconds();
    let mut archive = initial_design(problem, cfg, &mut streams)?;
    let work = hv_cfg(reference_point(&[&archive.objectives()]));
    let mut rows = vec![metrics.row(&archive, 0, clock.seconds() - t0)?];
    let k_ranks = cfg.classifier.k;
    let mut clf = ClassifierModel::new(&cfg.classifier, &problem.lower, &problem.upper, &mut streams.classifier)?;
    let mut sur_cfg = cfg.surrogate.clone();
    if disable.deepgp {
        sur_cfg.deep = false;
    }
    let mut surrogate: Option<SurrogateModel> = None;
    let width = crate::acq::feature_width(problem.n_obj, k_ranks);
    let mut acq = AcqNet::new(width, cfg.acquisition.hidden, cfg.acquisition.lr, &mut streams.acquisition)?;
    let mut buffer = HistoryBuffer::new(cfg.acquisition.capacity);
    let mut history = Vec::new();
    let mut temperatures = Vec::new();
    let mut fits = Vec::new();
    let mc = if disable.uncertainty { None } else { Some(cfg.mc) };
    let mut need_full = true;
    let mut iteration = 0;
    while archive.len() < cfg.budget {
        iteration += 1;
        let epochs = if iteration == 1 { cfg.classifier.epochs } else { cfg.classifier.refit_epochs };
        let fit = clf.fit_archive(
            &archive,
            epochs,
            cfg.classifier.calibration_fraction,
            !disable.temp_scaling,
            &mut streams.classifier,
        )?;
        temperatures.push(fit.temperature);

        let mode = if need_full { FitMode::FullRefit } else { FitMode::WarmBounded };
        if surrogate.is_none() {
            surrogate = Some(SurrogateModel::init(
                &sur_cfg,
                &problem.lower,
                &problem.upper,
                &archive,
                &mut streams.surrogate,
            )?);
        }
        let sur = surrogate.as_mut().unwrap();
        let train_noise = iteration > sur_cfg.freeze_noise_iterations;
        let report = sur.fit(&archive, mode, train_noise, &mut streams.surrogate)?;
        need_full = report.nlpd_degraded;
        let sur_epochs = report.epochs_run;
        fits.push(report);
        let sur = surrogate.as_ref().unwrap();

        let acq_loss = match selection {
            Selection::Learned => train_acquisition(
                &mut acq,
                &buffer,
                cfg.acquisition.lambda_div,
                cfg.acquisition.lambda_reg,
                cfg.acquisition.steps,
                cfg.acquisition.batch_size,
                &mut streams.acquisition,
            )?
            .map(|t| t.final_loss),
            Selection::Static(_) => None,
        };

        let mut cache = PredictionCache::new();
        let parents = archive.decisions();
        let parent_out = predict_batch(&clf, &parents, mc.as_ref(), &mut streams.mc, &mut cache)?;
        let parent_ranks: Vec<usize> = parent_out.iter().map(|o| o.predicted_rank()).collect();
        let pool = generate_candidates(
            problem,
            &parents,
            &parent_ranks,
            k_ranks,
            cfg.pool_size,
            cfg.eta_c,
            cfg.crossover_rate,
            &mut streams.variation,
        )?;
        let pool_out = predict_batch(&clf, &pool, mc.as_ref(), &mut streams.mc, &mut cache)?;
        let mean_s_used = pool_out.iter().map(|o| o.s_used as f64).sum::<f64>() / pool_out.len() as f64;

        let front = archive.pareto_front();
        let proxy = screen_scores(sur, &pool, &pool_out, &front, &work)?;
        let screened = screen(&proxy, cfg.n_screen);
        let top: Vec<usize> = screened.iter().copied().take(cfg.k).collect();

        let stats = window_stats(&buffer, cfg.acquisition.window);
        let mut preds: Vec<SurrogatePrediction> = Vec::with_capacity(top.len());
        let mut feats: Vec<FeatureVector> = Vec::with_capacity(top.len());
        for &i in &top {
            let p = sur.predict(&pool[i], sur_cfg.s_gp)?;
            feats.push(build_features(&p, &pool_out[i], stats)?);
            preds.push(p);
        }
        let s_sur: Vec<f64> = preds
            .iter()
            .map(|p| hv_contribution(&front, &p.f_hat, &work))
            .collect::<Result<_>>()?;
        let scores: Vec<f64> = match selection {
            Selection::Learned => {
                let sc = acq.score_batch(&feats)?;
                let s_hv: Vec<f64> = sc.iter().map(|s| s.0).collect();
                let s_div: Vec<f64> = sc.iter().map(|s| s.1).collect();
                let u: Vec<f64> = top.iter().map(|&i| pool_out[i].u_ep).collect();
                composite_scores(&s_hv, &s_div, &u, &s_sur, (cfg.alpha_hv, cfg.alpha_div, cfg.alpha_clf))
            }
            Selection::Static(w) => feats.iter().zip(&s_sur).map(|(f, s)| static_score(f, &w, *s)).collect(),
        };
        let normalized: Vec<Vec<f64>> = top.iter().map(|&i| problem.normalize(&pool[i])).collect();
        let existing: Vec<Vec<f64>> = parents.iter().map(|x| problem.normalize(x)).collect();
        let remaining = cfg.budget - archive.len();
        let q = cfg.q.min(remaining);
        let picked = greedy_select(&normalized, &scores, q, &existing);

        let mut batch_x: Vec<Vec<f64>> = picked.iter().map(|&j| pool[top[j]].clone()).collect();
        let mut batch_feat: Vec<FeatureVector> = picked.iter().map(|&j| feats[j].clone()).collect();
        while batch_x.len() < q {
            // Not enough distinct candidates: fill with uniform draws.
            let x: Vec<f64> = (0..problem.dim)
                .map(|d| problem.lower[d] + streams.baseline.gen::<f64>() * (problem.upper[d] - problem.lower[d]))
                .collect();
            let p = sur.predict(&x, sur_cfg.s_gp)?;
            let c = match mc.as_ref() {
                Some(m) => clf.predict_with_uncertainty(&x, m, &mut streams.mc)?,
                None => clf.predict_deterministic(&x)?,
            };
            batch_feat.push(build_features(&p, &c, stats)?);
            batch_x.push(x);
        }

        if let Some(tr) = oracle.as_deref_mut() {
            let mut fs = Vec::with_capacity(top.len());
            for &i in &top {
                fs.push(evaluate(problem, &pool[i])?);
            }
            tr.oracle_evaluations += fs.len();
            let base = archive.objectives();
            tr.oracle.push(greedy_oracle_gain(&base, &fs, q, &work)?);
        }

        let mut objs = archive.objectives();
        let mut div_before = diversity_of_front(&front_of(&objs));
        let start = archive.next_eval_index();
        let mut samples = Vec::with_capacity(batch_x.len());
        let mut realized = 0.0;
        for (n, (x, feat)) in batch_x.into_iter().zip(batch_feat).enumerate() {
            let f = evaluate(problem, &x)?;
            let dhv = delta_hv(&objs, &f, &work)?;
            realized += dhv;
            objs.push(f.clone());
            let div_after = diversity_of_front(&front_of(&objs));
            let ddiv = diversity_target(div_before, div_after, &mut buffer);
            div_before = div_after;
            let rec = HistoryRecord {
                feat,
                delta_hv: dhv,
                delta_div_norm: ddiv,
                eval_index: start + n,
            };
            buffer.push(rec.clone())?;
            history.push(rec);
            samples.push(Sample {
                x,
                f,
                eval_index: start + n,
            });
        }
        if let Some(tr) = oracle.as_deref_mut() {
            tr.realized.push(realized);
        }
        archive.insert(samples)?;

        let mut row = metrics.row(&archive, iteration, clock.seconds() - t0)?;
        row.mean_s_used = mean_s_used;
        row.refit = String::from(mode.as_str());
        row.epochs = sur_epochs;
        row.acq_loss = acq_loss;
        rows.push(row);
    }
    let mode = match (selection, disable.names().is_empty()) {
        (_, false) => format!("ablation:{}", disable.names().join("+")),
        (Selection::Learned, true) => String::from("neuropareto"),
        (Selection::Static(_), true) => String::from("static"),
    };
    Ok(RunResult {
        seed: cfg.seed,
        mode,
        rows,
        archive,
        history,
        temperatures,
        fits,
        work_ref: work.ref_point.clone(),
        report_ref: metrics.report.ref_point.clone(),
        feature_width: width,
    })
}

/// Full method.
pub fn run(problem: &ProblemSpec, cfg: &LoopConfig, clock: &mut dyn Clock) -> Result<RunResult> {
    run_inner(problem, cfg, Selection::Learned, Ablations::default(), clock, None)
}

/// Same pipeline, selection by the fixed linear score.
pub fn run_static_baseline(
    problem: &ProblemSpec,
    cfg: &LoopConfig,
    weights: [f64; 6],
    clock: &mut dyn Clock,
) -> Result<RunResult> {
    run_inner(problem, cfg, Selection::Static(weights), Ablations::default(), clock, None)
}

pub fn run_ablation(
    problem: &ProblemSpec,
    cfg: &LoopConfig,
    disable: Ablations,
    clock: &mut dyn Clock,
) -> Result<RunResult> {
    run_inner(problem, cfg, Selection::Learned, disable, clock, None)
}

/// Same initial design, then `q` uniform draws per iteration.
pub fn run_random_baseline(problem: &ProblemSpec, cfg: &LoopConfig, clock: &mut dyn Clock) -> Result<RunResult> {
    cfg.validate(problem)?;
    let mut streams = Streams::new(cfg.seed);
    let metrics = Metrics::new(problem)?;
    let t0 = clock.seconds();
    let mut archive = initial_design(problem, cfg, &mut streams)?;
    let work = hv_cfg(reference_point(&[&archive.objectives()]));
    let mut rows = vec![metrics.row(&archive, 0, clock.seconds() - t0)?];
    let mut iteration = 0;
    while archive.len() < cfg.budget {
        iteration += 1;
        let q = cfg.q.min(cfg.budget - archive.len());
        let mut pts = Vec::with_capacity(q);
        for _ in 0..q {
            let x: Vec<f64> = (0..problem.dim)
                .map(|d| problem.lower[d] + streams.baseline.gen::<f64>() * (problem.upper[d] - problem.lower[d]))
                .collect();
            let f = evaluate(problem, &x)?;
            pts.push((x, f));
        }
        archive.push_evaluated(pts)?;
        rows.push(metrics.row(&archive, iteration, clock.seconds() - t0)?);
    }
    Ok(RunResult {
        seed: cfg.seed,
        mode: String::from("random"),
        rows,
        archive,
        history: Vec::new(),
        temperatures: Vec::new(),
        fits: Vec::new(),
        work_ref: work.ref_point,
        report_ref: metrics.report.ref_point.clone(),
        feature_width: 0,
    })
}

/// Independent ΔHV recomputation for every history record from the archive
/// (records are attributed against all earlier evaluations). Returns the
/// largest absolute deviation.
pub fn replay_delta_hv(result: &RunResult) -> Result<f64> {
    let cfg = hv_cfg(result.work_ref.clone());
    let mut worst: f64 = 0.0;
    let samples = result.archive.samples();
    for rec in &result.history {
        let before: Vec<Vec<f64>> = samples
            .iter()
            .filter(|s| s.eval_index < rec.eval_index)
            .map(|s| s.f.clone())
            .collect();
        let me = samples
            .iter()
            .find(|s| s.eval_index == rec.eval_index)
            .ok_or_else(|| Error::Internal(format!("record {} missing from archive", rec.eval_index)))?;
        let d = delta_hv(&before, &me.f, &cfg)?;
        worst = worst.max(abs(d - rec.delta_hv));
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantsReport {
    pub l_h: LipschitzEstimate,
    pub h_max: f64,
    pub h_max_trials: usize,
    pub h_max_scenarios: usize,
    pub rho: f64,
    pub rho_scenarios: usize,
    pub rho_oracle_evaluations: usize,
    pub reference_point: Vec<f64>,
}

/// Runs the loop in oracle analysis mode and applies the three estimation
/// protocols. Refused above 10 decision variables.
pub fn estimate_constants(
    problem: &ProblemSpec,
    cfg: &LoopConfig,
    n_lh: usize,
    delta: f64,
    trials: usize,
    clock: &mut dyn Clock,
) -> Result<ConstantsReport> {
    if problem.dim > 10 {
        return Err(Error::Config(format!(
            "the rho oracle mode is limited to D <= 10 (got D = {}); oracle evaluations would be too costly",
            problem.dim
        )));
    }
    let mut trace = OracleTrace::default();
    let res = run_inner(problem, cfg, Selection::Learned, Ablations::default(), clock, Some(&mut trace))?;
    let hv = hv_cfg(res.work_ref.clone());
    let mut rng = rng::stream(cfg.seed, rng::streams::ANALYSIS);
    let l_h = estimate_l_h(problem, &res.archive, n_lh, delta, &hv, &mut rng)?;
    let n0 = cfg.initial_design_size(problem.dim).min(cfg.budget);
    let mut scenarios = Vec::new();
    let mut n = n0;
    loop {
        scenarios.push(res.archive.prefix(n).pareto_front());
        if n >= res.archive.len() {
            break;
        }
        n = (n + cfg.q).min(res.archive.len());
    }
    let h_max = estimate_h_max(&scenarios, trials, &hv, &mut rng)?;
    let rho = estimate_rho(&trace.oracle, &trace.realized)?;
    Ok(ConstantsReport {
        l_h,
        h_max,
        h_max_trials: trials,
        h_max_scenarios: scenarios.len(),
        rho,
        rho_scenarios: trace.oracle.iter().filter(|o| **o > 0.0).count(),
        rho_oracle_evaluations: trace.oracle_evaluations,
        reference_point: hv.ref_point,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{make_problem, ProblemName};

    #[test]
    fn eta_examples() {
        assert_eq!(mutation_eta(1.0, 5), 25.0);
        assert_eq!(mutation_eta(5.0, 5), 5.0);
    }

    #[test]
    fn zscores_and_argsort() {
        assert_eq!(zscores(&[2.0, 2.0]), vec![0.0, 0.0]);
        let z = zscores(&[1.0, 3.0]);
        assert!((z[0] + 1.0).abs() < 1e-12 && (z[1] - 1.0).abs() < 1e-12);
        assert_eq!(argsort_desc(&[1.0, 3.0, 3.0, 0.0]), vec![1, 2, 0, 3]);
    }

    #[test]
    fn greedy_dedups() {
        let xs = vec![vec![0.1, 0.1], vec![0.1, 0.1 + 1e-9], vec![0.5, 0.5]];
        assert_eq!(greedy_select(&xs, &[3.0, 2.0, 1.0], 3, &[]), vec![0, 2]);
        assert_eq!(greedy_select(&xs, &[3.0, 2.0, 1.0], 3, &[vec![0.5, 0.5]]), vec![0]);
    }

    #[test]
    fn candidates_in_bounds() {
        let p = make_problem(ProblemName::Zdt4, 6, 2).unwrap();
        let mut r = rng::stream(1, 0);
        let parents = latin_hypercube(10, &p.lower, &p.upper, &mut r);
        let ranks: Vec<usize> = (0..10).map(|i| i % 5 + 1).collect();
        let pool = generate_candidates(&p, &parents, &ranks, 5, 201, 15.0, 0.9, &mut r).unwrap();
        assert_eq!(pool.len(), 201);
        for x in &pool {
            assert!(p.check_decision(x).is_ok());
        }
    }

    #[test]
    fn config_rejects_q_above_k() {
        let p = make_problem(ProblemName::Dtlz2, 10, 2).unwrap();
        let cfg = LoopConfig {
            q: 60,
            ..LoopConfig::default()
        };
        match cfg.validate(&p) {
            Err(Error::Config(m)) => assert!(m.contains("60") && m.contains("50")),
            other => panic!("{other:?}"),
        }
    }
}
