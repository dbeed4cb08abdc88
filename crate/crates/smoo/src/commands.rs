//! Subcommand drivers. Each returns structured results and writes files
//! under the given output directory.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use log::info;
use serde::{Deserialize, Serialize};
use smoo_core::bench::{evaluate, latin_hypercube};
use smoo_core::optimizer::{
    estimate_constants, run, run_ablation, run_random_baseline, run_static_baseline, Ablations, Clock,
    ConstantsReport, NullClock, RunResult,
};
use smoo_core::pareto::{rank_labels, Archive};
use smoo_core::quality::{calibration_metrics, reliability_bins, CalibrationMetrics, ReliabilityBin, DEFAULT_BINS};
use smoo_core::rankclf::{mean_nll, stratified_split, ClassifierModel};
use smoo_core::rng::{self, streams};

use crate::config::{Mode, RunConfig};
use crate::output::{self, write_json, CONFIG_ECHO_FILE, SUMMARY_FILE};
use crate::stats::{spread, wilcoxon_signed_rank, Spread, WilcoxonResult};

pub const ALPHA: f64 = 0.05;
pub const CONSTANTS_N: usize = 500;
pub const CONSTANTS_DELTA: f64 = 0.01;
pub const CONSTANTS_TRIALS: usize = 200;

/// Wall-clock seconds since construction.
pub struct WallClock(Instant);

impl WallClock {
    pub fn new() -> Self {
        WallClock(Instant::now())
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn seconds(&mut self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

fn clock_for(cfg: &RunConfig) -> Box<dyn Clock> {
    if cfg.timing {
        Box::new(WallClock::new())
    } else {
        Box::new(NullClock)
    }
}

/// One seed of the configured mode.
pub fn run_seed(cfg: &RunConfig, mode: Mode, seed: u64) -> Result<RunResult> {
    let problem = cfg.problem_spec()?;
    let lc = cfg.loop_config(seed);
    let mut clock = clock_for(cfg);
    let res = match mode {
        Mode::Neuropareto => run(&problem, &lc, clock.as_mut()),
        Mode::Random => run_random_baseline(&problem, &lc, clock.as_mut()),
        Mode::Static => run_static_baseline(&problem, &lc, cfg.static_weights, clock.as_mut()),
        Mode::Ablation => run_ablation(&problem, &lc, cfg.ablation_set()?, clock.as_mut()),
    };
    res.with_context(|| format!("{} run failed for seed {seed}", mode.as_str()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFinal {
    pub seed: u64,
    pub hv: f64,
    pub igd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mode: String,
    pub ablations: Vec<String>,
    pub seeds: Vec<SeedFinal>,
    pub hv: Spread,
    pub igd: Spread,
}

pub fn summarize(mode: &str, ablations: Vec<String>, results: &[RunResult]) -> Summary {
    let seeds: Vec<SeedFinal> = results
        .iter()
        .map(|r| SeedFinal {
            seed: r.seed,
            hv: r.final_hv(),
            igd: r.final_igd(),
        })
        .collect();
    let hv: Vec<f64> = seeds.iter().map(|s| s.hv).collect();
    let igd: Vec<f64> = seeds.iter().map(|s| s.igd).collect();
    Summary {
        mode: mode.to_string(),
        ablations,
        hv: spread(&hv),
        igd: spread(&igd),
        seeds,
    }
}

fn mode_ablations(cfg: &RunConfig, mode: Mode) -> Result<Vec<String>> {
    Ok(match mode {
        Mode::Ablation => cfg.ablation_set()?.names().into_iter().map(String::from).collect(),
        _ => Vec::new(),
    })
}

/// Runs every seed, writing per-seed tables and dumps, then the summary.
pub fn cmd_run(cfg: &RunConfig, out: &Path, force: bool) -> Result<(Vec<RunResult>, Summary)> {
    output::prepare_dir(out, force)?;
    output::write_json(&out.join(CONFIG_ECHO_FILE), cfg)?;
    let mut results = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        info!("{} seed {seed}", cfg.mode.as_str());
        let res = run_seed(cfg, cfg.mode, seed)?;
        output::write_seed_outputs(out, &res).with_context(|| format!("writing outputs of seed {seed}"))?;
        info!("seed {seed}: hv {:.4} igd {:.4}", res.final_hv(), res.final_igd());
        results.push(res);
    }
    let summary = summarize(cfg.mode.as_str(), mode_ablations(cfg, cfg.mode)?, &results);
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    Ok((results, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTest {
    pub a: String,
    pub b: String,
    pub hv: WilcoxonResult,
    pub igd: WilcoxonResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub alpha: f64,
    pub seeds: Vec<u64>,
    pub modes: Vec<Summary>,
    pub tests: Vec<PairTest>,
}

/// Per-mode medians and pairwise signed-rank tests. All summaries must
/// cover the same seeds.
pub fn compare_summaries(summaries: &[Summary]) -> Result<Comparison> {
    if summaries.len() < 2 {
        bail!("compare needs at least two modes, got {}", summaries.len());
    }
    let seeds_of = |s: &Summary| {
        let mut v: Vec<u64> = s.seeds.iter().map(|r| r.seed).collect();
        v.sort_unstable();
        v
    };
    let seeds = seeds_of(&summaries[0]);
    for s in &summaries[1..] {
        if seeds_of(s) != seeds {
            bail!(
                "seed sets differ: {} has {:?} but {} has {:?}",
                summaries[0].mode,
                seeds,
                s.mode,
                seeds_of(s)
            );
        }
    }
    let by_seed = |s: &Summary, pick: fn(&SeedFinal) -> f64| -> Vec<f64> {
        let m: BTreeMap<u64, f64> = s.seeds.iter().map(|r| (r.seed, pick(r))).collect();
        seeds.iter().map(|k| m[k]).collect()
    };
    let mut tests = Vec::new();
    for i in 0..summaries.len() {
        for j in i + 1..summaries.len() {
            let (a, b) = (&summaries[i], &summaries[j]);
            tests.push(PairTest {
                a: a.mode.clone(),
                b: b.mode.clone(),
                hv: wilcoxon_signed_rank(&by_seed(a, |r| r.hv), &by_seed(b, |r| r.hv)),
                igd: wilcoxon_signed_rank(&by_seed(a, |r| r.igd), &by_seed(b, |r| r.igd)),
            });
        }
    }
    Ok(Comparison {
        alpha: ALPHA,
        seeds,
        modes: summaries.to_vec(),
        tests,
    })
}

/// Runs `modes` (default: neuropareto, random, static) over the configured
/// seeds into `out/<mode>/` and writes `comparison.json`.
pub fn cmd_compare(configs: &[(Mode, RunConfig)], out: &Path, force: bool) -> Result<Comparison> {
    output::prepare_dir(out, force)?;
    let mut summaries = Vec::new();
    for (mode, cfg) in configs {
        let mut c = cfg.clone();
        c.mode = *mode;
        let (_, s) = cmd_run(&c, &out.join(mode.as_str()), force)?;
        summaries.push(s);
    }
    let cmp = compare_summaries(&summaries)?;
    write_json(&out.join("comparison.json"), &cmp)?;
    Ok(cmp)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub full: Summary,
    pub variants: Vec<AblationVariant>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationVariant {
    pub disabled: String,
    pub summary: Summary,
    /// Seeds on which final IGD is strictly worse than the full method.
    pub igd_worse_seeds: usize,
    pub igd_test: WilcoxonResult,
}

/// Full method plus one run per disabled component (all four when the
/// config lists none).
pub fn cmd_ablate(cfg: &RunConfig, out: &Path, force: bool) -> Result<AblationReport> {
    output::prepare_dir(out, force)?;
    let mut names = cfg.ablations.clone();
    if names.is_empty() {
        names = Ablations::ALL.iter().map(|s| s.to_string()).collect();
    }
    let mut full_cfg = cfg.clone();
    full_cfg.mode = Mode::Neuropareto;
    full_cfg.ablations.clear();
    let (full_res, full) = cmd_run(&full_cfg, &out.join("full"), force)?;
    let mut variants = Vec::new();
    for name in names {
        let mut c = cfg.clone();
        c.mode = Mode::Ablation;
        c.ablations = vec![name.clone()];
        c.ablation_set()?;
        let (res, summary) = cmd_run(&c, &out.join(format!("no_{name}")), force)?;
        let worse = res
            .iter()
            .zip(&full_res)
            .filter(|(a, f)| a.final_igd() > f.final_igd())
            .count();
        let igd_test = wilcoxon_signed_rank(
            &res.iter().map(|r| r.final_igd()).collect::<Vec<_>>(),
            &full_res.iter().map(|r| r.final_igd()).collect::<Vec<_>>(),
        );
        variants.push(AblationVariant {
            disabled: name,
            summary,
            igd_worse_seeds: worse,
            igd_test,
        });
    }
    let report = AblationReport { full, variants };
    write_json(&out.join("ablation.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub seed: u64,
    pub design_size: usize,
    pub calibration_size: usize,
    pub temperature: f64,
    pub nll_before: f64,
    pub nll_after: f64,
    pub before: CalibrationMetrics,
    pub after: CalibrationMetrics,
    pub reliability_before: Vec<ReliabilityBin>,
    pub reliability_after: Vec<ReliabilityBin>,
}

fn confidences(logits: &[Vec<f64>], labels: &[usize], t: f64) -> Result<Vec<(f64, bool)>> {
    logits
        .iter()
        .zip(labels)
        .map(|(z, &y)| {
            let p = smoo_core::neural::softmax_temperature(z, t)?;
            let mut best = 0;
            for c in 1..p.len() {
                if p[c] > p[best] {
                    best = c;
                }
            }
            Ok((p[best].clamp(0.0, 1.0), best + 1 == y))
        })
        .collect()
}

/// Classifier trained on a `budget`-point Latin hypercube design; the
/// held-out calibration split drives both temperature fitting and the
/// before/after metrics.
pub fn calibrate_seed(cfg: &RunConfig, seed: u64) -> Result<CalibrationReport> {
    let problem = cfg.problem_spec()?;
    let mut design_rng = rng::stream(seed, streams::DESIGN);
    let mut clf_rng = rng::stream(seed, streams::CLASSIFIER);
    let xs = latin_hypercube(cfg.budget, &problem.lower, &problem.upper, &mut design_rng);
    let mut pts = Vec::with_capacity(xs.len());
    for x in xs {
        let f = evaluate(&problem, &x)?;
        pts.push((x, f));
    }
    let mut archive = Archive::new();
    archive.push_evaluated(pts)?;
    let k = cfg.classifier.k;
    let labels = rank_labels(archive.ranks(), k);
    let (train, calib) = stratified_split(&labels, cfg.classifier.calibration_fraction, &mut clf_rng);
    if calib.is_empty() {
        bail!("calibration split is empty; raise budget or calibration_fraction");
    }
    let decisions = archive.decisions();
    let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<usize>) {
        (idx.iter().map(|&i| decisions[i].clone()).collect(), idx.iter().map(|&i| labels[i]).collect())
    };
    let (tx, ty) = pick(&train);
    let (cx, cy) = pick(&calib);
    let mut model = ClassifierModel::new(&cfg.classifier, &problem.lower, &problem.upper, &mut clf_rng)?;
    model.fit(&tx, &ty, cfg.classifier.epochs, &mut clf_rng)?;
    let logits: Vec<Vec<f64>> = cx.iter().map(|x| model.logits(x)).collect::<smoo_core::Result<_>>()?;
    let t = model.fit_temperature(&cx, &cy)?;
    let before = confidences(&logits, &cy, 1.0)?;
    let after = confidences(&logits, &cy, t)?;
    Ok(CalibrationReport {
        seed,
        design_size: archive.len(),
        calibration_size: calib.len(),
        temperature: t,
        nll_before: mean_nll(&logits, &cy, 1.0),
        nll_after: mean_nll(&logits, &cy, t),
        before: calibration_metrics(&before, DEFAULT_BINS)?,
        after: calibration_metrics(&after, DEFAULT_BINS)?,
        reliability_before: reliability_bins(&before, DEFAULT_BINS)?,
        reliability_after: reliability_bins(&after, DEFAULT_BINS)?,
    })
}

pub fn write_reliability_csv(path: &Path, report: &CalibrationReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record([
        "bin_center",
        "confidence_before",
        "accuracy_before",
        "count_before",
        "confidence_after",
        "accuracy_after",
        "count_after",
    ])?;
    for (b, a) in report.reliability_before.iter().zip(&report.reliability_after) {
        w.write_record([
            b.center.to_string(),
            b.confidence.to_string(),
            b.accuracy.to_string(),
            b.count.to_string(),
            a.confidence.to_string(),
            a.accuracy.to_string(),
            a.count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_calibrate(cfg: &RunConfig, out: &Path, force: bool) -> Result<Vec<CalibrationReport>> {
    output::prepare_dir(out, force)?;
    write_json(&out.join(CONFIG_ECHO_FILE), cfg)?;
    let mut reports = Vec::new();
    for &seed in &cfg.seeds {
        let r = calibrate_seed(cfg, seed).with_context(|| format!("calibration failed for seed {seed}"))?;
        write_json(&out.join(format!("calibration_seed{seed}.json")), &r)?;
        write_reliability_csv(&out.join(format!("reliability_seed{seed}.csv")), &r)?;
        info!(
            "seed {seed}: T = {:.3}, ECE {:.4} -> {:.4}",
            r.temperature, r.before.ece, r.after.ece
        );
        reports.push(r);
    }
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantsProtocol {
    pub n: usize,
    pub delta: f64,
    pub trials: usize,
    pub rho_statistic: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantsOutput {
    pub seed: u64,
    pub protocol: ConstantsProtocol,
    pub l_h: f64,
    pub h_max: f64,
    pub rho: f64,
    pub details: ConstantsReport,
}

pub fn constants_seed(cfg: &RunConfig, seed: u64) -> Result<ConstantsOutput> {
    let problem = cfg.problem_spec()?;
    let lc = cfg.loop_config(seed);
    let mut clock = clock_for(cfg);
    let details = estimate_constants(&problem, &lc, CONSTANTS_N, CONSTANTS_DELTA, CONSTANTS_TRIALS, clock.as_mut())
        .with_context(|| format!("constants estimation failed for seed {seed}"))?;
    Ok(ConstantsOutput {
        seed,
        protocol: ConstantsProtocol {
            n: CONSTANTS_N,
            delta: CONSTANTS_DELTA,
            trials: CONSTANTS_TRIALS,
            rho_statistic: "median".into(),
        },
        l_h: details.l_h.value,
        h_max: details.h_max,
        rho: details.rho,
        details,
    })
}

pub fn cmd_constants(cfg: &RunConfig, out: &Path, force: bool) -> Result<Vec<ConstantsOutput>> {
    output::prepare_dir(out, force)?;
    write_json(&out.join(CONFIG_ECHO_FILE), cfg)?;
    let mut all = Vec::new();
    for &seed in &cfg.seeds {
        let r = constants_seed(cfg, seed)?;
        write_json(&out.join(format!("constants_seed{seed}.json")), &r)?;
        info!("seed {seed}: L_H {:.4} H_max {:.4} rho {:.3}", r.l_h, r.h_max, r.rho);
        all.push(r);
    }
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(mode: &str, vals: &[(u64, f64, f64)]) -> Summary {
        let rs: Vec<SeedFinal> = vals.iter().map(|&(seed, hv, igd)| SeedFinal { seed, hv, igd }).collect();
        Summary {
            mode: mode.into(),
            ablations: vec![],
            hv: spread(&rs.iter().map(|r| r.hv).collect::<Vec<_>>()),
            igd: spread(&rs.iter().map(|r| r.igd).collect::<Vec<_>>()),
            seeds: rs,
        }
    }

    #[test]
    fn identical_modes_are_no_effect() {
        let a = summary("neuropareto", &[(1, 2.0, 0.3), (2, 2.1, 0.2)]);
        let mut b = a.clone();
        b.mode = "random".into();
        let c = compare_summaries(&[a, b]).unwrap();
        assert_eq!(c.tests[0].hv.p_value, 1.0);
        assert_eq!(c.tests[0].igd.p_value, 1.0);
        assert_eq!(c.alpha, 0.05);
    }

    #[test]
    fn dominating_mode_six_seeds() {
        let a: Vec<(u64, f64, f64)> = (0..6).map(|i| (i, 3.0 + i as f64 * 0.1, 0.1)).collect();
        let b: Vec<(u64, f64, f64)> = (0..6).map(|i| (i, 2.0 + i as f64 * 0.01, 0.5)).collect();
        let c = compare_summaries(&[summary("neuropareto", &a), summary("random", &b)]).unwrap();
        assert_eq!(c.tests[0].hv.p_value, 0.03125);
        assert_eq!(c.tests[0].igd.p_value, 0.03125);
    }

    #[test]
    fn mismatched_seeds_rejected() {
        let a = summary("neuropareto", &[(1, 2.0, 0.3), (2, 2.1, 0.2)]);
        let b = summary("random", &[(1, 2.0, 0.3), (3, 2.1, 0.2)]);
        let e = compare_summaries(&[a, b]).unwrap_err();
        assert!(e.to_string().contains("seed sets differ"));
    }
}
