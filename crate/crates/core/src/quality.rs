//! Solution-quality indicators, calibration metrics and the empirical
//! constant-estimation protocols.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bench::{evaluate, ProblemSpec};
use crate::math::{euclidean, floor, l1_norm, median, quantile, sqrt, total_cmp};
use crate::pareto::{nondominated_indices, Archive};
use crate::rng::{stream, streams};
use crate::{Error, Result};

const MC_SEED: u64 = 0x5eed_0f_4856;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HvConfig {
    pub ref_point: Vec<f64>,
    /// Draws used when `M > 3`.
    pub mc_samples: usize,
}

impl HvConfig {
    pub fn new(ref_point: Vec<f64>) -> Self {
        HvConfig {
            ref_point,
            mc_samples: 100_000,
        }
    }
}

/// Componentwise max of the joined sets, pushed outward by 10% of its
/// magnitude (`max · 1.1` for positive maxima).
pub fn reference_point(sets: &[&[Vec<f64>]]) -> Vec<f64> {
    let m = sets
        .iter()
        .find_map(|s| s.first().map(|p| p.len()))
        .unwrap_or(0);
    let mut z = vec![f64::NEG_INFINITY; m];
    for set in sets {
        for p in set.iter() {
            for (zi, v) in z.iter_mut().zip(p) {
                *zi = zi.max(*v);
            }
        }
    }
    z.into_iter()
        .map(|v| {
            let bump = 0.1 * v.abs();
            if bump > 0.0 {
                v + bump
            } else {
                v + 0.1
            }
        })
        .collect()
}

pub fn igd(solutions: &[Vec<f64>], reference: &[Vec<f64>]) -> Result<f64> {
    if solutions.is_empty() || reference.is_empty() {
        return Err(Error::Domain("IGD needs nonempty solution and reference sets".into()));
    }
    let m = reference[0].len();
    if solutions.iter().chain(reference).any(|p| p.len() != m) {
        return Err(Error::Domain("IGD sets have inconsistent objective counts".into()));
    }
    let total: f64 = reference
        .iter()
        .map(|r| {
            solutions
                .iter()
                .map(|s| euclidean(r, s))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    Ok(total / reference.len() as f64)
}

fn check_ref(points: &[Vec<f64>], cfg: &HvConfig) -> Result<()> {
    let m = cfg.ref_point.len();
    if m < 2 {
        return Err(Error::Domain(format!("hypervolume needs M >= 2; got {m}")));
    }
    if let Some(p) = points.iter().find(|p| p.len() != m) {
        return Err(Error::Domain(format!(
            "point has {} objectives but the reference point has {m}",
            p.len()
        )));
    }
    Ok(())
}

/// Points that strictly dominate the reference point, reduced to their
/// nondominated subset.
fn relevant(points: &[Vec<f64>], z: &[f64]) -> Vec<Vec<f64>> {
    let inside: Vec<Vec<f64>> = points
        .iter()
        .filter(|p| p.iter().zip(z).all(|(a, b)| a < b))
        .cloned()
        .collect();
    if inside.is_empty() {
        return inside;
    }
    nondominated_indices(&inside)
        .into_iter()
        .map(|i| inside[i].clone())
        .collect()
}

/// Exact hypervolume for `M ≤ 3` and the seeded Monte Carlo estimate beyond.
pub fn hypervolume(points: &[Vec<f64>], cfg: &HvConfig) -> Result<f64> {
    check_ref(points, cfg)?;
    if cfg.ref_point.len() <= 3 {
        Ok(hypervolume_exact_unchecked(points, &cfg.ref_point))
    } else {
        Ok(hypervolume_mc(points, cfg)?.0)
    }
}

/// Exact hypervolume by dimension sweep for any `M` (exponential in `M`).
pub fn hypervolume_exact(points: &[Vec<f64>], cfg: &HvConfig) -> Result<f64> {
    check_ref(points, cfg)?;
    Ok(hypervolume_exact_unchecked(points, &cfg.ref_point))
}

fn hypervolume_exact_unchecked(points: &[Vec<f64>], z: &[f64]) -> f64 {
    let pts = relevant(points, z);
    if pts.is_empty() {
        return 0.0;
    }
    sweep(pts, z)
}

fn sweep(mut pts: Vec<Vec<f64>>, z: &[f64]) -> f64 {
    let m = z.len();
    if m == 1 {
        let best = pts.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        return (z[0] - best).max(0.0);
    }
    if m == 2 {
        pts.sort_by(|a, b| total_cmp(&a[0], &b[0]).then(total_cmp(&a[1], &b[1])));
        let mut area = 0.0;
        let mut best_y = z[1];
        for p in &pts {
            if p[1] < best_y {
                area += (z[0] - p[0]) * (best_y - p[1]);
                best_y = p[1];
            }
        }
        return area;
    }
    let last = m - 1;
    pts.sort_by(|a, b| total_cmp(&a[last], &b[last]));
    let mut volume = 0.0;
    let mut slice: Vec<Vec<f64>> = Vec::with_capacity(pts.len());
    for i in 0..pts.len() {
        slice.push(pts[i][..last].to_vec());
        let top = if i + 1 < pts.len() { pts[i + 1][last] } else { z[last] };
        let height = top - pts[i][last];
        if height > 0.0 {
            let keep = nondominated_indices(&slice);
            slice = keep.into_iter().map(|j| slice[j].clone()).collect();
            volume += height * sweep(slice.clone(), &z[..last]);
        }
    }
    volume
}

/// Monte Carlo hypervolume over `[min corner, z]` from a stream independent of
/// the search. Returns the estimate and its binomial standard error.
pub fn hypervolume_mc(points: &[Vec<f64>], cfg: &HvConfig) -> Result<(f64, f64)> {
    check_ref(points, cfg)?;
    let z = &cfg.ref_point;
    let pts = relevant(points, z);
    if pts.is_empty() || cfg.mc_samples == 0 {
        return Ok((0.0, 0.0));
    }
    let m = z.len();
    let lo: Vec<f64> = (0..m)
        .map(|j| pts.iter().map(|p| p[j]).fold(f64::INFINITY, f64::min))
        .collect();
    let box_volume: f64 = lo.iter().zip(z).map(|(a, b)| b - a).product();
    let mut rng = stream(MC_SEED, streams::HYPERVOLUME);
    let mut sample = vec![0.0; m];
    let mut hits = 0usize;
    for _ in 0..cfg.mc_samples {
        for j in 0..m {
            sample[j] = lo[j] + rng.gen::<f64>() * (z[j] - lo[j]);
        }
        if pts
            .iter()
            .any(|p| p.iter().zip(&sample).all(|(a, b)| a <= b))
        {
            hits += 1;
        }
    }
    let n = cfg.mc_samples as f64;
    let frac = hits as f64 / n;
    Ok((box_volume * frac, box_volume * sqrt(frac * (1.0 - frac) / n)))
}

/// `HV(archive ∪ {new}) − HV(archive)`, clamped at zero.
pub fn delta_hv(archive_points: &[Vec<f64>], new_point: &[f64], cfg: &HvConfig) -> Result<f64> {
    check_ref(archive_points, cfg)?;
    check_ref(core::slice::from_ref(&new_point.to_vec()), cfg)?;
    if !new_point.iter().zip(&cfg.ref_point).all(|(a, b)| a < b)
        || archive_points
            .iter()
            .any(|p| p.iter().zip(new_point).all(|(a, b)| a <= b))
    {
        return Ok(0.0);
    }
    let before = hypervolume(archive_points, cfg)?;
    let mut joined = archive_points.to_vec();
    joined.push(new_point.to_vec());
    let after = hypervolume(&joined, cfg)?;
    Ok((after - before).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMetrics {
    pub ece: f64,
    pub mce: f64,
    pub ace: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub center: f64,
    pub confidence: f64,
    pub accuracy: f64,
    pub count: usize,
}

pub const DEFAULT_BINS: usize = 15;

/// Per-bin confidence/accuracy over equal-width bins of `[0, 1]`. Empty bins
/// report zero confidence and accuracy.
pub fn reliability_bins(confidences: &[(f64, bool)], bins: usize) -> Result<Vec<ReliabilityBin>> {
    if bins == 0 {
        return Err(Error::Domain("calibration needs at least one bin".into()));
    }
    let mut conf = vec![0.0; bins];
    let mut acc = vec![0.0; bins];
    let mut count = vec![0usize; bins];
    for &(c, correct) in confidences {
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::Domain(format!("confidence {c} outside [0, 1]")));
        }
        let b = (floor(c * bins as f64) as usize).min(bins - 1);
        conf[b] += c;
        acc[b] += if correct { 1.0 } else { 0.0 };
        count[b] += 1;
    }
    Ok((0..bins)
        .map(|b| {
            let n = count[b].max(1) as f64;
            ReliabilityBin {
                center: (b as f64 + 0.5) / bins as f64,
                confidence: conf[b] / n,
                accuracy: acc[b] / n,
                count: count[b],
            }
        })
        .collect())
}

pub fn calibration_metrics(confidences: &[(f64, bool)], bins: usize) -> Result<CalibrationMetrics> {
    if confidences.is_empty() {
        return Err(Error::Domain("calibration metrics need at least one prediction".into()));
    }
    let table = reliability_bins(confidences, bins)?;
    let n = confidences.len() as f64;
    let mut ece = 0.0;
    let mut mce: f64 = 0.0;
    let mut gap_sum = 0.0;
    let mut nonempty = 0usize;
    for b in table.iter().filter(|b| b.count > 0) {
        let gap = (b.accuracy - b.confidence).abs();
        ece += b.count as f64 / n * gap;
        mce = mce.max(gap);
        gap_sum += gap;
        nonempty += 1;
    }
    Ok(CalibrationMetrics {
        ece,
        mce,
        ace: gap_sum / nonempty as f64,
    })
}

/// Hypervolume contribution of `y` with respect to `front` (with `y` itself
/// removed from the context if present).
pub fn hv_contribution(front: &[Vec<f64>], y: &[f64], cfg: &HvConfig) -> Result<f64> {
    let others: Vec<Vec<f64>> = front.iter().filter(|p| p.as_slice() != y).cloned().collect();
    delta_hv(&others, y, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    pub value: f64,
    pub samples: usize,
    pub used: usize,
    pub skipped: usize,
    pub delta: f64,
    pub quantile: f64,
}

/// 95% quantile of `|HVC(y) − HVC(y(1+δ))| / ‖δ y‖₁` over `n` decisions drawn
/// by jittering archive members by 5% of each coordinate's span. Contributions
/// are measured against the archive's rank-1 set.
pub fn estimate_l_h<R: Rng + ?Sized>(
    problem: &ProblemSpec,
    archive: &Archive,
    n: usize,
    delta: f64,
    cfg: &HvConfig,
    rng: &mut R,
) -> Result<LipschitzEstimate> {
    if n < 10 || !(delta > 0.0) {
        return Err(Error::Domain(format!(
            "L_H protocol needs N >= 10 and delta > 0; got N = {n}, delta = {delta}"
        )));
    }
    if archive.is_empty() {
        return Err(Error::Estimation("L_H protocol needs a nonempty archive".into()));
    }
    let front = archive.pareto_front();
    let samples = archive.samples();
    let mut ratios = Vec::with_capacity(n);
    let mut skipped = 0;
    for _ in 0..n {
        let base = &samples[rng.gen_range(0..samples.len())].x;
        let mut x: Vec<f64> = base
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let span = problem.upper[i] - problem.lower[i];
                v + (rng.gen::<f64>() * 2.0 - 1.0) * 0.05 * span
            })
            .collect();
        problem.clip(&mut x);
        let y = evaluate(problem, &x)?;
        let y2: Vec<f64> = y.iter().map(|v| v * (1.0 + delta)).collect();
        let diff: Vec<f64> = y.iter().zip(&y2).map(|(a, b)| a - b).collect();
        let norm = l1_norm(&diff);
        if !(norm > 0.0) {
            skipped += 1;
            continue;
        }
        let h1 = hv_contribution(&front, &y, cfg)?;
        let h2 = hv_contribution(&front, &y2, cfg)?;
        ratios.push((h1 - h2).abs() / norm);
    }
    if ratios.is_empty() {
        return Err(Error::Estimation("every L_H perturbation was degenerate".into()));
    }
    let value = quantile(&ratios, 0.95).unwrap_or(0.0);
    Ok(LipschitzEstimate {
        value,
        samples: n,
        used: ratios.len(),
        skipped,
        delta,
        quantile: 0.95,
    })
}

/// Largest single-evaluation HV loss when one member of a scenario is replaced
/// by the worst-case candidate (the reference point itself).
pub fn estimate_h_max<R: Rng + ?Sized>(
    scenarios: &[Vec<Vec<f64>>],
    trials: usize,
    cfg: &HvConfig,
    rng: &mut R,
) -> Result<f64> {
    if trials == 0 {
        return Err(Error::Domain("H_max protocol needs at least one trial".into()));
    }
    let usable: Vec<&Vec<Vec<f64>>> = scenarios.iter().filter(|s| !s.is_empty()).collect();
    if usable.is_empty() {
        return Ok(0.0);
    }
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let set = usable[rng.gen_range(0..usable.len())];
        let before = hypervolume(set, cfg)?;
        let victim = rng.gen_range(0..set.len());
        let mut replaced = set.clone();
        replaced[victim] = cfg.ref_point.clone();
        let after = hypervolume(&replaced, cfg)?;
        worst = worst.max(before - after);
    }
    Ok(worst)
}

/// Median of realized/oracle gain ratios, skipping zero oracle gains.
pub fn estimate_rho(oracle_gains: &[f64], realized_gains: &[f64]) -> Result<f64> {
    if oracle_gains.len() != realized_gains.len() || oracle_gains.is_empty() {
        return Err(Error::Domain(
            "rho protocol needs equal-length, nonempty gain lists".into(),
        ));
    }
    let ratios: Vec<f64> = oracle_gains
        .iter()
        .zip(realized_gains)
        .filter(|(o, _)| **o > 0.0)
        .map(|(o, r)| r / o)
        .collect();
    median(&ratios).ok_or_else(|| Error::Estimation("every oracle gain was zero".into()))
}

/// Rule-of-thumb upper bound on the rank count: `⌊B / N_min⌋`.
pub fn suggest_k(budget: usize, n_min: usize) -> Result<usize> {
    if n_min == 0 || budget < n_min {
        return Err(Error::Domain(format!(
            "suggest_K needs B >= N_min >= 1; got B = {budget}, N_min = {n_min}"
        )));
    }
    Ok(budget / n_min)
}
