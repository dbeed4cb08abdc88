//! Dominance, nondominated sorting, rank labels, crowding distance and the
//! evaluation archive. All objectives are minimized.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// `a` dominates `b`: no worse everywhere, strictly better somewhere.
pub fn dominates(a: &[f64], b: &[f64]) -> Result<bool> {
    if a.len() != b.len() {
        return Err(Error::Domain(format!(
            "dominance between vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(dominates_unchecked(a, b))
}

#[inline]
pub(crate) fn dominates_unchecked(a: &[f64], b: &[f64]) -> bool {
    let mut strict = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        if x < y {
            strict = true;
        }
    }
    strict
}

/// Front index (1-based) of every point by iterative peeling.
///
/// Fast nondominated sort: `O(M N²)` comparisons, one pass per front.
pub fn nondominated_sort(points: &[Vec<f64>]) -> Vec<usize> {
    let n = points.len();
    let mut dominated_by_count = vec![0usize; n];
    let mut dominates_list: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            if dominates_unchecked(&points[i], &points[j]) {
                dominates_list[i].push(j);
                dominated_by_count[j] += 1;
            } else if dominates_unchecked(&points[j], &points[i]) {
                dominates_list[j].push(i);
                dominated_by_count[i] += 1;
            }
        }
    }
    let mut fronts = vec![0usize; n];
    let mut current: Vec<usize> = (0..n).filter(|&i| dominated_by_count[i] == 0).collect();
    let mut rank = 1;
    while !current.is_empty() {
        let mut next = Vec::new();
        for &p in &current {
            fronts[p] = rank;
            for &q in &dominates_list[p] {
                dominated_by_count[q] -= 1;
                if dominated_by_count[q] == 0 {
                    next.push(q);
                }
            }
        }
        next.sort_unstable();
        current = next;
        rank += 1;
    }
    fronts
}

/// Caps front indices at `k`: deeper fronts collapse into the worst label.
pub fn rank_labels(fronts: &[usize], k: usize) -> Vec<usize> {
    fronts.iter().map(|&f| f.clamp(1, k)).collect()
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

/// Indices of the nondominated members of `points`, in input order.
///
/// Uses a sort-and-scan for two objectives, a staircase sweep for three and
/// pairwise checks otherwise.
pub fn nondominated_indices(points: &[Vec<f64>]) -> Vec<usize> {
    if points.is_empty() {
        return Vec::new();
    }
    let m = points[0].len();
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| lex_cmp(&points[a], &points[b]).then(a.cmp(&b)));
    let mut keep = vec![false; points.len()];
    match m {
        2 => {
            let mut best: Option<(f64, f64)> = None;
            for &i in &order {
                let p = &points[i];
                let dominated = match best {
                    Some((f1, f2)) => f2 < p[1] || (f2 == p[1] && f1 < p[0]),
                    None => false,
                };
                if !dominated {
                    keep[i] = true;
                    match best {
                        Some((_, f2)) if f2 <= p[1] => {}
                        _ => best = Some((p[0], p[1])),
                    }
                }
            }
        }
        3 => {
            // staircase over (f2, f3): a ascending, b strictly descending
            let mut stair: Vec<(f64, f64)> = Vec::new();
            let mut prev: Option<&[f64]> = None;
            let mut prev_kept = false;
            for &i in &order {
                let p = &points[i];
                if let Some(q) = prev {
                    if q == p.as_slice() {
                        keep[i] = prev_kept;
                        continue;
                    }
                }
                let pos = stair.partition_point(|&(a, _)| a <= p[1]);
                let dominated = pos > 0 && stair[pos - 1].1 <= p[2];
                prev = Some(p);
                prev_kept = !dominated;
                if dominated {
                    continue;
                }
                keep[i] = true;
                let start = stair.partition_point(|&(a, _)| a < p[1]);
                let mut end = start;
                while end < stair.len() && stair[end].1 >= p[2] {
                    end += 1;
                }
                stair.splice(start..end, core::iter::once((p[1], p[2])));
            }
        }
        _ => {
            for i in 0..points.len() {
                keep[i] = !points
                    .iter()
                    .any(|q| dominates_unchecked(q, &points[i]));
            }
        }
    }
    (0..points.len()).filter(|&i| keep[i]).collect()
}

/// Crowding distance of each member of a (mutually nondominated) front.
///
/// Interior points sum their normalized neighbour gaps over objectives.
/// Extreme points of any non-degenerate objective, and every member of a
/// front with fewer than three points, get the constant `2M`. Objectives with
/// zero span contribute nothing.
pub fn crowding_distance(front: &[Vec<f64>]) -> Vec<f64> {
    let n = front.len();
    if n == 0 {
        return Vec::new();
    }
    let m = front[0].len();
    let boundary = 2.0 * m as f64;
    if n < 3 {
        return vec![boundary; n];
    }
    let mut cd = vec![0.0; n];
    let mut is_boundary = vec![false; n];
    let mut order: Vec<usize> = (0..n).collect();
    for obj in 0..m {
        order.sort_by(|&a, &b| {
            front[a][obj]
                .total_cmp(&front[b][obj])
                .then_with(|| lex_cmp(&front[a], &front[b]))
                .then(a.cmp(&b))
        });
        let lo = front[order[0]][obj];
        let hi = front[order[n - 1]][obj];
        let span = hi - lo;
        if !(span > 0.0) {
            continue;
        }
        is_boundary[order[0]] = true;
        is_boundary[order[n - 1]] = true;
        for w in 1..(n - 1) {
            let gap = front[order[w + 1]][obj] - front[order[w - 1]][obj];
            cd[order[w]] += gap / span;
        }
    }
    for i in 0..n {
        if is_boundary[i] {
            cd[i] = boundary;
        }
    }
    cd
}

/// One true evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub f: Vec<f64>,
    pub eval_index: usize,
}

/// All true evaluations so far, with nondomination ranks kept in sync.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Archive {
    samples: Vec<Sample>,
    ranks: Vec<usize>,
}

impl Archive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    /// Cached front index of every sample (1-based).
    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    pub fn objectives(&self) -> Vec<Vec<f64>> {
        self.samples.iter().map(|s| s.f.clone()).collect()
    }

    pub fn decisions(&self) -> Vec<Vec<f64>> {
        self.samples.iter().map(|s| s.x.clone()).collect()
    }

    pub fn next_eval_index(&self) -> usize {
        self.samples
            .iter()
            .map(|s| s.eval_index + 1)
            .max()
            .unwrap_or(0)
    }

    /// Appends a batch and re-sorts the whole archive.
    pub fn insert(&mut self, batch: Vec<Sample>) -> Result<()> {
        for (i, s) in batch.iter().enumerate() {
            let clash = self.samples.iter().any(|o| o.eval_index == s.eval_index)
                || batch[..i].iter().any(|o| o.eval_index == s.eval_index);
            if clash {
                return Err(Error::Internal(format!(
                    "duplicate eval_index {} in archive",
                    s.eval_index
                )));
            }
            if let Some(first) = self.samples.first().or(batch.first()) {
                if first.f.len() != s.f.len() {
                    return Err(Error::Domain(format!(
                        "objective length {} does not match archive ({})",
                        s.f.len(),
                        first.f.len()
                    )));
                }
            }
        }
        self.samples.extend(batch);
        self.ranks = nondominated_sort(&self.objectives());
        Ok(())
    }

    /// Appends evaluated points with fresh consecutive eval indices.
    pub fn push_evaluated(&mut self, points: Vec<(Vec<f64>, Vec<f64>)>) -> Result<()> {
        let start = self.next_eval_index();
        let batch = points
            .into_iter()
            .enumerate()
            .map(|(i, (x, f))| Sample {
                x,
                f,
                eval_index: start + i,
            })
            .collect();
        self.insert(batch)
    }

    pub fn pareto_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.ranks[i] == 1).collect()
    }

    pub fn pareto_front(&self) -> Vec<Vec<f64>> {
        self.pareto_indices()
            .into_iter()
            .map(|i| self.samples[i].f.clone())
            .collect()
    }

    /// Archive restricted to its first `n` evaluations (by eval index).
    pub fn prefix(&self, n: usize) -> Archive {
        let mut samples: Vec<Sample> = self.samples.clone();
        samples.sort_by_key(|s| s.eval_index);
        samples.truncate(n);
        let ranks = nondominated_sort(&samples.iter().map(|s| s.f.clone()).collect::<Vec<_>>());
        Archive { samples, ranks }
    }

    /// Rebuilds an archive from stored samples, recomputing ranks.
    pub fn from_samples(samples: Vec<Sample>) -> Result<Archive> {
        let mut a = Archive::new();
        a.insert(samples)?;
        Ok(a)
    }
}

/// Mean finite crowding distance of a front.
pub fn diversity_of_front(front: &[Vec<f64>]) -> f64 {
    let cd = crowding_distance(front);
    let finite: Vec<f64> = cd.into_iter().filter(|v| v.is_finite()).collect();
    crate::math::mean(&finite)
}

/// Archive diversity: mean crowding distance of the nondominated subset.
pub fn archive_diversity(archive: &Archive) -> f64 {
    diversity_of_front(&archive.pareto_front())
}
