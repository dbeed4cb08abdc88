//! DTLZ1–7 and ZDT1–4,6 benchmark problems, their analytic Pareto fronts and
//! Latin hypercube designs.
//!
//! Formulas follow the canonical suite definitions (Deb et al. 2002 for DTLZ,
//! Zitzler, Deb & Thiele 2000 for ZDT), with `k = D − M + 1` distance
//! variables for DTLZ and all objectives minimized:
//!
//! | problem | distance function `g` | shape |
//! |---|---|---|
//! | DTLZ1 | `100 [k + Σ ((x−½)² − cos 20π(x−½))]` | linear, `Σ f = ½` |
//! | DTLZ2 | `Σ (x−½)²` | unit sphere octant |
//! | DTLZ3 | as DTLZ1 | unit sphere octant |
//! | DTLZ4 | as DTLZ2, position variables raised to `α = 100` | unit sphere octant |
//! | DTLZ5 | `Σ (x−½)²`, `θᵢ = π(1+2g xᵢ) / (4(1+g))` for `i ≥ 2` | degenerate curve |
//! | DTLZ6 | `Σ x^0.1`, angles as DTLZ5 | degenerate curve |
//! | DTLZ7 | `1 + 9/k Σ x` | disconnected, `f_M = (1+g) h` |
//! | ZDT1 | `1 + 9/(D−1) Σ x` | `1 − √f₁` |
//! | ZDT2 | as ZDT1 | `1 − f₁²` |
//! | ZDT3 | as ZDT1 | `1 − √f₁ − f₁ sin 10πf₁`, disconnected |
//! | ZDT4 | `1 + 10(D−1) + Σ (x² − 10 cos 4πx)`, tail in `[−5, 5]` | `1 − √f₁` |
//! | ZDT6 | `1 + 9 (Σ x / (D−1))^¼`, `f₁ = 1 − e^{−4x₁} sin⁶ 6πx₁` | `1 − f₁²` |

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::math::{cos, exp, pow, sin, sqrt, PI};
use crate::pareto::nondominated_indices;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemName {
    Dtlz1,
    Dtlz2,
    Dtlz3,
    Dtlz4,
    Dtlz5,
    Dtlz6,
    Dtlz7,
    Zdt1,
    Zdt2,
    Zdt3,
    Zdt4,
    Zdt6,
}

impl ProblemName {
    pub const ALL: [ProblemName; 12] = [
        ProblemName::Dtlz1,
        ProblemName::Dtlz2,
        ProblemName::Dtlz3,
        ProblemName::Dtlz4,
        ProblemName::Dtlz5,
        ProblemName::Dtlz6,
        ProblemName::Dtlz7,
        ProblemName::Zdt1,
        ProblemName::Zdt2,
        ProblemName::Zdt3,
        ProblemName::Zdt4,
        ProblemName::Zdt6,
    ];

    pub fn is_zdt(self) -> bool {
        matches!(
            self,
            ProblemName::Zdt1 | ProblemName::Zdt2 | ProblemName::Zdt3 | ProblemName::Zdt4 | ProblemName::Zdt6
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ProblemName::Dtlz1 => "dtlz1",
            ProblemName::Dtlz2 => "dtlz2",
            ProblemName::Dtlz3 => "dtlz3",
            ProblemName::Dtlz4 => "dtlz4",
            ProblemName::Dtlz5 => "dtlz5",
            ProblemName::Dtlz6 => "dtlz6",
            ProblemName::Dtlz7 => "dtlz7",
            ProblemName::Zdt1 => "zdt1",
            ProblemName::Zdt2 => "zdt2",
            ProblemName::Zdt3 => "zdt3",
            ProblemName::Zdt4 => "zdt4",
            ProblemName::Zdt6 => "zdt6",
        }
    }
}

impl fmt::Display for ProblemName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProblemName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        ProblemName::ALL
            .iter()
            .copied()
            .find(|p| p.as_str() == lower)
            .ok_or_else(|| Error::Config(format!("unknown problem `{s}`")))
    }
}

/// A bounded benchmark problem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub name: ProblemName,
    pub dim: usize,
    pub n_obj: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

pub fn make_problem(name: ProblemName, dim: usize, n_obj: usize) -> Result<ProblemSpec> {
    if name.is_zdt() {
        if n_obj != 2 {
            return Err(Error::Config(format!(
                "{name} is bi-objective; got M = {n_obj}"
            )));
        }
        if dim < 2 {
            return Err(Error::Config(format!("{name} needs D >= 2; got D = {dim}")));
        }
    } else {
        if ![2, 3, 5].contains(&n_obj) {
            return Err(Error::Config(format!(
                "{name} supports M in {{2, 3, 5}}; got M = {n_obj}"
            )));
        }
        if dim < n_obj + 1 {
            return Err(Error::Config(format!(
                "{name} needs D >= M + 1 = {}; got D = {dim}",
                n_obj + 1
            )));
        }
    }
    let lower = if name == ProblemName::Zdt4 {
        let mut l = vec![-5.0; dim];
        l[0] = 0.0;
        l
    } else {
        vec![0.0; dim]
    };
    let upper = if name == ProblemName::Zdt4 {
        let mut u = vec![5.0; dim];
        u[0] = 1.0;
        u
    } else {
        vec![1.0; dim]
    };
    Ok(ProblemSpec {
        name,
        dim,
        n_obj,
        lower,
        upper,
    })
}

impl ProblemSpec {
    /// Default reference front size: 1000 points for two objectives, 5000
    /// otherwise.
    pub fn default_front_size(&self) -> usize {
        if self.n_obj == 2 {
            1000
        } else {
            5000
        }
    }

    pub fn check_decision(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Domain(format!(
                "decision vector has length {}, problem expects {}",
                x.len(),
                self.dim
            )));
        }
        for (i, v) in x.iter().enumerate() {
            if !v.is_finite() || *v < self.lower[i] || *v > self.upper[i] {
                return Err(Error::Domain(format!(
                    "coordinate {i} = {v} outside [{}, {}]",
                    self.lower[i], self.upper[i]
                )));
            }
        }
        Ok(())
    }

    /// Maps a decision vector to the unit box.
    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, v)| (v - self.lower[i]) / (self.upper[i] - self.lower[i]))
            .collect()
    }

    pub fn denormalize(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(i, v)| self.lower[i] + v * (self.upper[i] - self.lower[i]))
            .collect()
    }

    pub fn clip(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }
}

/// Evaluates the objective vector of `x`.
pub fn evaluate(problem: &ProblemSpec, x: &[f64]) -> Result<Vec<f64>> {
    problem.check_decision(x)?;
    let f = evaluate_unchecked(problem, x);
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("{} produced a non-finite objective", problem.name)));
    }
    Ok(f)
}

fn evaluate_unchecked(p: &ProblemSpec, x: &[f64]) -> Vec<f64> {
    let m = p.n_obj;
    let d = p.dim;
    match p.name {
        ProblemName::Dtlz1 => {
            let g = rastrigin_like_g(&x[m - 1..]);
            let mut f = vec![0.0; m];
            for (i, fi) in f.iter_mut().enumerate() {
                let mut v = 0.5 * (1.0 + g);
                for xj in &x[..m - 1 - i] {
                    v *= xj;
                }
                if i > 0 {
                    v *= 1.0 - x[m - 1 - i];
                }
                *fi = v;
            }
            f
        }
        ProblemName::Dtlz2 | ProblemName::Dtlz3 | ProblemName::Dtlz4 => {
            let tail = &x[m - 1..];
            let g = if p.name == ProblemName::Dtlz3 {
                rastrigin_like_g(tail)
            } else {
                tail.iter().map(|v| (v - 0.5) * (v - 0.5)).sum()
            };
            let alpha = if p.name == ProblemName::Dtlz4 { 100.0 } else { 1.0 };
            let theta: Vec<f64> = x[..m - 1]
                .iter()
                .map(|v| pow(*v, alpha) * PI / 2.0)
                .collect();
            sphere_objectives(&theta, g)
        }
        ProblemName::Dtlz5 | ProblemName::Dtlz6 => {
            let tail = &x[m - 1..];
            let g: f64 = if p.name == ProblemName::Dtlz5 {
                tail.iter().map(|v| (v - 0.5) * (v - 0.5)).sum()
            } else {
                tail.iter().map(|v| pow(*v, 0.1)).sum()
            };
            let mut theta = Vec::with_capacity(m - 1);
            theta.push(x[0] * PI / 2.0);
            for xi in &x[1..m - 1] {
                theta.push(PI / (4.0 * (1.0 + g)) * (1.0 + 2.0 * g * xi));
            }
            sphere_objectives(&theta, g)
        }
        ProblemName::Dtlz7 => {
            let k = (d - m + 1) as f64;
            let g = 1.0 + 9.0 / k * x[m - 1..].iter().sum::<f64>();
            let mut f: Vec<f64> = x[..m - 1].to_vec();
            let h = m as f64
                - f.iter()
                    .map(|fi| fi / (1.0 + g) * (1.0 + sin(3.0 * PI * fi)))
                    .sum::<f64>();
            f.push((1.0 + g) * h);
            f
        }
        ProblemName::Zdt1 | ProblemName::Zdt2 | ProblemName::Zdt3 => {
            let f1 = x[0];
            let g = 1.0 + 9.0 / (d - 1) as f64 * x[1..].iter().sum::<f64>();
            let r = f1 / g;
            let h = match p.name {
                ProblemName::Zdt1 => 1.0 - sqrt(r),
                ProblemName::Zdt2 => 1.0 - r * r,
                _ => 1.0 - sqrt(r) - r * sin(10.0 * PI * f1),
            };
            vec![f1, g * h]
        }
        ProblemName::Zdt4 => {
            let f1 = x[0];
            let g = 1.0
                + 10.0 * (d - 1) as f64
                + x[1..]
                    .iter()
                    .map(|v| v * v - 10.0 * cos(4.0 * PI * v))
                    .sum::<f64>();
            vec![f1, g * (1.0 - sqrt(f1 / g))]
        }
        ProblemName::Zdt6 => {
            let f1 = zdt6_f1(x[0]);
            let s = x[1..].iter().sum::<f64>() / (d - 1) as f64;
            let g = 1.0 + 9.0 * pow(s, 0.25);
            let r = f1 / g;
            vec![f1, g * (1.0 - r * r)]
        }
    }
}

fn rastrigin_like_g(tail: &[f64]) -> f64 {
    100.0
        * (tail.len() as f64
            + tail
                .iter()
                .map(|v| (v - 0.5) * (v - 0.5) - cos(20.0 * PI * (v - 0.5)))
                .sum::<f64>())
}

/// `f_i = (1+g) Π_{j < M−i} cos θ_j · sin θ_{M−i}` (last factor for `i > 0`).
fn sphere_objectives(theta: &[f64], g: f64) -> Vec<f64> {
    let m = theta.len() + 1;
    (0..m)
        .map(|i| {
            let mut v = 1.0 + g;
            for t in &theta[..m - 1 - i] {
                v *= cos(*t);
            }
            if i > 0 {
                v *= sin(theta[m - 1 - i]);
            }
            v
        })
        .collect()
}

fn zdt6_f1(x1: f64) -> f64 {
    1.0 - exp(-4.0 * x1) * pow(sin(6.0 * PI * x1), 6.0)
}

/// Smallest attainable ZDT6 first objective (golden-section on `[0, 1/6]`).
fn zdt6_f1_min() -> f64 {
    let (mut a, mut b) = (0.0, 1.0 / 6.0);
    let phi = (sqrt(5.0) - 1.0) / 2.0;
    for _ in 0..200 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if zdt6_f1(c) < zdt6_f1(d) {
            b = d;
        } else {
            a = c;
        }
    }
    zdt6_f1((a + b) / 2.0)
}

/// A decision vector on the Pareto-optimal manifold. `position` supplies the
/// `M − 1` position variables (or `x₁` for ZDT) in the unit interval.
pub fn optimal_decision(problem: &ProblemSpec, position: &[f64]) -> Vec<f64> {
    let m = problem.n_obj;
    let n_pos = if problem.name.is_zdt() { 1 } else { m - 1 };
    let tail_value = match problem.name {
        ProblemName::Dtlz6 | ProblemName::Dtlz7 => 0.0,
        n if n.is_zdt() => 0.0,
        _ => 0.5,
    };
    let mut x = vec![tail_value; problem.dim];
    for i in 0..n_pos {
        x[i] = position[i].clamp(0.0, 1.0);
    }
    x
}

/// Distance-like residual of an objective vector from the analytic front
/// surface (zero on the front). For disconnected fronts this measures the
/// distance to the underlying curve or surface that carries the segments.
pub fn front_residual(problem: &ProblemSpec, f: &[f64]) -> f64 {
    let m = problem.n_obj;
    match problem.name {
        ProblemName::Dtlz1 => (f.iter().sum::<f64>() - 0.5).abs(),
        ProblemName::Dtlz2 | ProblemName::Dtlz3 | ProblemName::Dtlz4 => {
            (sqrt(f.iter().map(|v| v * v).sum::<f64>()) - 1.0).abs()
        }
        ProblemName::Dtlz5 | ProblemName::Dtlz6 => {
            // on the curve every angle after the first is π/4
            let theta1 = libm::asin(f[m - 1].clamp(-1.0, 1.0));
            let mut t = vec![PI / 4.0; m - 1];
            t[0] = theta1;
            let expected = sphere_objectives(&t, 0.0);
            f.iter()
                .zip(&expected)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        }
        ProblemName::Dtlz7 => {
            let h = m as f64
                - f[..m - 1]
                    .iter()
                    .map(|fi| fi / 2.0 * (1.0 + sin(3.0 * PI * fi)))
                    .sum::<f64>();
            (f[m - 1] - 2.0 * h).abs()
        }
        ProblemName::Zdt1 | ProblemName::Zdt4 => (f[1] - (1.0 - sqrt(f[0].max(0.0)))).abs(),
        ProblemName::Zdt2 | ProblemName::Zdt6 => (f[1] - (1.0 - f[0] * f[0])).abs(),
        ProblemName::Zdt3 => {
            (f[1] - (1.0 - sqrt(f[0].max(0.0)) - f[0] * sin(10.0 * PI * f[0]))).abs()
        }
    }
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += (i % base) as f64 * f;
        i /= base;
        f *= inv;
    }
    r
}

const PRIMES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

/// Halton point `i` (skipping the origin) in `[0,1)^dims`.
fn halton(i: usize, dims: usize) -> Vec<f64> {
    (0..dims)
        .map(|d| radical_inverse(i as u64 + 1, PRIMES[d]))
        .collect()
}

/// Uniform-on-simplex weights from a unit-cube point (sorted spacings).
fn simplex_from_cube(u: &[f64]) -> Vec<f64> {
    let mut s = u.to_vec();
    s.sort_by(f64::total_cmp);
    let mut w = Vec::with_capacity(s.len() + 1);
    let mut prev = 0.0;
    for v in s {
        w.push(v - prev);
        prev = v;
    }
    w.push(1.0 - prev);
    w
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![(a + b) / 2.0];
    }
    (0..n)
        .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Evenly strided subset of size `n` (all items if fewer).
fn stride_pick(items: Vec<Vec<f64>>, n: usize) -> Vec<Vec<f64>> {
    if items.len() <= n {
        return items;
    }
    let len = items.len();
    (0..n)
        .map(|i| items[(i * (len - 1)) / (n - 1).max(1)].clone())
        .collect()
}

fn filtered(candidates: Vec<Vec<f64>>, n: usize) -> Vec<Vec<f64>> {
    let keep = nondominated_indices(&candidates);
    let mut front: Vec<Vec<f64>> = keep.into_iter().map(|i| candidates[i].clone()).collect();
    front.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(core::cmp::Ordering::Equal)
    });
    front.dedup();
    stride_pick(front, n)
}

/// `n_points` deterministic samples of the analytic Pareto front.
pub fn reference_front(problem: &ProblemSpec, n_points: usize) -> Result<Vec<Vec<f64>>> {
    let m = problem.n_obj;
    if n_points < m {
        return Err(Error::Domain(format!(
            "reference front needs at least M = {m} points; got {n_points}"
        )));
    }
    let simplex_weights = |n: usize| -> Vec<Vec<f64>> {
        if m == 2 {
            linspace(0.0, 1.0, n)
                .into_iter()
                .map(|t| vec![t, 1.0 - t])
                .collect()
        } else {
            (0..n).map(|i| simplex_from_cube(&halton(i, m - 1))).collect()
        }
    };
    let front = match problem.name {
        ProblemName::Dtlz1 => simplex_weights(n_points)
            .into_iter()
            .map(|w| w.into_iter().map(|v| 0.5 * v).collect())
            .collect(),
        ProblemName::Dtlz2 | ProblemName::Dtlz3 | ProblemName::Dtlz4 => {
            if m == 2 {
                linspace(0.0, PI / 2.0, n_points)
                    .into_iter()
                    .map(|t| vec![cos(t), sin(t)])
                    .collect()
            } else {
                simplex_weights(n_points)
                    .into_iter()
                    .map(|w| {
                        let s = sqrt(w.iter().map(|v| v * v).sum::<f64>());
                        w.into_iter().map(|v| v / s).collect()
                    })
                    .collect()
            }
        }
        ProblemName::Dtlz5 | ProblemName::Dtlz6 => {
            // optimal-manifold curve, then the dominance filter
            let dense = linspace(0.0, 1.0, n_points * 4)
                .into_iter()
                .map(|t| {
                    let mut pos = vec![0.5; m - 1];
                    pos[0] = t;
                    evaluate_unchecked(problem, &optimal_decision(problem, &pos))
                })
                .collect();
            filtered(dense, n_points)
        }
        ProblemName::Dtlz7 => {
            let dense: Vec<Vec<f64>> = if m == 2 {
                linspace(0.0, 1.0, n_points * 50)
                    .into_iter()
                    .map(|t| evaluate_unchecked(problem, &optimal_decision(problem, &[t])))
                    .collect()
            } else {
                let count = if m == 3 { n_points * 20 } else { n_points * 4 };
                (0..count)
                    .map(|i| {
                        let mut u = halton(i, m - 1);
                        if i == 0 {
                            u.iter_mut().for_each(|v| *v = 0.0);
                        }
                        evaluate_unchecked(problem, &optimal_decision(problem, &u))
                    })
                    .collect()
            };
            filtered(dense, n_points)
        }
        ProblemName::Zdt1 | ProblemName::Zdt4 => linspace(0.0, 1.0, n_points)
            .into_iter()
            .map(|f1| vec![f1, 1.0 - sqrt(f1)])
            .collect(),
        ProblemName::Zdt2 => linspace(0.0, 1.0, n_points)
            .into_iter()
            .map(|f1| vec![f1, 1.0 - f1 * f1])
            .collect(),
        ProblemName::Zdt3 => {
            let dense = linspace(0.0, 1.0, n_points * 50)
                .into_iter()
                .map(|f1| vec![f1, 1.0 - sqrt(f1) - f1 * sin(10.0 * PI * f1)])
                .collect();
            filtered(dense, n_points)
        }
        ProblemName::Zdt6 => linspace(zdt6_f1_min(), 1.0, n_points)
            .into_iter()
            .map(|f1| vec![f1, 1.0 - f1 * f1])
            .collect(),
    };
    Ok(front)
}

/// Latin hypercube design: for every dimension each of the `n` equal strata
/// of `[lower, upper]` holds exactly one point.
pub fn latin_hypercube<R: Rng + ?Sized>(
    n: usize,
    lower: &[f64],
    upper: &[f64],
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let dim = lower.len();
    let mut points = vec![vec![0.0; dim]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for d in 0..dim {
        perm.shuffle(rng);
        let width = upper[d] - lower[d];
        for (i, p) in points.iter_mut().enumerate() {
            let u: f64 = rng.gen();
            let v = lower[d] + (perm[i] as f64 + u) / n as f64 * width;
            p[d] = v.min(upper[d]);
        }
    }
    points
}

/// Problem name list for help text.
pub fn problem_names() -> String {
    let mut s = String::new();
    for (i, p) in ProblemName::ALL.iter().enumerate() {
        if i > 0 {
            s.push_str(", ");
        }
        s.push_str(p.as_str());
    }
    s
}
