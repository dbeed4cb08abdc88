//! Paired Wilcoxon signed-rank test and order statistics.

use smoo_core::math::{average_ranks, normal_cdf, quantile};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WilcoxonResult {
    pub n: usize,
    pub w_plus: f64,
    pub p_value: f64,
    pub exact: bool,
}

/// Two-sided signed-rank test of `a − b`. Zero differences are dropped;
/// with no nonzero difference the result is `p = 1`. Exact enumeration of
/// all `2ⁿ` sign patterns for `n ≤ 20` (the CLI needs it through 12), normal approximation beyond.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> WilcoxonResult {
    assert_eq!(a.len(), b.len(), "paired samples must have equal length");
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return WilcoxonResult {
            n,
            w_plus: 0.0,
            p_value: 1.0,
            exact: true,
        };
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let total: f64 = ranks.iter().sum();
    let mean = total / 2.0;
    let dev = (w_plus - mean).abs();
    if n <= 20 {
        let mut extreme = 0u64;
        for mask in 0u64..(1u64 << n) {
            let mut w = 0.0;
            for (i, r) in ranks.iter().enumerate() {
                if mask >> i & 1 == 1 {
                    w += r;
                }
            }
            if (w - mean).abs() >= dev - 1e-9 {
                extreme += 1;
            }
        }
        let p = extreme as f64 / (1u64 << n) as f64;
        WilcoxonResult {
            n,
            w_plus,
            p_value: p.min(1.0),
            exact: true,
        }
    } else {
        let var: f64 = ranks.iter().map(|r| r * r).sum::<f64>() / 4.0;
        let z = dev / var.sqrt();
        WilcoxonResult {
            n,
            w_plus,
            p_value: (2.0 * (1.0 - normal_cdf(z))).min(1.0),
            exact: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Spread {
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub iqr: f64,
}

pub fn spread(values: &[f64]) -> Spread {
    let q25 = quantile(values, 0.25).unwrap_or(f64::NAN);
    let median = quantile(values, 0.5).unwrap_or(f64::NAN);
    let q75 = quantile(values, 0.75).unwrap_or(f64::NAN);
    Spread {
        median,
        q25,
        q75,
        iqr: q75 - q25,
    }
}
