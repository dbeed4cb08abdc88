//! Run configuration files (TOML or JSON).

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use smoo_core::acq::AcqConfig;
use smoo_core::bench::{make_problem, ProblemName, ProblemSpec};
use smoo_core::deepgp::SurrogateConfig;
use smoo_core::optimizer::{Ablations, LoopConfig, DEFAULT_STATIC_WEIGHTS};
use smoo_core::rankclf::{ClassifierConfig, McConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Neuropareto,
    Random,
    Static,
    Ablation,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Neuropareto => "neuropareto",
            Mode::Random => "random",
            Mode::Static => "static",
            Mode::Ablation => "ablation",
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_budget() -> usize {
    LoopConfig::default().budget
}

/// Flat run configuration. Loop settings sit at the top level next to the
/// problem; model settings live in their own tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemName,
    #[serde(rename = "D")]
    pub dim: usize,
    #[serde(rename = "M")]
    pub n_obj: usize,
    #[serde(default = "default_budget")]
    pub budget: usize,
    /// Single seed; merged into `seeds`.
    #[serde(default, skip_serializing)]
    pub seed: Option<u64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default)]
    pub ablations: Vec<String>,
    #[serde(default = "default_static_weights")]
    pub static_weights: [f64; 6],
    #[serde(default)]
    pub output: Option<String>,
    /// Fill the `seconds` column from the wall clock; off gives
    /// byte-identical tables across reruns.
    #[serde(default = "default_true")]
    pub timing: bool,
    #[serde(default = "d_q")]
    pub q: usize,
    #[serde(default = "d_pool")]
    pub pool_size: usize,
    #[serde(default = "d_screen")]
    pub n_screen: usize,
    #[serde(default = "d_k")]
    pub k: usize,
    #[serde(default)]
    pub initial_size: Option<usize>,
    #[serde(default = "d_alpha_hv")]
    pub alpha_hv: f64,
    #[serde(default = "d_alpha_div")]
    pub alpha_div: f64,
    #[serde(default = "d_alpha_clf")]
    pub alpha_clf: f64,
    #[serde(default = "d_eta_c")]
    pub eta_c: f64,
    #[serde(default = "d_cx")]
    pub crossover_rate: f64,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub surrogate: SurrogateConfig,
    #[serde(default)]
    pub acquisition: AcqConfig,
}

fn default_mode() -> Mode {
    Mode::Neuropareto
}
fn default_static_weights() -> [f64; 6] {
    DEFAULT_STATIC_WEIGHTS
}
fn default_true() -> bool {
    true
}
fn d_q() -> usize {
    LoopConfig::default().q
}
fn d_pool() -> usize {
    LoopConfig::default().pool_size
}
fn d_screen() -> usize {
    LoopConfig::default().n_screen
}
fn d_k() -> usize {
    LoopConfig::default().k
}
fn d_alpha_hv() -> f64 {
    LoopConfig::default().alpha_hv
}
fn d_alpha_div() -> f64 {
    LoopConfig::default().alpha_div
}
fn d_alpha_clf() -> f64 {
    LoopConfig::default().alpha_clf
}
fn d_eta_c() -> f64 {
    LoopConfig::default().eta_c
}
fn d_cx() -> f64 {
    LoopConfig::default().crossover_rate
}

impl RunConfig {
    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn from_str(text: &str) -> Result<RunConfig> {
        let mut cfg: RunConfig = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).context("invalid JSON config")?
        } else {
            toml::from_str(text).context("invalid TOML config")?
        };
        if let Some(s) = cfg.seed.take() {
            cfg.seeds = vec![s];
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        RunConfig::from_str(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn problem_spec(&self) -> Result<ProblemSpec> {
        Ok(make_problem(self.problem, self.dim, self.n_obj)?)
    }

    pub fn ablation_set(&self) -> Result<Ablations> {
        let names: Vec<&str> = self.ablations.iter().map(String::as_str).collect();
        Ok(Ablations::parse_list(&names)?)
    }

    pub fn loop_config(&self, seed: u64) -> LoopConfig {
        LoopConfig {
            budget: self.budget,
            q: self.q,
            pool_size: self.pool_size,
            n_screen: self.n_screen,
            k: self.k,
            initial_size: self.initial_size,
            seed,
            alpha_hv: self.alpha_hv,
            alpha_div: self.alpha_div,
            alpha_clf: self.alpha_clf,
            eta_c: self.eta_c,
            crossover_rate: self.crossover_rate,
            static_weights: self.static_weights,
            mc: self.mc,
            classifier: self.classifier.clone(),
            surrogate: self.surrogate.clone(),
            acquisition: self.acquisition.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let problem = self.problem_spec()?;
        if self.seeds.is_empty() {
            bail!("seeds must list at least one seed");
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            bail!("seeds contains duplicates: {:?}", self.seeds);
        }
        self.ablation_set()?;
        self.loop_config(self.seeds[0]).validate(&problem)?;
        Ok(())
    }

    /// Fully resolved configuration, as written to the output directory.
    pub fn effective_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Parses `1,2,5-8` style seed lists.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once('-') {
            let a: u64 = a.trim().parse().with_context(|| format!("bad seed range '{part}'"))?;
            let b: u64 = b.trim().parse().with_context(|| format!("bad seed range '{part}'"))?;
            if b < a {
                bail!("bad seed range '{part}'");
            }
            out.extend(a..=b);
        } else {
            out.push(part.parse().with_context(|| format!("bad seed '{part}'"))?);
        }
    }
    if out.is_empty() {
        bail!("empty seed list");
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = RunConfig::from_str("problem = \"dtlz2\"\nD = 10\nM = 2\nbudget = 150\nseed = 1\n").unwrap();
        assert_eq!(c.seeds, vec![1]);
        assert_eq!(c.q, 5);
        assert_eq!(c.k, 50);
        assert_eq!(c.classifier.k, 5);
        assert_eq!(c.loop_config(1).initial_design_size(10), 100);
        let j = RunConfig::from_str(r#"{"problem": "dtlz2", "D": 10, "M": 2, "budget": 150, "seed": 1}"#).unwrap();
        assert_eq!(j, c);
    }

    #[test]
    fn q_above_k_names_both() {
        let e = RunConfig::from_str("problem = \"dtlz2\"\nD = 10\nM = 2\nq = 70\nk = 60\n").unwrap_err();
        let msg = format!("{e:#}");
        assert!(msg.contains("q = 70") && msg.contains("k = 60"), "{msg}");
    }

    #[test]
    fn unknown_key_is_named() {
        let e = RunConfig::from_str("problem = \"dtlz2\"\nD = 10\nM = 2\nbogus_key = 3\n").unwrap_err();
        assert!(format!("{e:#}").contains("bogus_key"));
        let e = RunConfig::from_str("problem = \"dtlz2\"\nD = 10\nM = 2\n[surrogate]\nwarm = 3\n").unwrap_err();
        assert!(format!("{e:#}").contains("warm"));
    }

    #[test]
    fn echo_round_trips() {
        let c = RunConfig::from_str("problem = \"zdt1\"\nD = 6\nM = 2\nbudget = 120\nseeds = [3, 4]\n").unwrap();
        let back = RunConfig::from_str(&c.effective_json().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("1,3-5").unwrap(), vec![1, 3, 4, 5]);
        assert!(parse_seeds("5-3").is_err());
    }
}
