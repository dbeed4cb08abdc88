use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use smoo::commands;
use smoo::{parse_seeds, Mode, RunConfig};

#[derive(Parser)]
#[command(name = "smoo", version, about = "Surrogate-assisted multi-objective optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML or JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed list such as `1,2,5-8`; overrides the config.
    #[arg(long)]
    seeds: Option<String>,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured mode over every seed.
    Run(Common),
    /// Run several modes on shared seeds and test pairwise differences.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Modes to compare.
        #[arg(long, value_delimiter = ',', default_value = "neuropareto,random,static")]
        modes: Vec<String>,
    },
    /// Classifier calibration report before and after temperature scaling.
    Calibrate(Common),
    /// Estimate the L_H, H_max and rho constants.
    Constants(Common),
    /// Full method against each disabled component.
    Ablate(Common),
}

fn load(common: &Common) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = RunConfig::from_path(&common.config)?;
    if let Some(s) = &common.seeds {
        cfg.seeds = parse_seeds(s)?;
        cfg.validate()?;
    }
    let out = match (&common.out, &cfg.output) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => PathBuf::from(o),
        (None, None) => bail!("no output directory: pass --out or set `output` in the config"),
    };
    Ok((cfg, out))
}

fn parse_mode(s: &str) -> Result<Mode> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .with_context(|| format!("unknown mode '{s}'; expected neuropareto, random, static or ablation"))
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(c) => {
            let (cfg, out) = load(&c)?;
            let (_, s) = commands::cmd_run(&cfg, &out, c.force)?;
            println!(
                "{}: median HV {:.6} (IQR {:.6}), median IGD {:.6} (IQR {:.6}) over {} seeds",
                s.mode,
                s.hv.median,
                s.hv.iqr,
                s.igd.median,
                s.igd.iqr,
                s.seeds.len()
            );
        }
        Command::Compare { common, modes } => {
            let (cfg, out) = load(&common)?;
            let configs = modes
                .iter()
                .map(|m| Ok((parse_mode(m)?, cfg.clone())))
                .collect::<Result<Vec<_>>>()?;
            let cmp = commands::cmd_compare(&configs, &out, common.force)?;
            println!("mode,median_hv,median_igd");
            for m in &cmp.modes {
                println!("{},{},{}", m.mode, m.hv.median, m.igd.median);
            }
            println!("a,b,p_hv,p_igd,alpha");
            for t in &cmp.tests {
                println!("{},{},{},{},{}", t.a, t.b, t.hv.p_value, t.igd.p_value, cmp.alpha);
            }
        }
        Command::Calibrate(c) => {
            let (cfg, out) = load(&c)?;
            for r in commands::cmd_calibrate(&cfg, &out, c.force)? {
                println!(
                    "seed {}: T {:.3}  ECE {:.4} -> {:.4}  MCE {:.4} -> {:.4}  ACE {:.4} -> {:.4}",
                    r.seed, r.temperature, r.before.ece, r.after.ece, r.before.mce, r.after.mce, r.before.ace, r.after.ace
                );
            }
        }
        Command::Constants(c) => {
            let (cfg, out) = load(&c)?;
            for r in commands::cmd_constants(&cfg, &out, c.force)? {
                println!(
                    "seed {}: L_H {:.6} (N = {}, delta = {})  H_max {:.6} ({} trials)  rho {:.4}",
                    r.seed, r.l_h, r.protocol.n, r.protocol.delta, r.h_max, r.protocol.trials, r.rho
                );
            }
        }
        Command::Ablate(c) => {
            let (cfg, out) = load(&c)?;
            let rep = commands::cmd_ablate(&cfg, &out, c.force)?;
            println!("full: median IGD {:.6}", rep.full.igd.median);
            for v in &rep.variants {
                println!(
                    "no_{}: median IGD {:.6}, worse on {}/{} seeds, p = {}",
                    v.disabled,
                    v.summary.igd.median,
                    v.igd_worse_seeds,
                    v.summary.seeds.len(),
                    v.igd_test.p_value
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
