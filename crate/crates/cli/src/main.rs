use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use memgan_core::config::{ExperimentConfig, Precision};
use memgan_core::experiments;

#[derive(Parser)]
#[command(name = "memgan", version, about = "Memristor-crossbar GAN training simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one GAN and write its objective log and checkpoint.
    Train(Common),
    /// Train at several precisions and compare probe accuracy.
    PrecisionSweep(Common),
    /// Simulate the basic and cross-parallel pipelines.
    PipelineCompare(Common),
    /// Modeled iteration time and area against forward-flow parallelism.
    ParallelismSweep(Common),
    /// Area, time and energy report for the configured workloads.
    CostReport(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Precision: a bit width or "float". Comma-separated for sweeps.
    #[arg(long)]
    bits: Option<String>,
    /// Forward-flow parallelism. Comma-separated for sweeps.
    #[arg(long)]
    parallelism: Option<String>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_list<T: std::str::FromStr>(flag: &str, s: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<T>()
                .map_err(|e| anyhow::anyhow!("--{flag} {p:?}: {e}"))
        })
        .collect()
}

impl Common {
    fn load(&self, sweep: bool) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(b) = &self.bits {
            let list: Vec<Precision> = parse_list("bits", b)?;
            if sweep {
                cfg.sweep_bits = list;
            } else if let [p] = list[..] {
                cfg.precision = p;
            } else {
                bail!("--bits takes a single precision for this command");
            }
        }
        if let Some(s) = &self.parallelism {
            let list: Vec<usize> = parse_list("parallelism", s)?;
            if sweep {
                cfg.sweep_parallelism = list;
            } else if let [p] = list[..] {
                cfg.parallelism = p;
            } else {
                bail!("--parallelism takes a single value for this command");
            }
        }
        if let Some(n) = self.iters {
            cfg.iterations = n;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(c) => {
            let cfg = c.load(false)?;
            let run = experiments::train_and_write(&cfg, &cfg.out)?;
            if let (Some(first), Some(last)) = (run.log.first(), run.log.last()) {
                println!(
                    "trained {} iterations at {}: V_D {:.5} -> {:.5}, V_G {:.5} -> {:.5}",
                    run.log.len(),
                    run.precision,
                    first.objective_d,
                    last.objective_d,
                    first.objective_g,
                    last.objective_g
                );
            } else {
                println!("0 iterations: wrote the initial model");
            }
        }
        Command::PrecisionSweep(c) => {
            let cfg = c.load(true)?;
            let r = experiments::precision_sweep_and_write(&cfg, &cfg.out)?;
            println!("float baseline accuracy {:.4}", r.baseline_accuracy);
            for p in &r.points {
                println!(
                    "{:>6}  accuracy {:.4}  normalized {:.4}",
                    p.precision.to_string(),
                    p.accuracy,
                    p.normalized_accuracy
                );
            }
        }
        Command::PipelineCompare(c) => {
            let cfg = c.load(false)?;
            let r = experiments::pipeline_compare_and_write(&cfg, &cfg.out)?;
            let t = r.table;
            println!("                   basic    cross-parallel");
            println!(
                "iteration (s)   {:>8.4}   {:>8.4}",
                t.basic.iteration_s, t.cross_parallel.iteration_s
            );
            println!(
                "D idle (s)      {:>8.4}   {:>8.4}",
                t.basic.d_idle_s, t.cross_parallel.d_idle_s
            );
            println!(
                "G idle (s)      {:>8.4}   {:>8.4}",
                t.basic.g_idle_s, t.cross_parallel.g_idle_s
            );
            println!("speedup {:.3}x", t.speedup);
        }
        Command::ParallelismSweep(c) => {
            let cfg = c.load(true)?;
            let pts = experiments::parallelism_sweep_and_write(&cfg, &cfg.out)?;
            println!("   s   iteration(s)   area(mm2)");
            for p in pts {
                println!("{:>4}   {:>12.4}   {:>9.1}", p.parallelism, p.iteration_s, p.area_mm2);
            }
        }
        Command::CostReport(c) => {
            let cfg = c.load(false)?;
            let s = experiments::cost_report_and_write(&cfg, &cfg.out)?;
            for r in &s.reports {
                println!("{}", r.to_table());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
