//! Argument parsing and dispatch.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use blb_core::fuser::BlockDims;
use blb_core::matmul::Dims;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::commands::{self, BenchArgs, GraphSource, MaskArgs, MaskKind, ProtocolArg};
use crate::config::{EngineKind, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "blb", version, about = "Fused HE/MPC transformer inference: demos, benchmarks, planner and runner")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Histogram of conversion mask coefficients.
    DemoMask(DemoMask),
    /// One matrix product protocol, measured against its predicted cost.
    BenchMatmul(BenchMatmul),
    /// Fusion plan of a graph as JSON.
    FusionPlan(FusionPlan),
    /// One encoder layer end to end.
    RunBlock(RunArgs),
    /// The fused plan against the per-operator plan.
    ComparePlans(RunArgs),
}

#[derive(Debug, Args)]
pub struct DemoMask {
    #[arg(long, default_value_t = 8192)]
    pub n: usize,
    #[arg(long, default_value_t = 60)]
    pub logq: u32,
    #[arg(long, value_enum, default_value_t = MaskKind::Secure)]
    pub mode: MaskKind,
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    #[arg(long, default_value_t = 64)]
    pub bins: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchMatmul {
    #[arg(long)]
    pub l: usize,
    #[arg(long)]
    pub d: usize,
    #[arg(long, default_value_t = 1)]
    pub heads: usize,
    #[arg(long, default_value_t = 4096)]
    pub poly_n: usize,
    #[arg(long, value_enum, default_value_t = ProtocolArg::Cc)]
    pub protocol: ProtocolArg,
    #[arg(long, default_value_t = 38)]
    pub scale_bits: u32,
    #[arg(long, value_enum, default_value_t = EngineKind::Ckks)]
    pub engine: EngineKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FusionPlan {
    /// Built-in graph; only `bert-block` exists.
    #[arg(long, conflicts_with = "graph")]
    pub model: Option<String>,
    /// Text graph, one node per line.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    pub m: usize,
    #[arg(long, default_value_t = 32)]
    pub d: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 8192)]
    pub poly_n: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config's engine.
    #[arg(long, value_enum)]
    pub engine: Option<EngineKind>,
}

fn ring_degree(n: usize) -> Result<()> {
    if !n.is_power_of_two() || n < 16 {
        bail!("ring degree {n} must be a power of two of at least 16");
    }
    Ok(())
}

fn dims(l: usize, d: usize, heads: usize) -> Result<()> {
    if l == 0 || d == 0 || heads == 0 || d % heads != 0 {
        bail!("{l}x{d} with {heads} heads: sizes must be positive and heads must divide d");
    }
    Ok(())
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load(a: &RunArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
        cfg.block.seed = s;
    }
    if let Some(e) = a.engine {
        cfg.engine = e;
    }
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::DemoMask(a) => {
            ring_degree(a.n)?;
            if !(20..=62).contains(&a.logq) {
                bail!("--logq {} outside 20..=62", a.logq);
            }
            let args = MaskArgs { n: a.n, logq: a.logq, mode: a.mode, samples: a.samples, bins: a.bins, seed: a.seed };
            emit(&commands::demo_mask(&args)?, a.out.as_deref())
        }
        Command::BenchMatmul(a) => {
            ring_degree(a.poly_n)?;
            dims(a.l, a.d, a.heads)?;
            if !(20..=58).contains(&a.scale_bits) {
                bail!("--scale-bits {} outside 20..=58", a.scale_bits);
            }
            let args = BenchArgs {
                dims: Dims { l: a.l, d: a.d, heads: a.heads },
                poly_n: a.poly_n,
                protocol: a.protocol.into(),
                scale_bits: a.scale_bits,
                engine: a.engine,
                seed: a.seed,
            };
            emit(&commands::bench_matmul(&args)?, a.out.as_deref())
        }
        Command::FusionPlan(a) => {
            ring_degree(a.poly_n)?;
            let src = match (&a.model, &a.graph) {
                (_, Some(path)) => GraphSource::Text(std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?),
                (Some(m), None) if m == "bert-block" => {
                    dims(a.m, a.d, a.heads)?;
                    GraphSource::BertBlock(BlockDims { m: a.m, d: a.d, heads: a.heads })
                }
                (Some(m), None) => bail!("unknown model `{m}`; expected bert-block"),
                (None, None) => bail!("give --model bert-block or --graph <file>"),
            };
            emit(&commands::fusion_plan(&src, a.poly_n)?, a.out.as_deref())
        }
        Command::RunBlock(a) => {
            let cfg = load(&a)?;
            emit(&commands::run_block(&cfg)?, a.report.as_deref())
        }
        Command::ComparePlans(a) => {
            let cfg = load(&a)?;
            emit(&commands::compare_plans(&cfg)?, a.report.as_deref())
        }
    }
}
