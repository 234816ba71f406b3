//! `zkl` — experiment runner producing plot-ready CSVs and JSON reports.
//!
//! Subcommands map one-to-one onto the experiment module: `kernel-compare`,
//! `trajectory`, `v-scaling`, `moment-check`, `jl-budget`. A single JSON
//! config document can hold a section per experiment; command-line flags
//! override config fields, and the fully resolved config is echoed into the
//! output directory as `run_config.json`.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use zkl::experiment::{
    cmd_jl_budget, cmd_kernel_compare, cmd_moment_check, cmd_trajectory, cmd_v_scaling,
    KernelCompareConfig, MomentCheckConfig, TrajectoryConfig, VScalingConfig,
};

#[derive(Parser)]
#[command(
    name = "zkl",
    about = "Projected-kernel analysis of zeroth-order optimization",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// JSON config document; each experiment reads its own section.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override every seed list / master seed with this single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for independent experiment cells (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// FO vs ZO kernel metrics over a (P, distribution, seed) grid.
    KernelCompare {
        #[command(flatten)]
        common: CommonArgs,
        /// Also write per-cell kernel JSON dumps.
        #[arg(long)]
        dump_kernels: bool,
    },
    /// FO baseline vs ZO trajectories with per-step belief gaps.
    Trajectory {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Kernel approximation error against output size V at fixed P.
    VScaling {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Monte-Carlo verification of the perturbation moment identities.
    MomentCheck {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Required perturbation count for an inner-product preservation budget.
    JlBudget {
        /// Number of points to preserve.
        #[arg(long)]
        n: usize,
        /// Distortion tolerance in (0,1).
        #[arg(long)]
        epsilon: f64,
        /// Failure probability in (0,1).
        #[arg(long, default_value_t = 0.01)]
        delta: f64,
        /// Concentration constant c(Q).
        #[arg(long, default_value_t = 0.25)]
        c: f64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

/// Top-level config document: one optional section per experiment.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigDocument {
    #[serde(default)]
    kernel_compare: Option<KernelCompareConfig>,
    #[serde(default)]
    trajectory: Option<TrajectoryConfig>,
    #[serde(default)]
    v_scaling: Option<VScalingConfig>,
    #[serde(default)]
    moment_check: Option<MomentCheckConfig>,
}

fn load_config(path: Option<&Path>) -> Result<ConfigDocument> {
    match path {
        None => Ok(ConfigDocument::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

fn init_threads(threads: Option<usize>) -> Result<()> {
    #[cfg(feature = "parallel")]
    if let Some(n) = threads {
        if n > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .context("initializing thread pool")?;
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::KernelCompare {
            common,
            dump_kernels,
        } => {
            init_threads(common.threads)?;
            let doc = load_config(common.config.as_deref())?;
            let mut cfg = doc.kernel_compare.unwrap_or_default();
            if let Some(seed) = common.seed {
                cfg.seeds = vec![seed];
            }
            cfg.dump_kernels |= dump_kernels;
            let output = cmd_kernel_compare(&cfg, &common.out)?;
            println!(
                "kernel-compare: {} metric rows, {} medians -> {}",
                output.rows.len(),
                output.medians.len(),
                common.out.display()
            );
            for slope in &output.slopes {
                println!(
                    "  pair {} {}: log-log slope {:.4}",
                    slope.pair_id, slope.distribution, slope.slope
                );
            }
        }
        Command::Trajectory { common } => {
            init_threads(common.threads)?;
            let doc = load_config(common.config.as_deref())?;
            let mut cfg = doc.trajectory.unwrap_or_default();
            if let Some(seed) = common.seed {
                cfg.seeds = vec![seed];
            }
            let output = cmd_trajectory(&cfg, &common.out)?;
            println!(
                "trajectory: {} runs -> {}",
                output.gaps.len(),
                common.out.display()
            );
            for (p, dist, gap) in &output.median_gaps {
                println!("  P={p} {dist}: median final belief gap {gap:.6}");
            }
        }
        Command::VScaling { common } => {
            init_threads(common.threads)?;
            let doc = load_config(common.config.as_deref())?;
            let mut cfg = doc.v_scaling.unwrap_or_default();
            if let Some(seed) = common.seed {
                cfg.seeds = vec![seed];
            }
            let output = cmd_v_scaling(&cfg, &common.out)?;
            println!("v-scaling -> {}", common.out.display());
            for (v, diff, fo, rel) in &output.medians {
                println!("  V={v}: k={diff:.4} f={fo:.4} rel={rel:.4}");
            }
        }
        Command::MomentCheck { common } => {
            init_threads(common.threads)?;
            let doc = load_config(common.config.as_deref())?;
            let mut cfg = doc.moment_check.unwrap_or_default();
            if let Some(seed) = common.seed {
                cfg.seed = seed;
            }
            let report = cmd_moment_check(&cfg, &common.out)?;
            for check in &report.checks {
                println!(
                    "  {}: observed {:.3e} (tol {:.1e}) {}",
                    check.name,
                    check.observed,
                    check.tolerance,
                    if check.pass { "pass" } else { "FAIL" }
                );
            }
            if !report.all_pass {
                anyhow::bail!("moment-check failed");
            }
        }
        Command::JlBudget {
            n,
            epsilon,
            delta,
            c,
            out,
        } => {
            let budget = cmd_jl_budget(n, epsilon, delta, c, &out)?;
            println!(
                "jl-budget: n={} epsilon={} delta={} c={} -> required P = {}",
                budget.n, budget.epsilon, budget.delta, budget.concentration_constant,
                budget.required_p
            );
        }
    }
    Ok(())
}
