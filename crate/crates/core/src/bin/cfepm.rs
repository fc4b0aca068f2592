use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use cfe_patchmatch::pipeline::{self, KernelKind, RunConfig};

/// Coarse-to-fine Embedded PatchMatch matching, texture transfer and cost
/// accounting.
#[derive(Parser)]
#[command(name = "cfepm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Match LR↑ against every Ref scale; writes NNF1 files and summary.json into --out.
    Match(Common),
    /// Aggregate Ref pixels along the matches and write the fused image to --out.
    Transfer(TransferArgs),
    /// Single-scale vs coarse-to-fine MSE traces against the exhaustive oracle (CSV into --out).
    Convergence(Common),
    /// Predicted vs measured relevance-evaluation counts on random features.
    Bench(BenchArgs),
    /// Exhaustive matching for every Ref scale; writes NNF1 files and oracle.json into --out.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lr: Option<PathBuf>,
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// LR upsampling factor [default: 4]
    #[arg(long)]
    scale: Option<usize>,
    /// Ref pyramid ratio [default: 0.8]
    #[arg(long)]
    k: Option<f64>,
    /// Number of Ref scales [default: 5]
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// WGT1 offset-predictor weights for dynamic aggregation.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Descriptor patch size (odd) [default: 7]
    #[arg(long)]
    patch_size: Option<usize>,
    /// Also write every pyramid level's field.
    #[arg(long)]
    dump_levels: bool,
}

#[derive(Args)]
struct TransferArgs {
    #[command(flatten)]
    common: Common,
    /// Directory of `match` output to reuse instead of matching again.
    #[arg(long)]
    nnf: Option<PathBuf>,
    /// Ground-truth HR image; writes PSNRs to `<out>.json`.
    #[arg(long)]
    hr: Option<PathBuf>,
    /// Tap weights when no tap-weight file is configured.
    #[arg(long, value_enum)]
    kernel: Option<Kernel>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Kernel {
    Uniform,
    Delta,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated square sizes [default: 64,128,250]
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    common: Common,
    /// Directory of `match` output to score against the oracle.
    #[arg(long)]
    compare: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_toml_file(p)?,
            None => RunConfig::default(),
        };
        if self.lr.is_some() {
            cfg.lr_path = self.lr.clone();
        }
        if self.reference.is_some() {
            cfg.ref_path = self.reference.clone();
        }
        if self.out.is_some() {
            cfg.out_path = self.out.clone();
        }
        if let Some(v) = self.scale {
            cfg.upscale = v;
        }
        if let Some(v) = self.k {
            cfg.k = v;
        }
        if let Some(v) = self.n {
            cfg.n = v;
        }
        if let Some(v) = self.seed {
            cfg.rng_seed = v;
        }
        if self.threads.is_some() {
            cfg.threads = self.threads;
        }
        if self.weights.is_some() {
            cfg.aggregation.offset_weights = self.weights.clone();
        }
        if let Some(v) = self.patch_size {
            cfg.descriptor.patch_size = v;
        }
        cfg.dump_levels |= self.dump_levels;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn init_threads(cfg: &RunConfig) -> Result<()> {
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let start = Instant::now();
    match cli.command {
        Command::Match(c) => {
            let cfg = c.resolve()?;
            init_threads(&cfg)?;
            let summary = pipeline::cmd_match(&cfg, cfg.out()?)?;
            for s in &summary.scales {
                println!(
                    "scale {}  ref {}x{}  mean relevance {:.6}  evals {}",
                    s.scale, s.ref_height, s.ref_width, s.mean_relevance, s.propagation_evals
                );
            }
        }
        Command::Transfer(t) => {
            let mut cfg = t.common.resolve()?;
            if let Some(k) = t.kernel {
                cfg.aggregation.kernel = match k {
                    Kernel::Uniform => KernelKind::Uniform,
                    Kernel::Delta => KernelKind::Delta,
                };
            }
            init_threads(&cfg)?;
            let report = pipeline::cmd_transfer(&cfg, cfg.out()?, t.nnf.as_deref(), t.hr.as_deref())?;
            if let Some(r) = report {
                let show = |v: Option<f64>| v.map_or(String::from("inf"), |v| format!("{v:.3}"));
                println!("PSNR transfer {} dB  bicubic {} dB", show(r.psnr_transfer), show(r.psnr_bicubic));
            }
        }
        Command::Convergence(c) => {
            let cfg = c.resolve()?;
            init_threads(&cfg)?;
            let s = pipeline::cmd_convergence(&cfg, cfg.out()?)?;
            let show = |v: Option<u64>| v.map_or(String::from("never"), |v| v.to_string());
            println!(
                "evals to MSE <= {}: single-scale {}  cfe {}",
                s.threshold,
                show(s.single_scale.evals_to_threshold),
                show(s.cfe.evals_to_threshold)
            );
            println!("final MSE: single-scale {:.3e}  cfe {:.3e}", s.single_scale.final_mse, s.cfe.final_mse);
        }
        Command::Bench(b) => {
            let mut cfg = b.common.resolve()?;
            if let Some(sizes) = b.sizes {
                cfg.bench.sizes = sizes;
            }
            init_threads(&cfg)?;
            let report = pipeline::cmd_bench(&cfg, cfg.out_path.as_deref())?;
            print!("{}", report.to_table());
        }
        Command::Oracle(o) => {
            let cfg = o.common.resolve()?;
            init_threads(&cfg)?;
            let scales = pipeline::cmd_oracle(&cfg, cfg.out()?, o.compare.as_deref())?;
            for s in &scales {
                print!("scale {}  oracle mean relevance {:.6}  evals {}", s.scale, s.mean_relevance, s.evals);
                if let (Some(mse), Some(max)) = (s.mse, s.max_gap) {
                    print!("  mse {mse:.3e}  max gap {max:.4}");
                }
                println!();
            }
        }
    }
    eprintln!("wall time {:.3} s", start.elapsed().as_secs_f64());
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
