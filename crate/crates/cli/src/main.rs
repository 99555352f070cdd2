//! Command-line front end: run optimizations, print diagnostics, and
//! summarize snapshot files.

use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};

use lamina::driver::{diagnostic_strips, load_config, read_vtk_summary, run};

#[derive(Parser)]
#[command(name = "lamina", version, about = "Topology optimization of thin-walled structures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an optimization described by a config file.
    Run {
        /// Path to a `key = value` config file.
        config: PathBuf,
        /// Overrides `output.directory` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `optimizer.max_iters` from the config.
        #[arg(long)]
        max_iters: Option<usize>,
        /// Drops the maximum-size constraint from the optimizer (it is
        /// still evaluated and logged).
        #[arg(long)]
        no_maxsize: bool,
    },
    /// Diagnostics that exercise parts of the pipeline in isolation.
    Diagnostics {
        #[command(subcommand)]
        what: Diagnostic,
    },
    /// Summarize a mesh snapshot file.
    MeshInfo {
        /// Path to a legacy-text grid file.
        file: PathBuf,
    },
}

#[derive(Subcommand)]
enum Diagnostic {
    /// Smooth a synthetic strip pattern at several detection diameters and
    /// report what the size detector flags.
    Strips {
        /// Config file; supplies the minimum feature diameter.
        config: PathBuf,
    },
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Run { config, out, max_iters, no_maxsize } => {
            let mut cfg = load_config(&config)
                .with_context(|| format!("loading config {}", config.display()))?;
            if let Some(dir) = out {
                cfg.out_dir = dir;
            }
            if let Some(n) = max_iters {
                cfg.max_iters = n;
            }
            if no_maxsize {
                cfg.maxsize_enabled = false;
            }
            cfg.validate()?;

            println!(
                "problem {}, volume bound {}, feature diameters [{}, {}]",
                cfg.problem.name(),
                cfg.volume_bound,
                cfg.min_diameter,
                cfg.max_diameter
            );
            let result = run(&cfg).context("run failed")?;

            let last = result.log.last().expect("at least one iteration");
            println!(
                "stopped: {} after {} iterations ({:.1}s)",
                result.stop,
                result.log.len(),
                last.seconds
            );
            println!("final compliance        {:.6e}", last.compliance);
            println!("volume constraint       {:+.3e}", last.volume);
            println!(
                "max-size constraint     {:+.3e} ({})",
                last.maxsize,
                if cfg.maxsize_enabled { "enforced" } else { "logged only" }
            );
            println!(
                "final mesh: {} elements, {} nodes",
                result.mesh.element_count(),
                result.mesh.node_count()
            );
            println!("artifacts:");
            for path in &result.artifacts {
                println!("  {}", path.display());
            }
        }
        Command::Diagnostics { what: Diagnostic::Strips { config } } => {
            let cfg = load_config(&config)
                .with_context(|| format!("loading config {}", config.display()))?;
            let report = diagnostic_strips(&cfg).context("strip diagnostic failed")?;
            print!("{}", report.render_table());
        }
        Command::MeshInfo { file } => {
            let summary = read_vtk_summary(&file)
                .with_context(|| format!("reading {}", file.display()))?;
            println!("points: {}", summary.points);
            println!("cells:  {}", summary.cells);
            match summary.dimension() {
                Some(d) => println!("cell type: {} ({d}D simplices)", summary.cell_type),
                None => println!("cell type: {}", summary.cell_type),
            }
            let lo = summary.bounds_lo;
            let hi = summary.bounds_hi;
            println!(
                "bounds: [{}, {}] x [{}, {}] x [{}, {}]",
                lo[0], hi[0], lo[1], hi[1], lo[2], hi[2]
            );
            println!(
                "point arrays: {}",
                if summary.point_arrays.is_empty() {
                    "(none)".to_string()
                } else {
                    summary.point_arrays.join(", ")
                }
            );
            println!(
                "cell arrays:  {}",
                if summary.cell_arrays.is_empty() {
                    "(none)".to_string()
                } else {
                    summary.cell_arrays.join(", ")
                }
            );
        }
    }
    Ok(())
}
