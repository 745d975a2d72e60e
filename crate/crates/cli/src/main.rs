use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use cbm_core::harness::{run_experiment, sweep, ExperimentConfig, Geometry, Resolution};
use cbm_core::Layer;

#[derive(Parser)]
#[command(name = "cbm", version, about = "Sparse curvelet representation of oscillatory N-body sums")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build, apply once and compare against direct summation.
    Run {
        #[command(flatten)]
        common: Common,
        /// Dimensionless size κD.
        #[arg(long = "kappa-d")]
        kappa_d: f64,
        /// JSON report path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One run per κD, written as CSV with fitted slopes.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long = "kappa-d-list", value_delimiter = ',', required = true)]
        kappa_d_list: Vec<f64>,
        /// CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value = "single")]
    kernel: Layer,
    /// Points per wavelength on the sphere.
    #[arg(long, conflicts_with = "n")]
    ppw: Option<f64>,
    /// Explicit sphere point count.
    #[arg(long)]
    n: Option<usize>,
    /// `sphere`, `csv:PATH` or `obj:PATH`.
    #[arg(long, default_value = "sphere")]
    geometry: Geometry,
    #[arg(long, default_value_t = 1e-3)]
    epsilon: f64,
    #[arg(long = "leaf-size", default_value_t = cbm_core::geometry::tree::DEFAULT_LEAF_CAPACITY)]
    leaf_size: usize,
    /// Low-frequency interpolation order; derived from ε when omitted.
    #[arg(long)]
    order: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of targets checked against direct summation.
    #[arg(long = "error-samples", default_value_t = 500)]
    error_samples: usize,
}

impl Common {
    fn config(&self, kappa_d: f64) -> ExperimentConfig {
        let resolution = match (self.n, self.ppw) {
            (Some(n), _) => Resolution::Count(n),
            (None, Some(p)) => Resolution::PointsPerWavelength(p),
            (None, None) => Resolution::PointsPerWavelength(10.0),
        };
        ExperimentConfig {
            layer: self.kernel,
            kappa_d,
            resolution,
            geometry: self.geometry.clone(),
            epsilon: self.epsilon,
            leaf_capacity: self.leaf_size,
            order: self.order,
            seed: self.seed,
            error_samples: self.error_samples,
            output: None,
        }
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { common, kappa_d, out } => {
            let config = ExperimentConfig {
                output: out.clone(),
                ..common.config(kappa_d)
            };
            let report = run_experiment(&config)?;
            if out.is_none() {
                println!("{}", report.to_json()?);
            } else {
                eprintln!(
                    "N = {}, eps_a = {:.3e}, nnz = {}, T_t = {:.2} s",
                    report.n, report.eps_a, report.nnz, report.t_t
                );
            }
        }
        Command::Sweep {
            common,
            kappa_d_list,
            out,
        } => {
            let result = sweep(&common.config(kappa_d_list[0]), &kappa_d_list);
            let sink: Box<dyn Write> = match &out {
                Some(p) => Box::new(BufWriter::new(
                    File::create(p).with_context(|| format!("creating {}", p.display()))?,
                )),
                None => Box::new(io::stdout().lock()),
            };
            result.write_csv(sink)?;
            for (kd, msg) in &result.failures {
                eprintln!("kappa_D = {kd} failed: {msg}");
            }
        }
    }
    Ok(())
}
