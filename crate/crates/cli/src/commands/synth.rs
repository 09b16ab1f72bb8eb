use clap::Args;
use drdetect::dataio::synthetic_gaussian;
use drdetect::dre::{ratio_statistic, CvGrid, DEFAULT_MAX_CENTERS};
use drdetect::numerics::RngStream;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{self, overlay};
use crate::failure::{usage, CmdResult, Failure};
use crate::output::Outputs;
use crate::Common;

pub const REPORT_FILE: &str = "synth_report.json";

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Per-coordinate mean of the denominator sample
    #[arg(long)]
    shift: Option<f64>,
    /// Rows per sample
    #[arg(long)]
    n: Option<usize>,
    /// Number of seeded repetitions averaged
    #[arg(long)]
    seeds: Option<usize>,
    /// Dimension of both Gaussian samples
    #[arg(long)]
    dim: Option<usize>,
    /// Largest accepted |mean estimate − analytic value|
    #[arg(long)]
    tolerance: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub shift: f64,
    pub n: usize,
    pub seeds: usize,
    pub dim: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            shift: 0.5,
            n: 500,
            seeds: 20,
            dim: 1,
            tolerance: 0.15,
            seed: 42,
        }
    }
}

#[derive(Serialize)]
struct Report<'a> {
    config: &'a SynthParams,
    analytic: f64,
    mean_estimate: f64,
    deviation: f64,
    pass: bool,
    estimates: Vec<f64>,
}

/// Numerator `N(0, I)` against denominator `N(shift·1, I)`; the ratio
/// statistic estimates `E_nu[p_nu/p_de] = exp(dim·shift²)`.
pub fn run(args: &SynthArgs, common: &Common) -> CmdResult {
    let mut cfg: SynthParams = config::load(common.config.as_deref())?;
    overlay!(cfg, args; shift, n, seeds, dim, tolerance);
    overlay!(cfg, common; seed);
    if cfg.seeds == 0 || cfg.n < 2 || cfg.dim == 0 {
        return Err(usage("need --seeds >= 1, --n >= 2 and --dim >= 1"));
    }

    let grid = CvGrid::default();
    let estimates = (0..cfg.seeds)
        .into_par_iter()
        .map(|i| {
            let stream = RngStream::new(cfg.seed, i as u64);
            let nu = synthetic_gaussian(cfg.n, cfg.dim, 0.0, 1.0, &mut stream.derive(0))?;
            let de = synthetic_gaussian(cfg.n, cfg.dim, cfg.shift, 1.0, &mut stream.derive(1))?;
            let r = ratio_statistic(&nu, &de, &grid, DEFAULT_MAX_CENTERS, &mut stream.derive(2))?;
            Ok(r)
        })
        .collect::<anyhow::Result<Vec<f64>>>()?;
    let analytic = (cfg.dim as f64 * cfg.shift * cfg.shift).exp();
    let mean_estimate = estimates.iter().sum::<f64>() / estimates.len() as f64;
    let deviation = (mean_estimate - analytic).abs();
    let pass = deviation <= cfg.tolerance;

    let out = Outputs::new(&common.out_dir, !common.no_timestamp)?;
    let report = Report {
        config: &cfg,
        analytic,
        mean_estimate,
        deviation,
        pass,
        estimates,
    };
    let path = out.json(REPORT_FILE, "synth", &report)?;
    println!(
        "dim {} shift {}: mean estimate {mean_estimate:.4}, analytic {analytic:.4}, deviation {deviation:.4} (tolerance {})",
        cfg.dim, cfg.shift, cfg.tolerance
    );
    println!("wrote {}", path.display());
    if !pass {
        return Err(Failure::Validation(format!(
            "estimate {mean_estimate:.4} is {deviation:.4} from {analytic:.4}"
        )));
    }
    Ok(())
}
