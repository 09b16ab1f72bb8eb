use std::path::PathBuf;

use clap::Args;
use drdetect::crafter::{craft, tolerance_curve, CraftConfig, CraftError, CraftResult, CraftStep};
use drdetect::dataio::save_drset;
use serde::{Deserialize, Serialize};

use super::load_model;
use crate::config::{self, overlay, overlay_opt, DetectFlags, DetectParams};
use crate::data::{self, Split};
use crate::failure::{describe, usage, CmdResult, Failure};
use crate::output::Outputs;
use crate::Common;

pub const TRACE_FILE: &str = "craft_trace.json";
pub const SET_FILE: &str = "crafted.drset";
pub const CURVE_FILE: &str = "craft_curve.json";
pub const CURVE_CSV: &str = "craft_curve.csv";

#[derive(Debug, Args)]
pub struct CraftArgs {
    /// Model file written by `train`
    #[arg(long)]
    model: Option<PathBuf>,
    /// Real data the batch is crafted from (test split for named datasets)
    #[arg(long)]
    data: Option<String>,
    /// Use only the first N rows
    #[arg(long)]
    limit: Option<usize>,
    /// Starting FGSM epsilon; the first tried value is one step below it
    #[arg(long)]
    epsilon_init: Option<f64>,
    /// Decrease of epsilon per iteration
    #[arg(long)]
    epsilon_step: Option<f64>,
    /// Accepted gap between the mean ratio statistics
    #[arg(long)]
    tolerance: Option<f64>,
    /// Run one craft per tolerance (descending, comma separated) instead of
    /// a single run
    #[arg(long, value_delimiter = ',')]
    curve: Option<Vec<f64>>,
    #[command(flatten)]
    detection: DetectFlags,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CraftParams {
    pub model: Option<PathBuf>,
    pub data: String,
    pub limit: Option<usize>,
    pub epsilon_init: f64,
    pub epsilon_step: f64,
    pub tolerance: f64,
    pub curve: Option<Vec<f64>>,
    pub detection: DetectParams,
    pub seed: u64,
}

impl Default for CraftParams {
    fn default() -> Self {
        let c = CraftConfig::default();
        Self {
            model: None,
            data: "mnist".into(),
            limit: None,
            epsilon_init: c.epsilon_init,
            epsilon_step: c.epsilon_step,
            tolerance: c.tolerance,
            curve: None,
            detection: DetectParams::default(),
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
enum Status {
    Converged,
    NoFeasibleEpsilon,
    Failed,
}

/// One craft run as written to disk.
#[derive(Serialize)]
struct Run {
    tolerance: f64,
    status: Status,
    final_epsilon: Option<f64>,
    accuracy: Option<f64>,
    iterations: usize,
    trace: Vec<CraftStep>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    output_file: Option<String>,
}

impl Run {
    fn new(tolerance: f64, result: &Result<CraftResult, CraftError>, output_file: &str) -> Self {
        match result {
            Ok(r) => Run {
                tolerance,
                status: Status::Converged,
                final_epsilon: Some(r.final_epsilon),
                accuracy: r.trace.last().map(|s| s.accuracy),
                iterations: r.trace.len(),
                trace: r.trace.clone(),
                error: None,
                output_file: Some(output_file.to_string()),
            },
            Err(CraftError::NoFeasibleEpsilon { trace }) => Run {
                tolerance,
                status: Status::NoFeasibleEpsilon,
                final_epsilon: None,
                accuracy: None,
                iterations: trace.len(),
                trace: trace.clone(),
                error: Some(describe(result.as_ref().unwrap_err())),
                output_file: None,
            },
            Err(e) => Run {
                tolerance,
                status: Status::Failed,
                final_epsilon: None,
                accuracy: None,
                iterations: 0,
                trace: Vec::new(),
                error: Some(describe(e)),
                output_file: None,
            },
        }
    }
}

#[derive(Serialize)]
struct SingleReport<'a> {
    config: &'a CraftParams,
    samples: usize,
    clean_accuracy: f64,
    #[serde(flatten)]
    run: Run,
}

#[derive(Serialize)]
struct CurveReport<'a> {
    config: &'a CraftParams,
    samples: usize,
    clean_accuracy: f64,
    runs: Vec<Run>,
}

#[derive(Serialize)]
struct CurveRow {
    tolerance: f64,
    status: Status,
    final_epsilon: Option<f64>,
    accuracy: Option<f64>,
    iterations: usize,
}

pub fn run(args: &CraftArgs, common: &Common) -> CmdResult {
    let mut cfg: CraftParams = config::load(common.config.as_deref())?;
    overlay!(cfg, args; data, epsilon_init, epsilon_step, tolerance);
    overlay!(cfg, common; seed);
    overlay_opt!(cfg, args; model, limit, curve);
    cfg.detection.apply(&args.detection);

    let (model, _) = load_model(cfg.model.as_ref())?;
    let real = data::load(&cfg.data, Split::Test, cfg.limit)?;
    let craft_cfg = CraftConfig {
        epsilon_init: cfg.epsilon_init,
        epsilon_step: cfg.epsilon_step,
        tolerance: cfg.tolerance,
        detection: cfg.detection.to_config(cfg.seed, None),
    };
    let clean_accuracy = model.accuracy(&real)?;
    let out = Outputs::new(&common.out_dir, !common.no_timestamp)?;

    match cfg.curve.clone() {
        None => {
            let result = match craft(&model, &real, &craft_cfg) {
                Err(e @ (CraftError::InvalidConfig(_) | CraftError::Classifier(_))) => return Err(e.into()),
                other => other,
            };
            if let Ok(r) = &result {
                save_drset(&r.adversarial_set, &out.path(SET_FILE))?;
            }
            let run = Run::new(cfg.tolerance, &result, SET_FILE);
            print_run(&run);
            let report = SingleReport {
                config: &cfg,
                samples: real.len(),
                clean_accuracy,
                run,
            };
            let path = out.json(TRACE_FILE, "craft", &report)?;
            println!("wrote {}", path.display());
            match result {
                Ok(_) => Ok(()),
                Err(e @ CraftError::NoFeasibleEpsilon { .. }) => Err(Failure::Infeasible(e.to_string())),
                Err(e) => Err(e.into()),
            }
        }
        Some(tolerances) => {
            if tolerances.is_empty() {
                return Err(usage("--curve needs at least one tolerance"));
            }
            let results = tolerance_curve(&model, &real, &craft_cfg, &tolerances)?;
            let mut runs = Vec::with_capacity(results.len());
            for (k, r) in results.iter().enumerate() {
                let name = format!("crafted_{k}.drset");
                if let Ok(c) = &r.result {
                    save_drset(&c.adversarial_set, &out.path(&name))?;
                }
                let run = Run::new(r.tolerance, &r.result, &name);
                print_run(&run);
                runs.push(run);
            }
            let rows: Vec<CurveRow> = runs
                .iter()
                .map(|r| CurveRow {
                    tolerance: r.tolerance,
                    status: r.status,
                    final_epsilon: r.final_epsilon,
                    accuracy: r.accuracy,
                    iterations: r.iterations,
                })
                .collect();
            let csv_path = out.csv(CURVE_CSV, rows)?;
            let all_failed = runs.iter().all(|r| r.status != Status::Converged);
            let report = CurveReport {
                config: &cfg,
                samples: real.len(),
                clean_accuracy,
                runs,
            };
            let path = out.json(CURVE_FILE, "craft", &report)?;
            println!("wrote {} and {}", path.display(), csv_path.display());
            if all_failed {
                return Err(Failure::Infeasible("no tolerance in the curve was reached".into()));
            }
            Ok(())
        }
    }
}

fn print_run(run: &Run) {
    for s in &run.trace {
        println!(
            "  epsilon {:.4}: R1 {:.4}  R2 {:.4}  tau {:.4}  accuracy {:.4}",
            s.epsilon, s.r1_mean, s.r2_mean, s.tau, s.accuracy
        );
    }
    match run.final_epsilon {
        Some(eps) => println!("tolerance {}: final epsilon {eps:.4} after {} iterations", run.tolerance, run.iterations),
        None => println!(
            "tolerance {}: {}",
            run.tolerance,
            run.error.as_deref().unwrap_or("no result")
        ),
    }
}
