use std::path::PathBuf;

use clap::{Args, ValueEnum};
use drdetect::attacks::{attack_batch, AttackSpec};
use drdetect::dataio::save_drset;
use serde::{Deserialize, Serialize};

use super::load_model;
use crate::config::{self, overlay, overlay_opt};
use crate::data::{self, Split};
use crate::failure::{usage, CmdResult, Failure};
use crate::output::{sha256_file, Outputs};
use crate::Common;

pub const SET_FILE: &str = "adversarial.drset";
pub const META_FILE: &str = "adversarial.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Fgsm,
    Tgsm,
    Jsma,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::Fgsm => "fgsm",
            Method::Tgsm => "tgsm",
            Method::Jsma => "jsma",
        }
    }
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    /// Model file written by `train`
    #[arg(long)]
    model: Option<PathBuf>,
    /// Dataset to attack (test split for named datasets)
    #[arg(long)]
    data: Option<String>,
    #[arg(long, value_enum)]
    method: Option<Method>,
    /// Max-norm step for FGSM and TGSM
    #[arg(long)]
    epsilon: Option<f64>,
    /// Per-pixel increase for JSMA
    #[arg(long)]
    theta: Option<f64>,
    /// Fraction of pixels JSMA may modify
    #[arg(long)]
    gamma: Option<f64>,
    /// Target class for TGSM and JSMA [default: label + 1 modulo classes]
    #[arg(long)]
    target: Option<usize>,
    /// Attack the first N rows only
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackParams {
    pub model: Option<PathBuf>,
    pub data: String,
    pub method: Option<Method>,
    pub epsilon: Option<f64>,
    pub theta: f64,
    pub gamma: Option<f64>,
    pub target: Option<usize>,
    pub limit: Option<usize>,
    pub seed: u64,
}

impl Default for AttackParams {
    fn default() -> Self {
        Self {
            model: None,
            data: "mnist".into(),
            method: None,
            epsilon: None,
            theta: 1.0,
            gamma: None,
            target: None,
            limit: None,
            seed: 42,
        }
    }
}

impl AttackParams {
    fn spec(&self) -> Result<AttackSpec, Failure> {
        let method = self.method.ok_or_else(|| usage("--method is required"))?;
        let epsilon = || {
            self.epsilon
                .ok_or_else(|| usage(format!("--method {} needs --epsilon", method.name())))
        };
        Ok(match method {
            Method::Fgsm => AttackSpec::Fgsm { epsilon: epsilon()? },
            Method::Tgsm => AttackSpec::Tgsm {
                epsilon: epsilon()?,
                target: self.target,
            },
            Method::Jsma => AttackSpec::Jsma {
                theta: self.theta,
                gamma: self.gamma.ok_or_else(|| usage("--method jsma needs --gamma"))?,
                target: self.target,
            },
        })
    }
}

#[derive(Serialize)]
struct Sidecar<'a> {
    config: &'a AttackParams,
    attack: AttackSpec,
    model_sha256: String,
    samples: usize,
    clean_accuracy: f64,
    adversarial_accuracy: f64,
    output_file: &'a str,
    output_sha256: String,
}

pub fn run(args: &AttackArgs, common: &Common) -> CmdResult {
    let mut cfg: AttackParams = config::load(common.config.as_deref())?;
    overlay!(cfg, args; data, theta);
    overlay!(cfg, common; seed);
    overlay_opt!(cfg, args; model, method, epsilon, gamma, target, limit);
    let spec = cfg.spec()?;

    let (model, model_path) = load_model(cfg.model.as_ref())?;
    spec.validate(model.num_classes())?;
    let set = data::load(&cfg.data, Split::Test, cfg.limit)?;
    let adversarial = attack_batch(&model, &set, &spec)?;

    let out = Outputs::new(&common.out_dir, !common.no_timestamp)?;
    let set_path = out.path(SET_FILE);
    save_drset(&adversarial, &set_path)?;
    let clean_accuracy = model.accuracy(&set)?;
    let adversarial_accuracy = model.accuracy(&adversarial)?;
    let sidecar = Sidecar {
        config: &cfg,
        attack: spec,
        model_sha256: sha256_file(&model_path)?,
        samples: adversarial.len(),
        clean_accuracy,
        adversarial_accuracy,
        output_file: SET_FILE,
        output_sha256: sha256_file(&set_path)?,
    };
    let meta = out.json(META_FILE, "attack", &sidecar)?;
    println!(
        "{} on {} rows: accuracy {clean_accuracy:.4} -> {adversarial_accuracy:.4}",
        spec.name(),
        adversarial.len()
    );
    println!("wrote {} and {}", set_path.display(), meta.display());
    Ok(())
}
