use std::fs;
use std::path::Path;

use anyhow::Context;
use clap::Args;
use drdetect::detector::DetectionConfig;
use drdetect::dre::{CvGrid, DEFAULT_MAX_CENTERS};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Reads a command's parameter block from `--config`, or its defaults.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> anyhow::Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
}

/// Copies every flag that was given over the matching config field.
macro_rules! overlay {
    ($cfg:expr, $args:expr; $($field:ident),* $(,)?) => {
        $(
            if let Some(v) = $args.$field.clone() {
                $cfg.$field = v;
            }
        )*
    };
}

/// Like [`overlay!`] for config fields that are themselves optional.
macro_rules! overlay_opt {
    ($cfg:expr, $args:expr; $($field:ident),* $(,)?) => {
        $(
            if $args.$field.is_some() {
                $cfg.$field = $args.$field.clone();
            }
        )*
    };
}

pub(crate) use {overlay, overlay_opt};

/// Resampling and cross-validation flags shared by `detect` and `craft`.
#[derive(Debug, Args)]
pub struct DetectFlags {
    /// Number of resampling replicates
    #[arg(long = "t")]
    pub t: Option<usize>,
    /// Real rows drawn per replicate
    #[arg(long = "m")]
    pub m: Option<usize>,
    /// Significance level of the verdict
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Bandwidth multiples of the median heuristic, comma separated
    #[arg(long, value_delimiter = ',')]
    pub sigma_factors: Option<Vec<f64>>,
    /// Ridge values, comma separated
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Option<Vec<f64>>,
    /// Cross-validation folds
    #[arg(long)]
    pub folds: Option<usize>,
    /// Cap on kernel centers per fit
    #[arg(long)]
    pub max_centers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectParams {
    pub t: usize,
    pub m: usize,
    pub alpha: f64,
    pub sigma_factors: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub folds: usize,
    pub max_centers: usize,
}

impl Default for DetectParams {
    fn default() -> Self {
        let d = DetectionConfig::default();
        Self {
            t: d.t,
            m: d.m,
            alpha: d.alpha_level,
            sigma_factors: d.grid.sigma_factors,
            lambdas: d.grid.lambdas,
            folds: d.grid.folds,
            max_centers: DEFAULT_MAX_CENTERS,
        }
    }
}

impl DetectParams {
    pub fn apply(&mut self, flags: &DetectFlags) {
        overlay!(self, flags; t, m, alpha, sigma_factors, lambdas, folds, max_centers);
    }

    pub fn to_config(&self, seed: u64, m_suspect: Option<usize>) -> DetectionConfig {
        DetectionConfig {
            t: self.t,
            m: self.m,
            m_suspect,
            alpha_level: self.alpha,
            seed,
            grid: CvGrid {
                sigma_factors: self.sigma_factors.clone(),
                lambdas: self.lambdas.clone(),
                folds: self.folds,
            },
            max_centers: self.max_centers,
        }
    }
}
