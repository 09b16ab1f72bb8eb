//! Tolerance-constrained crafting: walk the FGSM step size down until the
//! detector's real-adversarial and real-real statistics agree within a
//! tolerance.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attacks::{attack_batch, AttackError, AttackSpec};
use crate::classifier::{ClassifierError, Mlp};
use crate::dataio::ImageSet;
use crate::detector::{detect_multichannel, DetectError, DetectionConfig};

#[derive(Debug, Error)]
pub enum CraftError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("epsilon reached zero before the ratio gap fell within tolerance ({} iterations)", trace.len())]
    NoFeasibleEpsilon { trace: Vec<CraftStep> },
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CraftConfig {
    pub epsilon_init: f64,
    pub epsilon_step: f64,
    pub tolerance: f64,
    /// Resampling settings for each iteration's detection run.
    pub detection: DetectionConfig,
}

impl Default for CraftConfig {
    fn default() -> Self {
        Self {
            epsilon_init: 0.35,
            epsilon_step: 0.05,
            tolerance: 0.05,
            detection: DetectionConfig::default(),
        }
    }
}

impl CraftConfig {
    fn validate(&self) -> Result<(), CraftError> {
        for (name, v) in [
            ("epsilon_init", self.epsilon_init),
            ("epsilon_step", self.epsilon_step),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(CraftError::InvalidConfig(format!("{name} = {v} must be positive")));
            }
        }
        Ok(())
    }

    /// Step size of iteration `k` (0-based): `ε_init − (k+1)·ε_step`.
    pub fn epsilon_at(&self, k: usize) -> f64 {
        self.epsilon_init - (k + 1) as f64 * self.epsilon_step
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CraftStep {
    pub epsilon: f64,
    pub tau: f64,
    pub r1_mean: f64,
    pub r2_mean: f64,
    /// Model accuracy on this iteration's adversarial batch.
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CraftResult {
    pub final_epsilon: f64,
    pub trace: Vec<CraftStep>,
    pub adversarial_set: ImageSet,
}

#[derive(Debug)]
pub struct ToleranceRun {
    pub tolerance: f64,
    pub result: Result<CraftResult, CraftError>,
}

pub fn craft(model: &Mlp, real: &ImageSet, cfg: &CraftConfig) -> Result<CraftResult, CraftError> {
    if !(cfg.tolerance.is_finite() && cfg.tolerance > 0.0) {
        return Err(CraftError::InvalidConfig(format!(
            "tolerance = {} must be positive",
            cfg.tolerance
        )));
    }
    let mut runs = descend(model, real, cfg, &[cfg.tolerance])?;
    runs.pop().unwrap().result
}

/// One crafting run per tolerance. Tolerances must be positive and sorted
/// in descending order; a failing run is reported in place.
///
/// `cfg.tolerance` is ignored. Iterations are deterministic in `ε`, so a single descent serves every
/// tolerance and each result equals a separate [`craft`] call.
pub fn tolerance_curve(
    model: &Mlp,
    real: &ImageSet,
    cfg: &CraftConfig,
    tolerances: &[f64],
) -> Result<Vec<ToleranceRun>, CraftError> {
    if tolerances.is_empty() {
        return Err(CraftError::InvalidConfig("no tolerances given".into()));
    }
    if tolerances.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(CraftError::InvalidConfig(format!(
            "tolerances must be positive: {tolerances:?}"
        )));
    }
    if tolerances.windows(2).any(|w| w[0] < w[1]) {
        return Err(CraftError::InvalidConfig(format!(
            "tolerances must be sorted in descending order: {tolerances:?}"
        )));
    }
    descend(model, real, cfg, tolerances)
}

fn descend(
    model: &Mlp,
    real: &ImageSet,
    cfg: &CraftConfig,
    tolerances: &[f64],
) -> Result<Vec<ToleranceRun>, CraftError> {
    cfg.validate()?;
    if real.is_empty() {
        return Err(ClassifierError::EmptyDataset.into());
    }
    let mut trace = Vec::new();
    let mut finished: Vec<ToleranceRun> = Vec::with_capacity(tolerances.len());
    for k in 0.. {
        if finished.len() == tolerances.len() {
            break;
        }
        let epsilon = cfg.epsilon_at(k);
        if epsilon <= cfg.epsilon_step * 1e-9 {
            for &tolerance in &tolerances[finished.len()..] {
                finished.push(ToleranceRun {
                    tolerance,
                    result: Err(CraftError::NoFeasibleEpsilon {
                        trace: trace.clone(),
                    }),
                });
            }
            break;
        }
        let adversarial = attack_batch(model, real, &AttackSpec::Fgsm { epsilon })?;
        let accuracy = model.accuracy(&adversarial)?;
        let report = detect_multichannel(real, &adversarial, &cfg.detection)?.combined;
        let step = CraftStep {
            epsilon,
            tau: (report.r1_mean() - report.r2_mean()).abs(),
            r1_mean: report.r1_mean(),
            r2_mean: report.r2_mean(),
            accuracy,
        };
        trace.push(step);
        while let Some(&tolerance) = tolerances.get(finished.len()) {
            if step.tau > tolerance {
                break;
            }
            finished.push(ToleranceRun {
                tolerance,
                result: Ok(CraftResult {
                    final_epsilon: epsilon,
                    trace: trace.clone(),
                    adversarial_set: adversarial.clone(),
                }),
            });
        }
    }
    Ok(finished)
}
