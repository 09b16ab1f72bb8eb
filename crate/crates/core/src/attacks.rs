//! Gradient-based adversarial example generators: the fast gradient sign
//! method, its targeted variant, and the Jacobian saliency map attack.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{ClassifierError, Mlp};
use crate::dataio::{DataError, ImageSet};

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("invalid attack specification: {0}")]
    InvalidSpec(String),
    #[error("attack failed on sample {index}")]
    Sample {
        index: usize,
        #[source]
        source: ClassifierError,
    },
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Attack parameters. For the targeted methods a missing `target` means
/// "the next class after the true label".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum AttackSpec {
    Fgsm {
        epsilon: f64,
    },
    Tgsm {
        epsilon: f64,
        target: Option<usize>,
    },
    Jsma {
        theta: f64,
        gamma: f64,
        target: Option<usize>,
    },
}

impl AttackSpec {
    pub fn name(&self) -> &'static str {
        match self {
            AttackSpec::Fgsm { .. } => "fgsm",
            AttackSpec::Tgsm { .. } => "tgsm",
            AttackSpec::Jsma { .. } => "jsma",
        }
    }

    pub fn validate(&self, num_classes: usize) -> Result<(), AttackError> {
        let check_target = |t: Option<usize>| match t {
            Some(t) if t >= num_classes => Err(AttackError::InvalidSpec(format!(
                "target {t} out of range for {num_classes} classes"
            ))),
            _ => Ok(()),
        };
        match *self {
            AttackSpec::Fgsm { epsilon } => check_epsilon(epsilon),
            AttackSpec::Tgsm { epsilon, target } => {
                check_epsilon(epsilon)?;
                check_target(target)
            }
            AttackSpec::Jsma { theta, gamma, target } => {
                if !(theta.is_finite() && theta > 0.0) {
                    return Err(AttackError::InvalidSpec(format!("theta {theta} must be positive")));
                }
                if !(gamma > 0.0 && gamma <= 1.0) {
                    return Err(AttackError::InvalidSpec(format!("gamma {gamma} outside (0, 1]")));
                }
                check_target(target)
            }
        }
    }
}

fn check_epsilon(epsilon: f64) -> Result<(), AttackError> {
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(AttackError::InvalidSpec(format!("epsilon {epsilon} must be >= 0")));
    }
    Ok(())
}

/// Target used when none is given: `(label + 1) mod num_classes`.
pub fn default_target(label: usize, num_classes: usize) -> usize {
    (label + 1) % num_classes
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn step_and_clip(x: &[f64], grad: &[f64], step: f64) -> Vec<f64> {
    x.iter()
        .zip(grad)
        .map(|(xi, g)| (xi + step * sign(*g)).clamp(0.0, 1.0))
        .collect()
}

/// `clip(x + ε·sign(∇x loss(x, y)))`.
pub fn fgsm(model: &Mlp, x: &[f64], y: usize, epsilon: f64) -> Result<Vec<f64>, AttackError> {
    check_epsilon(epsilon)?;
    let g = model.input_gradient(x, y)?;
    Ok(step_and_clip(x, &g, epsilon))
}

/// `clip(x − ε·sign(∇x loss(x, target)))`: one descent step on the target
/// class loss.
pub fn tgsm(model: &Mlp, x: &[f64], target: usize, epsilon: f64) -> Result<Vec<f64>, AttackError> {
    check_epsilon(epsilon)?;
    let g = model.input_gradient(x, target)?;
    Ok(step_and_clip(x, &g, -epsilon))
}

#[derive(Debug, Clone, PartialEq)]
pub struct JsmaOutcome {
    pub sample: Vec<f64>,
    pub modified: usize,
    pub reached_target: bool,
}

/// Saliency-map attack that raises pixel pairs by `theta` until the model
/// predicts `target` or `⌊gamma·d⌋` features have been spent.
pub fn jsma(model: &Mlp, x: &[f64], target: usize, theta: f64, gamma: f64) -> Result<Vec<f64>, AttackError> {
    Ok(jsma_detailed(model, x, target, theta, gamma)?.sample)
}

pub fn jsma_detailed(
    model: &Mlp,
    x: &[f64],
    target: usize,
    theta: f64,
    gamma: f64,
) -> Result<JsmaOutcome, AttackError> {
    AttackSpec::Jsma {
        theta,
        gamma,
        target: Some(target),
    }
    .validate(model.num_classes())?;
    let d = x.len();
    let budget = (gamma * d as f64).floor() as usize;
    let mut adv = x.to_vec();
    // features still eligible: not yet touched and able to increase
    let mut domain: Vec<bool> = adv.iter().map(|&v| v < 1.0).collect();
    let mut modified = 0;
    let mut alpha = vec![0.0; d];
    let mut beta = vec![0.0; d];
    loop {
        if model.predict(&adv)? == target {
            return Ok(JsmaOutcome {
                sample: adv,
                modified,
                reached_target: true,
            });
        }
        if modified + 2 > budget {
            break;
        }
        let jac = model.logit_jacobian(&adv)?;
        alpha.copy_from_slice(jac.row(target));
        beta.fill(0.0);
        for k in (0..model.num_classes()).filter(|&k| k != target) {
            for (b, j) in beta.iter_mut().zip(jac.row(k)) {
                *b += j;
            }
        }
        let Some((p, q)) = best_pair(&alpha, &beta, &domain) else {
            break;
        };
        for f in [p, q] {
            adv[f] = (adv[f] + theta).min(1.0);
            domain[f] = false;
        }
        modified += 2;
    }
    Ok(JsmaOutcome {
        sample: adv,
        modified,
        reached_target: false,
    })
}

/// Pair `(p, q)` in the domain maximizing `(α_p+α_q)·|β_p+β_q|` subject to
/// `α_p+α_q > 0` and `β_p+β_q < 0`; first pair wins ties.
fn best_pair(alpha: &[f64], beta: &[f64], domain: &[bool]) -> Option<(usize, usize)> {
    let idx: Vec<usize> = (0..alpha.len()).filter(|&i| domain[i]).collect();
    let mut best = None;
    let mut best_score = 0.0;
    for (n, &p) in idx.iter().enumerate() {
        let (ap, bp) = (alpha[p], beta[p]);
        for &q in &idx[n + 1..] {
            let a = ap + alpha[q];
            let b = bp + beta[q];
            if a > 0.0 && b < 0.0 {
                let s = -a * b;
                if s > best_score {
                    best_score = s;
                    best = Some((p, q));
                }
            }
        }
    }
    best
}

/// Attacks every sample independently; shape and labels are preserved.
///
/// No method draws random numbers, so the output is a pure function of the
/// model, set and spec.
pub fn attack_batch(model: &Mlp, set: &ImageSet, spec: &AttackSpec) -> Result<ImageSet, AttackError> {
    spec.validate(model.num_classes())?;
    if set.sample_len() != model.input_dim() {
        return Err(ClassifierError::DimensionMismatch {
            expected: model.input_dim(),
            got: set.sample_len(),
        }
        .into());
    }
    let classes = model.num_classes();
    let samples: Vec<Vec<f64>> = (0..set.len())
        .into_par_iter()
        .map(|i| {
            let x = set.sample_f64(i);
            let y = set.labels()[i];
            let out = match *spec {
                AttackSpec::Fgsm { epsilon } => fgsm(model, &x, y, epsilon),
                AttackSpec::Tgsm { epsilon, target } => {
                    tgsm(model, &x, target.unwrap_or_else(|| default_target(y, classes)), epsilon)
                }
                AttackSpec::Jsma { theta, gamma, target } => jsma(
                    model,
                    &x,
                    target.unwrap_or_else(|| default_target(y, classes)),
                    theta,
                    gamma,
                ),
            };
            out.map_err(|e| match e {
                AttackError::Classifier(source) => AttackError::Sample { index: i, source },
                other => other,
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(ImageSet::from_samples(
        set.channels(),
        set.height(),
        set.width(),
        &samples,
        set.labels().to_vec(),
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::Layer;
    use crate::numerics::{Matrix, RngStream};
    use rand::Rng;

    fn linear(weights: &[[f64; 2]], biases: Vec<f64>) -> Mlp {
        // weights given per input row: fan_in × classes
        Mlp::from_layers(vec![Layer {
            weights: Matrix::from_rows(weights).unwrap(),
            biases,
        }])
        .unwrap()
    }

    fn random_net(seed: u64, d: usize) -> Mlp {
        Mlp::new(&[d, 12, 4], &mut RngStream::new(seed, 0)).unwrap()
    }

    fn random_x(seed: u64, d: usize) -> Vec<f64> {
        let mut rng = RngStream::new(seed, 1);
        (0..d).map(|_| rng.random::<f64>()).collect()
    }

    #[test]
    fn zero_epsilon_is_identity() {
        let m = random_net(1, 6);
        let x = random_x(1, 6);
        assert_eq!(fgsm(&m, &x, 2, 0.0).unwrap(), x);
        assert_eq!(tgsm(&m, &x, 2, 0.0).unwrap(), x);
    }

    #[test]
    fn fgsm_direction_on_linear_model() {
        // logits = Wᵀx; ∇x loss(y=0) = Σ_k (p_k − 1{k=0}) w_k
        //       = (p_0 − 1) w_0 + p_1 w_1 = p_1 (w_1 − w_0)
        // with w_0 = (1, −1), w_1 = (−1, 2) the sign is (−, +)
        let m = linear(&[[1.0, -1.0], [-1.0, 2.0]], vec![0.0, 0.0]);
        let x = [0.5, 0.5];
        let adv = fgsm(&m, &x, 0, 0.1).unwrap();
        assert!((adv[0] - 0.4).abs() < 1e-15 && (adv[1] - 0.6).abs() < 1e-15);
        // the targeted step toward class 0 goes the opposite way
        let adv = tgsm(&m, &x, 0, 0.1).unwrap();
        assert!((adv[0] - 0.6).abs() < 1e-15 && (adv[1] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn unit_epsilon_lands_on_bounds_except_flat_coordinates() {
        // the third input has no outgoing weight, so its gradient is 0
        let m = Mlp::from_layers(vec![Layer {
            weights: Matrix::from_rows(&[[1.0, -2.0, 0.5], [0.3, 0.1, -1.0], [0.0, 0.0, 0.0]]).unwrap(),
            biases: vec![0.0; 3],
        }])
        .unwrap();
        let x = [0.3, 0.6, 0.45];
        let adv = fgsm(&m, &x, 1, 1.0).unwrap();
        assert!(adv[0] == 0.0 || adv[0] == 1.0);
        assert!(adv[1] == 0.0 || adv[1] == 1.0);
        assert_eq!(adv[2], 0.45);
    }

    #[test]
    fn fgsm_stays_in_box_and_ball() {
        for seed in 0..10 {
            let m = random_net(seed, 9);
            let x = random_x(seed, 9);
            let eps = 0.05 * seed as f64;
            let g = m.input_gradient(&x, 1).unwrap();
            let adv = fgsm(&m, &x, 1, eps).unwrap();
            for i in 0..9 {
                assert!((0.0..=1.0).contains(&adv[i]));
                assert!((adv[i] - x[i]).abs() <= eps + 1e-15);
                let unclipped = x[i] + eps * sign(g[i]);
                if (0.0..=1.0).contains(&unclipped) {
                    assert_eq!(adv[i], unclipped);
                }
            }
        }
    }

    #[test]
    fn tgsm_small_step_reduces_target_loss() {
        for seed in 0..10 {
            let m = random_net(seed + 20, 8);
            let x: Vec<f64> = random_x(seed, 8).iter().map(|v| 0.25 + 0.5 * v).collect();
            let y = (seed % 4) as usize;
            let before = m.loss(&x, y).unwrap();
            let after = m.loss(&tgsm(&m, &x, y, 1e-4).unwrap(), y).unwrap();
            assert!(after < before, "seed {seed}: {after} >= {before}");
        }
    }

    #[test]
    fn jsma_budget_below_one_pair_is_identity() {
        let m = random_net(3, 10);
        let x = random_x(3, 10);
        let out = jsma_detailed(&m, &x, (m.predict(&x).unwrap() + 1) % 4, 1.0, 0.15).unwrap();
        assert_eq!(out.sample, x);
        assert_eq!(out.modified, 0);
    }

    #[test]
    fn jsma_respects_budget_and_only_increases() {
        for seed in 0..10 {
            let m = random_net(seed + 40, 30);
            let x = random_x(seed, 30);
            let target = (m.predict(&x).unwrap() + 1) % 4;
            let out = jsma_detailed(&m, &x, target, 1.0, 0.3).unwrap();
            let changed = x.iter().zip(&out.sample).filter(|(a, b)| a != b).count();
            assert!(changed <= 9, "changed {changed}");
            assert!(out.modified <= 9 && out.modified.is_multiple_of(2));
            assert!(x.iter().zip(&out.sample).all(|(a, b)| b >= a && *b <= 1.0));
            if out.reached_target {
                assert_eq!(m.predict(&out.sample).unwrap(), target);
            }
        }
    }

    #[test]
    fn jsma_picks_the_most_salient_pair() {
        let alpha = [0.5, -1.0, 2.0, 0.1];
        let beta = [-1.0, -3.0, -0.5, 0.2];
        // (0,2): 2.5·1.5 = 3.75; (1,2): 1.0·3.5 = 3.5; (0,1) fails α > 0
        assert_eq!(best_pair(&alpha, &beta, &[true; 4]), Some((0, 2)));
        assert_eq!(best_pair(&alpha, &beta, &[false, true, true, true]), Some((1, 2)));
        assert_eq!(best_pair(&[-1.0; 4], &beta, &[true; 4]), None);
    }

    #[test]
    fn already_on_target_is_untouched() {
        let m = random_net(5, 12);
        let x = random_x(5, 12);
        let t = m.predict(&x).unwrap();
        let out = jsma_detailed(&m, &x, t, 1.0, 1.0).unwrap();
        assert!(out.reached_target && out.modified == 0 && out.sample == x);
    }

    fn tiny_set(n: usize) -> ImageSet {
        let mut rng = RngStream::new(9, 9);
        let px: Vec<f32> = (0..n * 6).map(|_| rng.random::<f32>()).collect();
        ImageSet::new(1, 2, 3, px, (0..n).map(|i| i % 4).collect()).unwrap()
    }

    #[test]
    fn batch_preserves_shape_labels_and_bounds() {
        let m = random_net(6, 6);
        let set = tiny_set(20);
        for spec in [
            AttackSpec::Fgsm { epsilon: 0.3 },
            AttackSpec::Tgsm { epsilon: 0.2, target: None },
            AttackSpec::Jsma { theta: 1.0, gamma: 0.7, target: Some(0) },
        ] {
            let out = attack_batch(&m, &set, &spec).unwrap();
            assert!(out.same_shape(&set));
            assert_eq!(out.labels(), set.labels());
            assert!(out.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
            assert_eq!(out, attack_batch(&m, &set, &spec).unwrap());
        }
        let same = attack_batch(&m, &set, &AttackSpec::Fgsm { epsilon: 0.0 }).unwrap();
        assert_eq!(same, set);
    }

    #[test]
    fn batch_default_target_rotates_labels() {
        let m = random_net(7, 6);
        let set = tiny_set(8);
        let batch = attack_batch(&m, &set, &AttackSpec::Tgsm { epsilon: 0.1, target: None }).unwrap();
        for i in 0..8 {
            let t = default_target(set.labels()[i], 4);
            let one = tgsm(&m, &set.sample_f64(i), t, 0.1).unwrap();
            let as_f32: Vec<f32> = one.iter().map(|&v| v as f32).collect();
            assert_eq!(batch.sample(i), &as_f32[..]);
        }
        assert_eq!(default_target(9, 10), 0);
    }

    #[test]
    fn invalid_specs() {
        for spec in [
            AttackSpec::Fgsm { epsilon: -0.1 },
            AttackSpec::Tgsm { epsilon: 0.1, target: Some(4) },
            AttackSpec::Jsma { theta: 1.0, gamma: 0.0, target: None },
            AttackSpec::Jsma { theta: 1.0, gamma: 1.5, target: None },
            AttackSpec::Jsma { theta: 0.0, gamma: 0.5, target: None },
        ] {
            assert!(matches!(spec.validate(4), Err(AttackError::InvalidSpec(_))));
        }
        let json = serde_json::to_string(&AttackSpec::Jsma { theta: 1.0, gamma: 0.15, target: None }).unwrap();
        assert!(json.contains("\"method\":\"jsma\""));
    }
}
