//! Repeated paired resampling detector.
//!
//! Each replicate draws `m` real rows `x` and `m_suspect` aligned rows, then
//! compares `R1 = R(x, suspect[b])` against the real-real baseline
//! `R2 = R(x, real[b])`. The replicate traces are summarised with t
//! intervals and compared with Welch's test.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{channel_matrix, ImageSet};
use crate::dre::{fit_ulsif_detailed, CvGrid, DreError, DEFAULT_MAX_CENTERS};
use crate::numerics::{
    mean_ci, sample_index_without_replacement, welch_t_test, ConfidenceInterval, Matrix,
    NumericsError, RngStream,
};

pub const CI_LEVEL: f64 = 0.95;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("cannot draw {m} rows from {n}")]
    SampleTooLarge { n: usize, m: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("channel mismatch: {0}")]
    ChannelMismatch(String),
    #[error("replicate {replicate} failed")]
    Replicate {
        replicate: usize,
        #[source]
        source: DreError,
    },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    pub t: usize,
    pub m: usize,
    /// Defaults to `m` when absent.
    pub m_suspect: Option<usize>,
    pub alpha_level: f64,
    pub seed: u64,
    pub grid: CvGrid,
    pub max_centers: usize,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            t: 100,
            m: 100,
            m_suspect: None,
            alpha_level: 0.05,
            seed: 42,
            grid: CvGrid::default(),
            max_centers: DEFAULT_MAX_CENTERS,
        }
    }
}

impl DetectionConfig {
    pub fn m_suspect(&self) -> usize {
        self.m_suspect.unwrap_or(self.m)
    }

    /// Checks sizes against `n_real` real rows and `n_suspect` suspect rows.
    pub fn validate(&self, n_real: usize, n_suspect: usize) -> Result<(), DetectError> {
        if self.t < 2 {
            return Err(DetectError::InvalidConfig(format!("t = {} (need >= 2)", self.t)));
        }
        if self.m < 2 {
            return Err(DetectError::InvalidConfig(format!("m = {} (need >= 2)", self.m)));
        }
        if self.m_suspect() == 0 {
            return Err(DetectError::InvalidConfig("m_suspect must be >= 1".into()));
        }
        if !(self.alpha_level > 0.0 && self.alpha_level < 1.0) {
            return Err(DetectError::InvalidConfig(format!(
                "alpha level {} outside (0, 1)",
                self.alpha_level
            )));
        }
        self.grid
            .validate()
            .map_err(|e| DetectError::InvalidConfig(e.to_string()))?;
        if self.max_centers == 0 {
            return Err(DetectError::InvalidConfig("max_centers must be >= 1".into()));
        }
        if self.m > n_real {
            return Err(DetectError::SampleTooLarge { n: n_real, m: self.m });
        }
        let pool = n_real.min(n_suspect);
        if self.m_suspect() > pool {
            return Err(DetectError::SampleTooLarge {
                n: pool,
                m: self.m_suspect(),
            });
        }
        Ok(())
    }

    fn resolved(&self) -> Self {
        Self {
            m_suspect: Some(self.m_suspect()),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Adversarial,
    NotAdversarial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub r1_values: Vec<f64>,
    pub r2_values: Vec<f64>,
    pub r1: ConfidenceInterval,
    pub r2: ConfidenceInterval,
    pub p_value: f64,
    pub verdict: Verdict,
    /// Resolved configuration (`m_suspect` filled in).
    pub config: DetectionConfig,
    /// Stream id of each replicate under `config.seed`.
    pub replicate_streams: Vec<u64>,
    /// The real-real baseline was fitted against fewer rows than CV folds,
    /// so it is expected to sit well above 1.
    pub inflated_baseline: bool,
    pub notes: Vec<String>,
}

impl DetectionReport {
    pub fn r1_mean(&self) -> f64 {
        self.r1.mean
    }

    pub fn r2_mean(&self) -> f64 {
        self.r2.mean
    }

    fn build(r1_values: Vec<f64>, r2_values: Vec<f64>, cfg: &DetectionConfig) -> Result<Self, DetectError> {
        let r1 = mean_ci(&r1_values, CI_LEVEL)?;
        let r2 = mean_ci(&r2_values, CI_LEVEL)?;
        let p_value = welch_t_test(&r1_values, &r2_values)?;
        let verdict = if p_value < cfg.alpha_level && r1.mean > r2.mean {
            Verdict::Adversarial
        } else {
            Verdict::NotAdversarial
        };
        let inflated_baseline = cfg.m_suspect() < cfg.grid.folds;
        let mut notes = Vec::new();
        if inflated_baseline {
            notes.push(format!(
                "m_suspect = {} is below the {} cross-validation folds: the denominator \
                 sample is not split and the real-real baseline R2 is inflated above 1",
                cfg.m_suspect(),
                cfg.grid.folds
            ));
        }
        Ok(Self {
            replicate_streams: (0..r1_values.len() as u64).collect(),
            r1_values,
            r2_values,
            r1,
            r2,
            p_value,
            verdict,
            config: cfg.resolved(),
            inflated_baseline,
            notes,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiChannelReport {
    pub channels: Vec<DetectionReport>,
    /// Summary over the per-replicate channel means.
    pub combined: DetectionReport,
}

/// Runs the detector on single-channel data (rows are samples).
pub fn detect(real: &Matrix, suspect: &Matrix, cfg: &DetectionConfig) -> Result<DetectionReport, DetectError> {
    let mut report = run_channels(std::slice::from_ref(real), std::slice::from_ref(suspect), cfg)?;
    Ok(report.channels.pop().unwrap())
}

/// Runs the detector per channel with indices shared across channels, plus
/// a combined summary whose replicate values are the channel means.
pub fn detect_multichannel(
    real: &ImageSet,
    suspect: &ImageSet,
    cfg: &DetectionConfig,
) -> Result<MultiChannelReport, DetectError> {
    if real.channels() != suspect.channels()
        || real.height() != suspect.height()
        || real.width() != suspect.width()
    {
        return Err(DetectError::ChannelMismatch(format!(
            "real is {}x{}x{}, suspect is {}x{}x{}",
            real.channels(),
            real.height(),
            real.width(),
            suspect.channels(),
            suspect.height(),
            suspect.width()
        )));
    }
    let split = |set: &ImageSet| -> Vec<Matrix> {
        (0..set.channels())
            .map(|c| channel_matrix(set, c).expect("channel index in range"))
            .collect()
    };
    run_channels(&split(real), &split(suspect), cfg)
}

/// One report per size, with `m = m_suspect = size`.
pub fn sample_size_sweep(
    real: &Matrix,
    suspect: &Matrix,
    cfg: &DetectionConfig,
    sizes: &[usize],
) -> Result<Vec<DetectionReport>, DetectError> {
    sizes
        .iter()
        .map(|&size| {
            let cfg = DetectionConfig {
                m: size,
                m_suspect: Some(size),
                ..cfg.clone()
            };
            detect(real, suspect, &cfg)
        })
        .collect()
}

/// One report per suspect size with `m` held at `cfg.m`.
pub fn asymmetric_sweep(
    real: &Matrix,
    suspect: &Matrix,
    cfg: &DetectionConfig,
    suspect_sizes: &[usize],
) -> Result<Vec<DetectionReport>, DetectError> {
    suspect_sizes
        .iter()
        .map(|&size| {
            let cfg = DetectionConfig {
                m_suspect: Some(size),
                ..cfg.clone()
            };
            detect(real, suspect, &cfg)
        })
        .collect()
}

fn run_channels(real: &[Matrix], suspect: &[Matrix], cfg: &DetectionConfig) -> Result<MultiChannelReport, DetectError> {
    let n_real = real[0].rows();
    let n_suspect = suspect[0].rows();
    for (r, s) in real.iter().zip(suspect) {
        if r.cols() != s.cols() {
            return Err(DetectError::ChannelMismatch(format!(
                "real has {} features per channel, suspect {}",
                r.cols(),
                s.cols()
            )));
        }
    }
    cfg.validate(n_real, n_suspect)?;
    let m_suspect = cfg.m_suspect();
    let pool = n_real.min(n_suspect);

    // per replicate: per channel (r1, r2)
    let values: Vec<Vec<(f64, f64)>> = (0..cfg.t)
        .into_par_iter()
        .map(|i| {
            let mut stream = RngStream::new(cfg.seed, i as u64);
            let a = sample_index_without_replacement(n_real, cfg.m, &mut stream)?;
            let b = sample_index_without_replacement(pool, m_suspect, &mut stream)?;
            // both statistics of every channel see the same fitting draws
            let fit_rng = stream.derive(1);
            let wrap = |source| DetectError::Replicate { replicate: i, source };
            real.iter()
                .zip(suspect)
                .map(|(re, su)| {
                    let x = re.select_rows(&a);
                    let y = su.select_rows(&b);
                    let z = re.select_rows(&b);
                    let r1 = fit_ulsif_detailed(&x, &y, &cfg.grid, cfg.max_centers, &mut fit_rng.clone())
                        .map_err(wrap)?
                        .statistic;
                    let r2 = fit_ulsif_detailed(&x, &z, &cfg.grid, cfg.max_centers, &mut fit_rng.clone())
                        .map_err(wrap)?
                        .statistic;
                    Ok((r1, r2))
                })
                .collect()
        })
        .collect::<Result<_, DetectError>>()?;

    let n_ch = real.len();
    let channels = (0..n_ch)
        .map(|c| {
            let r1 = values.iter().map(|v| v[c].0).collect();
            let r2 = values.iter().map(|v| v[c].1).collect();
            DetectionReport::build(r1, r2, cfg)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let combine = |pick: fn(&(f64, f64)) -> f64| -> Vec<f64> {
        values
            .iter()
            .map(|v| v.iter().map(pick).sum::<f64>() / n_ch as f64)
            .collect()
    };
    let combined = DetectionReport::build(combine(|p| p.0), combine(|p| p.1), cfg)?;
    Ok(MultiChannelReport { channels, combined })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::synthetic_gaussian;

    fn gauss(n: usize, dim: usize, mean: f64, seed: u64) -> Matrix {
        synthetic_gaussian(n, dim, mean, 1.0, &mut RngStream::new(seed, 5)).unwrap()
    }

    fn small_cfg(seed: u64) -> DetectionConfig {
        DetectionConfig {
            t: 10,
            m: 30,
            seed,
            ..DetectionConfig::default()
        }
    }

    #[test]
    fn shifted_suspect_is_flagged() {
        let real = gauss(200, 2, 0.0, 1);
        let suspect = gauss(200, 2, 1.0, 2);
        let cfg = DetectionConfig {
            t: 30,
            ..small_cfg(1)
        };
        let rep = detect(&real, &suspect, &cfg).unwrap();
        assert_eq!(rep.verdict, Verdict::Adversarial);
        assert!(rep.r1_mean() > rep.r2_mean());
        assert!(rep.r1.lower <= rep.r1.mean && rep.r1.mean <= rep.r1.upper);
        assert_eq!(rep.r1_values.len(), 30);
        assert_eq!(rep.replicate_streams, (0..30).collect::<Vec<_>>());
        assert_eq!(rep.config.m_suspect, Some(30));
    }

    #[test]
    fn identical_sets_are_not_flagged() {
        let real = gauss(200, 2, 0.0, 3);
        let rep = detect(&real, &real, &small_cfg(2)).unwrap();
        // suspect == real makes y == z, so both statistics coincide
        assert_eq!(rep.r1_values, rep.r2_values);
        assert_eq!(rep.p_value, 1.0);
        assert_eq!(rep.verdict, Verdict::NotAdversarial);
    }

    #[test]
    fn baseline_ignores_suspect_contents() {
        let real = gauss(100, 2, 0.0, 4);
        let a = detect(&real, &gauss(100, 2, 1.0, 5), &small_cfg(3)).unwrap();
        let b = detect(&real, &gauss(100, 2, -3.0, 6), &small_cfg(3)).unwrap();
        assert_eq!(a.r2_values, b.r2_values);
        assert_ne!(a.r1_values, b.r1_values);
    }

    #[test]
    fn reports_are_reproducible_across_thread_counts() {
        let real = gauss(100, 3, 0.0, 7);
        let suspect = gauss(100, 3, 0.5, 8);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| detect(&real, &suspect, &small_cfg(4)).unwrap())
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn size_errors() {
        let real = gauss(50, 2, 0.0, 9);
        let suspect = gauss(20, 2, 0.0, 10);
        let cfg = DetectionConfig { m: 60, ..small_cfg(0) };
        assert!(matches!(detect(&real, &suspect, &cfg), Err(DetectError::SampleTooLarge { n: 50, m: 60 })));
        let cfg = DetectionConfig { m: 30, ..small_cfg(0) };
        assert!(matches!(detect(&real, &suspect, &cfg), Err(DetectError::SampleTooLarge { n: 20, m: 30 })));
        assert!(matches!(
            sample_size_sweep(&real, &real, &small_cfg(0), &[10, 51]),
            Err(DetectError::SampleTooLarge { .. })
        ));
        assert!(matches!(
            asymmetric_sweep(&real, &real, &small_cfg(0), &[0]),
            Err(DetectError::InvalidConfig(_))
        ));
        let cfg = DetectionConfig { t: 1, ..small_cfg(0) };
        assert!(matches!(detect(&real, &real, &cfg), Err(DetectError::InvalidConfig(_))));
    }

    #[test]
    fn full_size_sample_is_a_permutation() {
        let real = gauss(30, 2, 0.0, 11);
        let reps = sample_size_sweep(&real, &gauss(30, 2, 1.0, 12), &small_cfg(5), &[30]).unwrap();
        assert_eq!(reps[0].config.m, 30);
        assert_eq!(reps[0].config.m_suspect, Some(30));
        assert!(reps[0].r1_values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn single_suspect_row_flags_baseline() {
        let real = gauss(100, 2, 0.0, 13);
        let reps = asymmetric_sweep(&real, &gauss(100, 2, 3.0, 14), &small_cfg(6), &[1, 9]).unwrap();
        assert!(reps[0].inflated_baseline && !reps[0].notes.is_empty());
        assert!(!reps[1].inflated_baseline && reps[1].notes.is_empty());
        assert_eq!(reps[0].config.m, 30);
    }

    fn planes(n: usize, channels: usize, fill: impl Fn(usize, usize, usize) -> f32) -> ImageSet {
        let mut px = Vec::new();
        for i in 0..n {
            for c in 0..channels {
                for p in 0..4 {
                    px.push(fill(i, c, p));
                }
            }
        }
        ImageSet::new(channels, 2, 2, px, vec![0; n]).unwrap()
    }

    fn noise(i: usize, c: usize, p: usize, seed: u64) -> f32 {
        let mut rng = RngStream::new(seed, (i * 31 + c * 7 + p) as u64);
        rand::Rng::random::<f32>(&mut rng)
    }

    #[test]
    fn one_channel_combined_equals_detect() {
        let real = planes(60, 1, |i, c, p| noise(i, c, p, 1));
        let suspect = planes(60, 1, |i, c, p| noise(i, c, p, 2) * 0.5 + 0.5);
        let cfg = small_cfg(7);
        let multi = detect_multichannel(&real, &suspect, &cfg).unwrap();
        let single = detect(&real.to_matrix(), &suspect.to_matrix(), &cfg).unwrap();
        assert_eq!(multi.combined, single);
        assert_eq!(multi.channels[0], single);
    }

    #[test]
    fn combined_values_are_channel_means() {
        let real = planes(60, 3, |i, c, p| noise(i, c, p, 3));
        let suspect = planes(60, 3, |i, c, p| noise(i, c, p, 4) * (1.0 - 0.3 * c as f32));
        let multi = detect_multichannel(&real, &suspect, &small_cfg(8)).unwrap();
        for i in 0..10 {
            let ch = &multi.channels;
            let r1 = (ch[0].r1_values[i] + ch[1].r1_values[i] + ch[2].r1_values[i]) / 3.0;
            let r2 = (ch[0].r2_values[i] + ch[1].r2_values[i] + ch[2].r2_values[i]) / 3.0;
            assert_eq!(multi.combined.r1_values[i].to_bits(), r1.to_bits());
            assert_eq!(multi.combined.r2_values[i].to_bits(), r2.to_bits());
        }
        let gray = planes(60, 1, |i, c, p| noise(i, c, p, 5));
        assert!(matches!(
            detect_multichannel(&real, &gray, &small_cfg(8)),
            Err(DetectError::ChannelMismatch(_))
        ));
    }
}
