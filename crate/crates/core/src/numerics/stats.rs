use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::NumericsError;

/// A mean with a two-sided Student-t confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

impl ConfidenceInterval {
    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unbiased sample variance (divisor `n - 1`).
pub fn sample_variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() as f64 - 1.0)
}

/// Mean of `values` with a `level` confidence interval using the t
/// distribution on `n - 1` degrees of freedom.
pub fn mean_ci(values: &[f64], level: f64) -> Result<ConfidenceInterval, NumericsError> {
    if values.len() < 2 {
        return Err(NumericsError::InsufficientData {
            needed: 2,
            got: values.len(),
        });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(NumericsError::InvalidParameter(format!(
            "confidence level {level} outside (0, 1)"
        )));
    }
    let n = values.len() as f64;
    let m = mean(values);
    let sd = sample_variance(values).sqrt();
    if sd == 0.0 {
        return Ok(ConfidenceInterval {
            mean: m,
            lower: m,
            upper: m,
        });
    }
    let t = students_t(n - 1.0).inverse_cdf((1.0 + level) / 2.0);
    let half = t * sd / n.sqrt();
    Ok(ConfidenceInterval {
        mean: m,
        lower: m - half,
        upper: m + half,
    })
}

/// Two-sided p-value of Welch's unequal-variance t-test.
///
/// When both samples have zero variance the test is degenerate: equal means
/// give `p = 1`, different means give `p = 0`.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<f64, NumericsError> {
    for s in [a, b] {
        if s.len() < 2 {
            return Err(NumericsError::InsufficientData {
                needed: 2,
                got: s.len(),
            });
        }
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (sample_variance(a) / na, sample_variance(b) / nb);
    let se2 = va + vb;
    if se2 == 0.0 {
        return Ok(if ma == mb { 1.0 } else { 0.0 });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    let p = 2.0 * students_t(df).sf(t.abs());
    Ok(p.clamp(0.0, 1.0))
}

fn students_t(df: f64) -> StudentsT {
    StudentsT::new(0.0, 1.0, df).expect("degrees of freedom are positive")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;
    use rand::Rng;

    /// Student-t density.
    fn t_pdf(x: f64, df: f64) -> f64 {
        fn ln_gamma(z: f64) -> f64 {
            // Lanczos, g = 7
            const C: [f64; 9] = [
                0.999_999_999_999_809_9,
                676.520_368_121_885_1,
                -1_259.139_216_722_402_8,
                771.323_428_777_653_1,
                -176.615_029_162_140_6,
                12.507_343_278_686_905,
                -0.138_571_095_265_720_12,
                9.984_369_578_019_572e-6,
                1.505_632_735_149_311_6e-7,
            ];
            let z = z - 1.0;
            let mut a = C[0];
            let t = z + 7.5;
            for (i, c) in C.iter().enumerate().skip(1) {
                a += c / (z + i as f64);
            }
            0.5 * (2.0 * std::f64::consts::PI).ln() + (z + 0.5) * t.ln() - t + a.ln()
        }
        let ln_norm = ln_gamma((df + 1.0) / 2.0)
            - ln_gamma(df / 2.0)
            - 0.5 * (df * std::f64::consts::PI).ln();
        (ln_norm - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp()
    }

    /// P(0 < T < x) by composite Simpson's rule.
    fn t_half_mass(x: f64, df: f64) -> f64 {
        let n = 20_000;
        let h = x / n as f64;
        let mut s = t_pdf(0.0, df) + t_pdf(x, df);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * t_pdf(i as f64 * h, df);
        }
        s * h / 3.0
    }

    /// Quantile by bisection on the quadrature CDF.
    fn t_quantile_oracle(p: f64, df: f64) -> f64 {
        let (mut lo, mut hi) = (0.0, 50.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if 0.5 + t_half_mass(mid, df) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn zero_variance_interval_collapses() {
        let ci = mean_ci(&[5.0, 5.0, 5.0, 5.0], 0.95).unwrap();
        assert_eq!((ci.mean, ci.lower, ci.upper), (5.0, 5.0, 5.0));
    }

    #[test]
    fn alternating_values_straddle_center() {
        let v: Vec<f64> = (0..100)
            .map(|i| if i % 2 == 0 { 1.1 } else { 0.9 })
            .collect();
        let ci = mean_ci(&v, 0.95).unwrap();
        assert!(ci.lower < 1.0 && ci.upper > 1.0);
    }

    #[test]
    fn one_to_five_matches_quadrature_quantile() {
        let q = t_quantile_oracle(0.975, 4.0);
        assert!((q - 2.776).abs() < 1e-3, "oracle quantile {q}");
        let sd = 2.5_f64.sqrt();
        let ci = mean_ci(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.95).unwrap();
        assert_eq!(ci.mean, 3.0);
        assert!((ci.lower - (3.0 - q * sd / 5f64.sqrt())).abs() < 1e-6);
        assert!((ci.upper - (3.0 + q * sd / 5f64.sqrt())).abs() < 1e-6);
    }

    #[test]
    fn too_few_values() {
        assert_eq!(
            mean_ci(&[1.0], 0.95),
            Err(NumericsError::InsufficientData { needed: 2, got: 1 })
        );
        assert!(welch_t_test(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn ci_width_shrinks_like_root_n() {
        let mut rng = RngStream::new(17, 0);
        let draw = |n: usize, rng: &mut RngStream| -> Vec<f64> {
            (0..n).map(|_| rng.random::<f64>()).collect()
        };
        let small = mean_ci(&draw(400, &mut rng), 0.95).unwrap().width();
        let large = mean_ci(&draw(1600, &mut rng), 0.95).unwrap().width();
        let ratio = small / large;
        assert!((ratio - 2.0).abs() < 0.3, "width ratio {ratio}");
    }

    #[test]
    fn welch_identical_and_permuted() {
        assert_eq!(welch_t_test(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(welch_t_test(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap(), 1.0);
    }

    #[test]
    fn welch_degenerate_samples() {
        assert_eq!(welch_t_test(&[2.0, 2.0], &[2.0, 2.0, 2.0]).unwrap(), 1.0);
        assert_eq!(welch_t_test(&[2.0, 2.0], &[3.0, 3.0]).unwrap(), 0.0);
    }

    #[test]
    fn welch_far_apart_normals() {
        let mut rng = RngStream::new(99, 0);
        let normal = |rng: &mut RngStream| {
            let u1: f64 = 1.0 - rng.random::<f64>();
            let u2: f64 = rng.random();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        };
        let a: Vec<f64> = (0..100).map(|_| normal(&mut rng)).collect();
        let b: Vec<f64> = (0..100).map(|_| 10.0 + normal(&mut rng)).collect();
        let p = welch_t_test(&a, &b).unwrap();
        assert!(p < 1e-6);
        assert_eq!(p, welch_t_test(&b, &a).unwrap());
    }

    #[test]
    fn welch_against_quadrature_tail() {
        // equal sizes and variances: df = 2n - 2 and t is the pooled statistic
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [2.0, 3.0, 4.0, 5.0, 6.0];
        let t = -1.0 / (2.0 * 2.5 / 5.0_f64).sqrt();
        let expect = 1.0 - 2.0 * t_half_mass(t.abs(), 8.0);
        let p = welch_t_test(&a, &b).unwrap();
        assert!((p - expect).abs() < 1e-7, "{p} vs {expect}");
    }
}
