//! Direct density-ratio estimation by unconstrained least-squares importance
//! fitting (uLSIF) with k-fold cross-validated bandwidth and ridge.
//!
//! The ratio `r(x) = p_nu(x) / p_de(x)` is modelled as a non-negative
//! combination of Gaussian kernels centred on numerator samples.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{
    dot, pairwise_sq_dist, sample_index_without_replacement, sq_dist, Cholesky, Matrix,
    NumericsError, RngStream,
};

#[derive(Debug, Error)]
pub enum DreError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("all pairwise distances are zero; bandwidth is undefined")]
    DegenerateData,
    #[error("need at least {needed} numerator rows, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("no grid point produced a usable fit: {0}")]
    FitFailed(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("bad ratio model header: {0}")]
    BadHeader(String),
    #[error("unsupported ratio model version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Hyperparameter grid searched by cross-validation. Bandwidths are
/// multiples of the median-heuristic bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvGrid {
    pub sigma_factors: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub folds: usize,
}

impl Default for CvGrid {
    fn default() -> Self {
        Self {
            sigma_factors: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            lambdas: vec![1e-3, 1e-2, 1e-1, 1.0],
            folds: 5,
        }
    }
}

impl CvGrid {
    pub fn validate(&self) -> Result<(), DreError> {
        if self.sigma_factors.is_empty() || self.lambdas.is_empty() {
            return Err(DreError::InvalidGrid("empty sigma or lambda list".into()));
        }
        if self.sigma_factors.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(DreError::InvalidGrid(format!(
                "sigma factors must be positive: {:?}",
                self.sigma_factors
            )));
        }
        if self.lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(DreError::InvalidGrid(format!(
                "lambdas must be non-negative: {:?}",
                self.lambdas
            )));
        }
        if self.folds < 2 {
            return Err(DreError::InvalidGrid(format!("{} folds (need >= 2)", self.folds)));
        }
        Ok(())
    }
}

pub const DEFAULT_MAX_CENTERS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelBasis {
    centers: Matrix,
    sigma: f64,
}

impl KernelBasis {
    pub fn new(centers: Matrix, sigma: f64) -> Result<Self, DreError> {
        if centers.rows() == 0 {
            return Err(DreError::InvalidGrid("kernel basis needs a center".into()));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(DreError::InvalidGrid(format!("bandwidth {sigma} must be positive")));
        }
        Ok(Self { centers, sigma })
    }

    pub fn centers(&self) -> &Matrix {
        &self.centers
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn len(&self) -> usize {
        self.centers.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.rows() == 0
    }

    /// `n × b` design matrix of kernel values.
    pub fn design(&self, x: &Matrix) -> Result<Matrix, DreError> {
        if x.cols() != self.centers.cols() {
            return Err(DreError::DimensionMismatch(format!(
                "{} columns against {}-dimensional centers",
                x.cols(),
                self.centers.cols()
            )));
        }
        let mut k = pairwise_sq_dist(x, &self.centers)?;
        let scale = -1.0 / (2.0 * self.sigma * self.sigma);
        k.as_mut_slice().iter_mut().for_each(|v| *v = (*v * scale).exp());
        Ok(k)
    }
}

/// Outcome of one grid point of the cross-validation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CvScore {
    /// Mean held-out objective over folds.
    Score(f64),
    /// The regularized system was not positive definite in some fold.
    LambdaTooSmall,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvEntry {
    pub sigma: f64,
    pub lambda: f64,
    pub score: CvScore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioModel {
    basis: KernelBasis,
    alpha: Vec<f64>,
    lambda: f64,
    cv_table: Vec<CvEntry>,
}

impl RatioModel {
    pub fn new(basis: KernelBasis, alpha: Vec<f64>, lambda: f64) -> Result<Self, DreError> {
        if alpha.len() != basis.len() {
            return Err(DreError::DimensionMismatch(format!(
                "{} coefficients for {} centers",
                alpha.len(),
                basis.len()
            )));
        }
        if alpha.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(DreError::InvalidGrid("coefficients must be finite and >= 0".into()));
        }
        Ok(Self {
            basis,
            alpha,
            lambda,
            cv_table: Vec::new(),
        })
    }

    pub fn basis(&self) -> &KernelBasis {
        &self.basis
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn sigma(&self) -> f64 {
        self.basis.sigma
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn cv_table(&self) -> &[CvEntry] {
        &self.cv_table
    }

    /// `r̂(x_i) = Σ_l α_l K(x_i, c_l)` for every row.
    pub fn evaluate(&self, x: &Matrix) -> Result<Vec<f64>, DreError> {
        Ok(self.basis.design(x)?.mul_vec(&self.alpha)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), DreError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(RATIO_MAGIC)?;
        w.write_all(&RATIO_VERSION.to_le_bytes())?;
        w.write_all(&self.basis.sigma.to_le_bytes())?;
        w.write_all(&self.lambda.to_le_bytes())?;
        w.write_all(&(self.basis.centers.rows() as u32).to_le_bytes())?;
        w.write_all(&(self.basis.centers.cols() as u32).to_le_bytes())?;
        for v in self.basis.centers.as_slice().iter().chain(&self.alpha) {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DreError> {
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        let truncated = || DreError::BadHeader("file is truncated".into());
        let mut at = 0usize;
        let mut take = |n: usize| -> Result<&[u8], DreError> {
            let s = bytes.get(at..at + n).ok_or_else(truncated)?;
            at += n;
            Ok(s)
        };
        if take(4)? != RATIO_MAGIC {
            return Err(DreError::BadHeader("missing DRUL magic".into()));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != RATIO_VERSION {
            return Err(DreError::VersionMismatch {
                expected: RATIO_VERSION,
                found: version,
            });
        }
        let sigma = f64::from_le_bytes(take(8)?.try_into().unwrap());
        let lambda = f64::from_le_bytes(take(8)?.try_into().unwrap());
        let b = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let d = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let mut floats = |n: usize| -> Result<Vec<f64>, DreError> {
            let raw = take(n.checked_mul(8).ok_or_else(truncated)?)?;
            Ok(raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };
        let centers = floats(b * d)?;
        let alpha = floats(b)?;
        if at != bytes.len() {
            return Err(DreError::BadHeader("trailing bytes".into()));
        }
        let centers =
            Matrix::from_vec(b, d, centers).map_err(|e| DreError::BadHeader(e.to_string()))?;
        Self::new(KernelBasis::new(centers, sigma)?, alpha, lambda)
    }
}

const RATIO_MAGIC: &[u8; 4] = b"DRUL";
pub const RATIO_VERSION: u32 = 1;

/// Bandwidth anchor: the square root of the median squared distance over all
/// pairs of rows.
///
/// When more than half the pairs coincide the median is zero; the median of
/// the non-zero squared distances is used instead.
pub fn median_heuristic(x: &Matrix) -> Result<f64, DreError> {
    if x.rows() < 2 {
        return Err(DreError::InsufficientData {
            needed: 2,
            got: x.rows(),
        });
    }
    let d = self_sq_dist(x);
    median_from_self_dist(&d, x.rows())
}

fn median_from_self_dist(d: &[f64], n: usize) -> Result<f64, DreError> {
    let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        pairs.extend_from_slice(&d[i * n + i + 1..(i + 1) * n]);
    }
    let mut m = median(&mut pairs);
    if m == 0.0 {
        pairs.retain(|&v| v > 0.0);
        if pairs.is_empty() {
            return Err(DreError::DegenerateData);
        }
        m = median(&mut pairs);
    }
    Ok(m.sqrt())
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_unstable_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Full symmetric `n × n` squared-distance table of the rows of `x`, row-major.
fn self_sq_dist(x: &Matrix) -> Vec<f64> {
    let n = x.rows();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        let xi = x.row(i);
        for j in i + 1..n {
            let v = sq_dist(xi, x.row(j));
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// A fitted model together with the ratio statistic on its numerator sample.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: RatioModel,
    /// Mean of `r̂` over the numerator rows.
    pub statistic: f64,
    /// Number of cross-validation folds actually used.
    pub folds_used: usize,
    /// True when the denominator had too few rows to split into folds and
    /// every fold was scored against the full denominator sample.
    pub denominator_unsplit: bool,
}

/// Fits uLSIF with cross-validated `(σ, λ)`.
///
/// Bandwidths are multiples of the median heuristic on `x_nu`. Centers are
/// `min(max_centers, n_nu)` numerator rows drawn without replacement. Folds
/// are capped at `n_nu`; when the denominator has fewer rows than folds it is
/// not split.
pub fn fit_ulsif(
    x_nu: &Matrix,
    x_de: &Matrix,
    grid: &CvGrid,
    max_centers: usize,
    rng: &mut RngStream,
) -> Result<RatioModel, DreError> {
    Ok(fit_ulsif_detailed(x_nu, x_de, grid, max_centers, rng)?.model)
}

/// Mean of the fitted ratio over the numerator sample, `(1/n_nu) Σ r̂(x_i^nu)`.
pub fn ratio_statistic(
    x_nu: &Matrix,
    x_de: &Matrix,
    grid: &CvGrid,
    max_centers: usize,
    rng: &mut RngStream,
) -> Result<f64, DreError> {
    Ok(fit_ulsif_detailed(x_nu, x_de, grid, max_centers, rng)?.statistic)
}

pub fn evaluate(model: &RatioModel, x: &Matrix) -> Result<Vec<f64>, DreError> {
    model.evaluate(x)
}

/// Per-bandwidth sufficient statistics split by fold.
struct FoldSums {
    /// `Σ_{j∈fold} k_j k_jᵀ` over denominator rows, one `b × b` block per fold.
    h: Vec<Vec<f64>>,
    /// `Σ_{i∈fold} k_i` over numerator rows.
    g: Vec<Vec<f64>>,
    de_counts: Vec<usize>,
    nu_counts: Vec<usize>,
}

pub fn fit_ulsif_detailed(
    x_nu: &Matrix,
    x_de: &Matrix,
    grid: &CvGrid,
    max_centers: usize,
    rng: &mut RngStream,
) -> Result<FitOutcome, DreError> {
    grid.validate()?;
    let (n_nu, n_de) = (x_nu.rows(), x_de.rows());
    if x_nu.cols() != x_de.cols() {
        return Err(DreError::DimensionMismatch(format!(
            "numerator has {} columns, denominator {}",
            x_nu.cols(),
            x_de.cols()
        )));
    }
    if n_nu < 2 {
        return Err(DreError::InsufficientData { needed: 2, got: n_nu });
    }
    if n_de == 0 {
        return Err(DreError::InsufficientData { needed: 1, got: 0 });
    }
    if max_centers == 0 {
        return Err(DreError::InvalidGrid("max_centers must be >= 1".into()));
    }

    // bandwidth anchored on the numerator alone, so fits that share a
    // numerator sample share their kernel whatever the denominator holds
    let nu_dist = self_sq_dist(x_nu);
    let sigma0 = median_from_self_dist(&nu_dist, n_nu)?;

    let b = max_centers.min(n_nu);
    let centers_idx = sample_index_without_replacement(n_nu, b, rng)?;
    let folds = grid.folds.min(n_nu);
    let split_de = n_de >= folds;
    let nu_fold = fold_assignment(n_nu, folds, rng);
    let de_fold = if split_de {
        fold_assignment(n_de, folds, rng)
    } else {
        vec![0; n_de]
    };

    // kernel argument table: numerator rows then denominator rows × centers
    let centers = x_nu.select_rows(&centers_idx);
    let mut center_dist: Vec<f64> = (0..n_nu)
        .flat_map(|i| centers_idx.iter().map(move |&c| (i, c)))
        .map(|(i, c)| nu_dist[i * n_nu + c])
        .collect();
    center_dist.extend(pairwise_sq_dist(x_de, &centers)?.into_vec());

    let mut table = Vec::with_capacity(grid.sigma_factors.len() * grid.lambdas.len());
    for &factor in &grid.sigma_factors {
        let sigma = factor * sigma0;
        let sums = fold_sums(&center_dist, n_nu, n_de, b, sigma, &nu_fold, &de_fold, folds, split_de);
        let scores = cv_scores(&sums, n_nu, n_de, b, &grid.lambdas, split_de);
        for (&lambda, score) in grid.lambdas.iter().zip(scores) {
            table.push(CvEntry {
                sigma,
                lambda,
                score: score.map_or(CvScore::LambdaTooSmall, CvScore::Score),
            });
        }
    }

    // rank grid points by score; ties keep grid order
    let mut ranked: Vec<usize> = (0..table.len())
        .filter(|&i| matches!(table[i].score, CvScore::Score(_)))
        .collect();
    ranked.sort_by(|&i, &j| match (table[i].score, table[j].score) {
        (CvScore::Score(a), CvScore::Score(b)) => a.total_cmp(&b),
        _ => unreachable!(),
    });

    for &best in &ranked {
        let CvEntry { sigma, lambda, .. } = table[best];
        let sums = fold_sums(&center_dist, n_nu, n_de, b, sigma, &vec![0; n_nu], &vec![0; n_de], 1, true);
        let h = Matrix::from_raw(b, b, scale(&sums.h[0], 1.0 / n_de as f64));
        let g = scale(&sums.g[0], 1.0 / n_nu as f64);
        let Ok(alpha) = solve_clipped(&h, &g, lambda) else {
            continue;
        };
        let statistic = dot(&g, &alpha);
        let model = RatioModel {
            basis: KernelBasis::new(centers, sigma)?,
            alpha,
            lambda,
            cv_table: table,
        };
        return Ok(FitOutcome {
            model,
            statistic,
            folds_used: folds,
            denominator_unsplit: !split_de,
        });
    }
    Err(DreError::FitFailed(format!(
        "all {} grid points had a singular regularized system",
        table.len()
    )))
}

/// Fold label for each of `n` rows: a seeded shuffle dealt round-robin.
fn fold_assignment(n: usize, folds: usize, rng: &mut RngStream) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % folds;
    }
    fold
}

#[allow(clippy::too_many_arguments)]
fn fold_sums(
    center_dist: &[f64],
    n_nu: usize,
    n_de: usize,
    b: usize,
    sigma: f64,
    nu_fold: &[usize],
    de_fold: &[usize],
    folds: usize,
    split_de: bool,
) -> FoldSums {
    let de_folds = if split_de { folds } else { 1 };
    let scale = -1.0 / (2.0 * sigma * sigma);
    let mut sums = FoldSums {
        h: vec![vec![0.0; b * b]; de_folds],
        g: vec![vec![0.0; b]; folds],
        de_counts: vec![0; de_folds],
        nu_counts: vec![0; folds],
    };
    let mut k = vec![0.0; b];
    for i in 0..n_nu {
        let f = nu_fold[i];
        for (acc, d) in sums.g[f].iter_mut().zip(&center_dist[i * b..(i + 1) * b]) {
            *acc += (d * scale).exp();
        }
        sums.nu_counts[f] += 1;
    }
    for j in 0..n_de {
        let row = n_nu + j;
        for (kl, d) in k.iter_mut().zip(&center_dist[row * b..(row + 1) * b]) {
            *kl = (d * scale).exp();
        }
        let f = de_fold[j];
        let h = &mut sums.h[f];
        // upper triangle only; mirrored when the system is assembled
        for l in 0..b {
            let kl = k[l];
            for (acc, km) in h[l * b + l..(l + 1) * b].iter_mut().zip(&k[l..]) {
                *acc += kl * km;
            }
        }
        sums.de_counts[f] += 1;
    }
    for h in &mut sums.h {
        for l in 0..b {
            for m in l + 1..b {
                h[m * b + l] = h[l * b + m];
            }
        }
    }
    sums
}

fn sum_blocks(blocks: &[Vec<f64>]) -> Vec<f64> {
    let mut total = vec![0.0; blocks[0].len()];
    for blk in blocks {
        for (t, v) in total.iter_mut().zip(blk) {
            *t += v;
        }
    }
    total
}

fn scale(v: &[f64], s: f64) -> Vec<f64> {
    v.iter().map(|x| x * s).collect()
}

/// Mean held-out `½ αᵀ Ĥ_ho α − ĥ_hoᵀ α` over folds for each `λ`, or `None`
/// where some fold's training system is singular.
fn cv_scores(
    sums: &FoldSums,
    n_nu: usize,
    n_de: usize,
    b: usize,
    lambdas: &[f64],
    split_de: bool,
) -> Vec<Option<f64>> {
    let h_total = sum_blocks(&sums.h);
    let g_total = sum_blocks(&sums.g);
    let folds = sums.g.len();
    let mut totals: Vec<Option<f64>> = vec![Some(0.0); lambdas.len()];
    for f in 0..folds {
        let (h_train, h_ho) = if split_de {
            let n_tr = (n_de - sums.de_counts[f]) as f64;
            let n_ho = sums.de_counts[f] as f64;
            let train: Vec<f64> = h_total
                .iter()
                .zip(&sums.h[f])
                .map(|(t, k)| (t - k) / n_tr)
                .collect();
            (train, scale(&sums.h[f], 1.0 / n_ho))
        } else {
            let full = scale(&h_total, 1.0 / n_de as f64);
            (full.clone(), full)
        };
        let h_train = Matrix::from_raw(b, b, h_train);
        let h_ho = Matrix::from_raw(b, b, h_ho);
        let n_tr = (n_nu - sums.nu_counts[f]) as f64;
        let g_train: Vec<f64> = g_total
            .iter()
            .zip(&sums.g[f])
            .map(|(t, k)| (t - k) / n_tr)
            .collect();
        let g_ho = scale(&sums.g[f], 1.0 / sums.nu_counts[f] as f64);

        for (total, &lambda) in totals.iter_mut().zip(lambdas) {
            let Some(acc) = total else { continue };
            let Ok(alpha) = solve_clipped(&h_train, &g_train, lambda) else {
                *total = None;
                continue;
            };
            let ha = h_ho.mul_vec(&alpha).expect("square system");
            *acc += 0.5 * dot(&alpha, &ha) - dot(&g_ho, &alpha);
        }
    }
    totals
        .into_iter()
        .map(|t| t.map(|v| v / folds as f64))
        .collect()
}

/// `max(solve(H + λI, h), 0)`.
fn solve_clipped(h: &Matrix, g: &[f64], lambda: f64) -> Result<Vec<f64>, NumericsError> {
    let mut alpha = solve_ridge(h, g, lambda)?;
    alpha.iter_mut().for_each(|a| *a = a.max(0.0));
    Ok(alpha)
}

fn solve_ridge(h: &Matrix, g: &[f64], lambda: f64) -> Result<Vec<f64>, NumericsError> {
    Cholesky::factor_with_ridge(h, lambda)?.solve(g)
}

/// Fits at a fixed `(σ, λ)` with the given centers, bypassing cross-validation.
pub fn fit_fixed(
    x_nu: &Matrix,
    x_de: &Matrix,
    basis: KernelBasis,
    lambda: f64,
) -> Result<RatioModel, DreError> {
    if x_nu.rows() == 0 || x_de.rows() == 0 {
        return Err(DreError::InsufficientData { needed: 1, got: 0 });
    }
    let k_nu = basis.design(x_nu)?;
    let k_de = basis.design(x_de)?;
    let h = gram_mean(&k_de);
    let g = column_mean(&k_nu);
    let alpha = solve_clipped(&h, &g, lambda)?;
    RatioModel::new(basis, alpha, lambda)
}

fn gram_mean(k: &Matrix) -> Matrix {
    let b = k.cols();
    let s = 1.0 / k.rows() as f64;
    Matrix::from_fn(b, b, |l, m| {
        k.row_iter().map(|r| r[l] * r[m]).sum::<f64>() * s
    })
}

fn column_mean(k: &Matrix) -> Vec<f64> {
    let s = 1.0 / k.rows() as f64;
    (0..k.cols())
        .map(|l| k.row_iter().map(|r| r[l]).sum::<f64>() * s)
        .collect()
}
