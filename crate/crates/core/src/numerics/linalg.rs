use super::matrix::{axpy, dot, sq_dist, Matrix};
use super::NumericsError;

/// Pivots at or below this value are treated as a loss of positive
/// definiteness.
const MIN_PIVOT: f64 = 1e-12;
const SYMMETRY_RTOL: f64 = 1e-9;

/// Cholesky factor `U` with `A = Uᵀ U`, upper triangle stored row-major.
/// Entries below the diagonal are scratch and never read.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    upper: Vec<f64>,
}

impl Cholesky {
    /// Factors a symmetric positive definite matrix.
    pub fn factor(a: &Matrix) -> Result<Self, NumericsError> {
        Self::factor_with_ridge(a, 0.0)
    }

    /// Factors `a + ridge·I` without materializing the shifted matrix.
    pub fn factor_with_ridge(a: &Matrix, ridge: f64) -> Result<Self, NumericsError> {
        let n = a.rows();
        if a.cols() != n {
            return Err(NumericsError::DimensionMismatch(format!(
                "cholesky needs a square matrix, got {}x{}",
                a.rows(),
                a.cols()
            )));
        }
        check_symmetric(a)?;

        // right-looking: after step j, rows > j hold the trailing Schur
        // complement in their upper part
        let mut w = a.as_slice().to_vec();
        for j in 0..n {
            let (head, tail) = w.split_at_mut((j + 1) * n);
            let row_j = &mut head[j * n..];
            let diag = row_j[j] + ridge;
            if !(diag > MIN_PIVOT) {
                return Err(NumericsError::NotPositiveDefinite { row: j, pivot: diag });
            }
            let ujj = diag.sqrt();
            row_j[j] = ujj;
            let inv = 1.0 / ujj;
            row_j[j + 1..].iter_mut().for_each(|v| *v *= inv);
            for (off, row_k) in tail.chunks_exact_mut(n).enumerate() {
                let k = j + 1 + off;
                axpy(-row_j[k], &row_j[k..], &mut row_k[k..]);
            }
        }
        Ok(Self { n, upper: w })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `Uᵀ U x = b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, NumericsError> {
        let n = self.n;
        if b.len() != n {
            return Err(NumericsError::DimensionMismatch(format!(
                "right-hand side of length {} for a {n}x{n} system",
                b.len()
            )));
        }
        let u = &self.upper;
        // forward: Uᵀ y = b, eliminating one column of Uᵀ at a time
        let mut y = b.to_vec();
        for i in 0..n {
            let row = &u[i * n..(i + 1) * n];
            y[i] /= row[i];
            let yi = y[i];
            axpy(-yi, &row[i + 1..], &mut y[i + 1..]);
        }
        // backward: U x = y
        let mut x = y;
        for i in (0..n).rev() {
            let row = &u[i * n..(i + 1) * n];
            x[i] = (x[i] - dot(&row[i + 1..], &x[i + 1..])) / row[i];
        }
        Ok(x)
    }
}

fn check_symmetric(a: &Matrix) -> Result<(), NumericsError> {
    let n = a.rows();
    let tol = SYMMETRY_RTOL * a.max_abs();
    for i in 0..n {
        for j in (i + 1)..n {
            if (a.get(i, j) - a.get(j, i)).abs() > tol {
                return Err(NumericsError::NotSymmetric { row: i, col: j });
            }
        }
    }
    Ok(())
}

/// Solves `a x = b` for symmetric positive definite `a`.
pub fn cholesky_solve(a: &Matrix, b: &[f64]) -> Result<Vec<f64>, NumericsError> {
    if b.len() != a.rows() {
        return Err(NumericsError::DimensionMismatch(format!(
            "right-hand side of length {} for {} rows",
            b.len(),
            a.rows()
        )));
    }
    Cholesky::factor(a)?.solve(b)
}

/// Squared Euclidean distances between every row of `x` and every row of `c`.
///
/// Computed from explicit differences, so identical rows give exactly 0.
pub fn pairwise_sq_dist(x: &Matrix, c: &Matrix) -> Result<Matrix, NumericsError> {
    if x.cols() != c.cols() {
        return Err(NumericsError::DimensionMismatch(format!(
            "samples have {} columns, centers have {}",
            x.cols(),
            c.cols()
        )));
    }
    let mut out = Vec::with_capacity(x.rows() * c.rows());
    for xi in x.row_iter() {
        for cl in c.row_iter() {
            out.push(sq_dist(xi, cl));
        }
    }
    Ok(Matrix::from_raw(x.rows(), c.rows(), out))
}
