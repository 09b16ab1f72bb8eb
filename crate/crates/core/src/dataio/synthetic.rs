use rand::Rng;

use super::DataError;
use crate::numerics::{Matrix, RngStream};

/// Standard normal pairs by the Box–Muller transform.
pub(crate) fn box_muller(rng: &mut RngStream) -> (f64, f64) {
    // 1 - u keeps the log argument in (0, 1]
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = std::f64::consts::TAU * u2;
    (r * theta.cos(), r * theta.sin())
}

/// `n` i.i.d. draws from the isotropic normal `N(mean·1, sd²·I)` in `dim`
/// dimensions.
pub fn synthetic_gaussian(
    n: usize,
    dim: usize,
    mean: f64,
    sd: f64,
    rng: &mut RngStream,
) -> Result<Matrix, DataError> {
    if n == 0 || dim == 0 {
        return Err(DataError::InvalidParameter(format!(
            "need n >= 1 and dim >= 1, got n={n} dim={dim}"
        )));
    }
    if !(sd > 0.0 && sd.is_finite()) || !mean.is_finite() {
        return Err(DataError::InvalidParameter(format!(
            "need finite mean and sd > 0, got mean={mean} sd={sd}"
        )));
    }
    let total = n * dim;
    let mut data = Vec::with_capacity(total + 1);
    while data.len() < total {
        let (a, b) = box_muller(rng);
        data.push(mean + sd * a);
        data.push(mean + sd * b);
    }
    data.truncate(total);
    Ok(Matrix::from_raw(n, dim, data))
}
