//! Seedable draws from the distributions the models need: Gamma,
//! multivariate normal parameterized by precision, and Wishart via the
//! Bartlett decomposition.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{solve_lower_transposed, SpdMatrix};
use crate::rng::ChainRng;

/// One draw from Gamma(shape, rate), mean `shape/rate`.
pub fn sample_gamma(shape: f64, rate: f64, rng: &mut ChainRng) -> Result<f64> {
    if !(shape > 0.0) || !(rate > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "Gamma requires shape > 0 and rate > 0, got ({shape}, {rate})"
        )));
    }
    let dist = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok(dist.sample(rng))
}

/// A K-vector of iid standard normals.
pub fn sample_std_normal_vector(dim: usize, rng: &mut ChainRng) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.sample(StandardNormal))
}

/// One draw from N_K(mean, precision⁻¹).
///
/// With `precision = L·Lᵀ`, the draw is `mean + L⁻ᵀ z`: a triangular solve,
/// never an inversion.
pub fn sample_mvn_precision(
    mean: &DVector<f64>,
    precision: &SpdMatrix,
    rng: &mut ChainRng,
) -> Result<DVector<f64>> {
    if mean.len() != precision.dim() {
        return Err(Error::DimensionMismatch { expected: mean.len(), got: precision.dim() });
    }
    let l = precision.cholesky()?;
    Ok(sample_mvn_with_precision_factor(mean, &l, rng))
}

/// As [`sample_mvn_precision`] with the Cholesky factor of the precision
/// already computed. Hot path for the Gibbs sweeps, where one factorization
/// serves many draws.
pub fn sample_mvn_with_precision_factor(
    mean: &DVector<f64>,
    precision_factor: &DMatrix<f64>,
    rng: &mut ChainRng,
) -> DVector<f64> {
    let z = sample_std_normal_vector(mean.len(), rng);
    mean + solve_lower_transposed(precision_factor, &z)
}

/// One draw from Wishart(df, scale) by the Bartlett decomposition:
/// `W = (L·A)(L·A)ᵀ` with `scale = L·Lᵀ`, `A` lower triangular,
/// `A_ii² ~ χ²(df − i)` and `A_ij ~ N(0,1)` below the diagonal.
pub fn sample_wishart(df: f64, scale: &SpdMatrix, rng: &mut ChainRng) -> Result<SpdMatrix> {
    let factor = sample_wishart_factor(df, scale, rng)?;
    SpdMatrix::from_nearly_symmetric(&factor * factor.transpose())
}

/// The Bartlett factor `L·A` of a Wishart draw; `(L·A)(L·A)ᵀ` is the draw.
pub fn sample_wishart_factor(
    df: f64,
    scale: &SpdMatrix,
    rng: &mut ChainRng,
) -> Result<DMatrix<f64>> {
    let k = scale.dim();
    if df <= (k as f64) - 1.0 {
        return Err(Error::DegreesOfFreedomTooSmall { df, dim: k });
    }
    let l = scale.cholesky()?;
    let mut a = DMatrix::zeros(k, k);
    for i in 0..k {
        let chi = ChiSquared::new(df - i as f64)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        a[(i, i)] = chi.sample(rng).max(f64::MIN_POSITIVE).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    Ok(l * a)
}
