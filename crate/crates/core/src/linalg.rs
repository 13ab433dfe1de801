//! Dense symmetric positive definite matrices and the Cholesky machinery the
//! samplers are built on. Everything that needs `A⁻¹x` goes through
//! triangular solves; no explicit inversion except where a full inverse
//! matrix is itself the required output (Wishart scale updates).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative asymmetry tolerated before a matrix is rejected as non-symmetric.
const SYMMETRY_RTOL: f64 = 1e-10;

/// A symmetric positive definite matrix, validated on construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpdMatrix {
    entries: DMatrix<f64>,
}

impl SpdMatrix {
    /// Validate symmetry and positive definiteness (via Cholesky).
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::DimensionMismatch {
                expected: entries.nrows(),
                got: entries.ncols(),
            });
        }
        let scale = entries.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        for i in 0..entries.nrows() {
            for j in 0..i {
                if (entries[(i, j)] - entries[(j, i)]).abs() > SYMMETRY_RTOL * scale {
                    return Err(Error::InvalidParameter(format!(
                        "matrix is not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        cholesky_lower(&entries)?;
        Ok(SpdMatrix { entries })
    }

    /// Symmetrize `(m + mᵀ)/2` first, then validate. Used for products that
    /// are symmetric in exact arithmetic but not in floating point.
    pub fn from_nearly_symmetric(mut m: DMatrix<f64>) -> Result<Self> {
        for i in 0..m.nrows() {
            for j in 0..i {
                let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = avg;
                m[(j, i)] = avg;
            }
        }
        Self::new(m)
    }

    pub fn identity(dim: usize) -> Self {
        SpdMatrix { entries: DMatrix::identity(dim, dim) }
    }

    /// `c · I`, c > 0.
    pub fn scaled_identity(dim: usize, c: f64) -> Result<Self> {
        if c <= 0.0 {
            return Err(Error::InvalidParameter(format!("scaled identity needs c > 0, got {c}")));
        }
        Ok(SpdMatrix { entries: DMatrix::identity(dim, dim) * c })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<f64> {
        self.entries
    }

    /// Lower Cholesky factor `L` with `L·Lᵀ = self`.
    pub fn cholesky(&self) -> Result<DMatrix<f64>> {
        cholesky_lower(&self.entries)
    }

    /// Inverse computed column-by-column from the Cholesky factor.
    pub fn inverse(&self) -> Result<SpdMatrix> {
        let l = self.cholesky()?;
        let n = self.dim();
        let mut inv = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            let col = solve_spd_with_factor(&l, &e);
            inv.set_column(j, &col);
        }
        SpdMatrix::from_nearly_symmetric(inv)
    }
}

/// Lower-triangular Cholesky factorization. Fails with the 1-based index of
/// the first non-positive-definite leading minor.
pub fn cholesky_lower(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut l = DMatrix::zeros(m.nrows(), m.ncols());
    cholesky_lower_into(m, &mut l)?;
    Ok(l)
}

/// As [`cholesky_lower`], writing into a preallocated matrix.
pub fn cholesky_lower_into(m: &DMatrix<f64>, l: &mut DMatrix<f64>) -> Result<()> {
    let n = m.nrows();
    l.fill(0.0);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { minor: j + 1, context: None });
        }
        let dj = d.sqrt();
        l[(j, j)] = dj;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / dj;
        }
    }
    Ok(())
}

/// Solve `L·y = b` in place (forward substitution), `L` lower triangular.
pub fn solve_lower_in_place(l: &DMatrix<f64>, v: &mut DVector<f64>) {
    let n = l.nrows();
    for i in 0..n {
        let mut s = v[i];
        for k in 0..i {
            s -= l[(i, k)] * v[k];
        }
        v[i] = s / l[(i, i)];
    }
}

/// Solve `Lᵀ·x = b` in place (backward substitution), `L` lower triangular.
pub fn solve_lower_transposed_in_place(l: &DMatrix<f64>, v: &mut DVector<f64>) {
    let n = l.nrows();
    for i in (0..n).rev() {
        let mut s = v[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * v[k];
        }
        v[i] = s / l[(i, i)];
    }
}

/// Solve `L·y = b` (forward substitution), `L` lower triangular.
pub fn solve_lower(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut y = b.clone();
    solve_lower_in_place(l, &mut y);
    y
}

/// Solve `Lᵀ·x = b` (backward substitution), `L` lower triangular.
pub fn solve_lower_transposed(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut x = b.clone();
    solve_lower_transposed_in_place(l, &mut x);
    x
}

/// Solve `A·x = b` given the lower Cholesky factor of `A`.
pub fn solve_spd_with_factor(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    solve_lower_transposed(l, &solve_lower(l, b))
}

/// Solve `A·x = b` in place given the lower Cholesky factor of `A`.
pub fn solve_spd_in_place(l: &DMatrix<f64>, v: &mut DVector<f64>) {
    solve_lower_in_place(l, v);
    solve_lower_transposed_in_place(l, v);
}

/// `log det A` from its lower Cholesky factor.
pub fn log_det_from_factor(l: &DMatrix<f64>) -> f64 {
    2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
}

/// Quadratic form `xᵀ·A·x` where `A = L·Lᵀ`: equals `‖Lᵀx‖²`.
pub fn quad_form_with_factor(l: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    let y = l.tr_mul(x);
    y.dot(&y)
}
