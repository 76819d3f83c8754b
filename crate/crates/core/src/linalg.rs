//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Above this estimated 1-norm condition number a solve is reported as ill-conditioned.
pub const CONDITION_WARN: f64 = 1e12;

/// Induced 1-norm (max absolute column sum).
pub fn norm1(m: &Matrix) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Largest absolute entry.
pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// An LU-factored matrix with its explicit inverse and a condition estimate.
#[derive(Clone, Debug)]
pub struct Inverse {
    pub inv: Matrix,
    pub condition: f64,
}

/// Inverts `m` by LU with partial pivoting. `context` names the solve in errors and warnings.
pub fn invert(m: &Matrix, context: &'static str) -> Result<Inverse> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            axis: "matrix columns",
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    let inv = m
        .clone()
        .lu()
        .try_inverse()
        .ok_or(Error::Singular(context))?;
    if inv.iter().any(|x| !x.is_finite()) {
        return Err(Error::Singular(context));
    }
    let condition = norm1(m) * norm1(&inv);
    if condition > CONDITION_WARN {
        log::warn!("{context}: condition estimate {condition:.3e} exceeds {CONDITION_WARN:.0e}");
    }
    Ok(Inverse { inv, condition })
}

/// `(I - a)^{-1}`.
pub fn resolvent(a: &Matrix, context: &'static str) -> Result<Inverse> {
    let n = a.nrows();
    invert(&(Matrix::identity(n, n) - a), context)
}

/// Stationary distribution of a stochastic matrix from `rho^T (I - P) = 0, rho^T 1 = 1`.
///
/// Unique when `p` is irreducible; the caller checks that.
pub fn stationary(p: &Matrix) -> Result<(Vector, f64)> {
    let n = p.nrows();
    let mut sys = (Matrix::identity(n, n) - p).transpose();
    for j in 0..n {
        sys[(n - 1, j)] = 1.0;
    }
    let mut rhs = Vector::zeros(n);
    rhs[n - 1] = 1.0;
    let inv = invert(&sys, "stationary system")?;
    Ok((&inv.inv * rhs, inv.condition))
}

/// Deviation matrix `(I - P + 1 rho^T)^{-1} - 1 rho^T`, the group inverse of `I - P`.
pub fn deviation(p: &Matrix, rho: &Vector) -> Result<(Matrix, f64)> {
    let n = p.nrows();
    let one_rho = Matrix::from_fn(n, n, |_, j| rho[j]);
    let fundamental = invert(&(Matrix::identity(n, n) - p + &one_rho), "fundamental matrix")?;
    Ok((fundamental.inv - one_rho, fundamental.condition))
}
