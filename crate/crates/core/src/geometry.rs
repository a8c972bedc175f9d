//! Operations on vectors of the unit hypersphere.

use crate::error::{Error, Result};
use crate::scalar::{dot, norm, Scalar};

/// Norms at or below this are treated as the zero vector.
pub const ZERO_NORM: f64 = 1e-12;

/// Tolerance used when an input is required to already be unit length.
pub const UNIT_TOL: f64 = 1e-6;

/// Returns `v / ‖v‖`.
pub fn normalize<T: Scalar>(v: &[T]) -> Result<Vec<T>> {
    let n = norm(v);
    if !(n > T::lit(ZERO_NORM)) {
        return Err(Error::ZeroVector { norm: n.to_f64_lossy() });
    }
    Ok(v.iter().map(|&x| x / n).collect())
}

/// In-place variant of [`normalize`]; returns the original norm.
pub fn normalize_in_place<T: Scalar>(v: &mut [T]) -> Result<T> {
    let n = norm(v);
    if !(n > T::lit(ZERO_NORM)) {
        return Err(Error::ZeroVector { norm: n.to_f64_lossy() });
    }
    for x in v.iter_mut() {
        *x = *x / n;
    }
    Ok(n)
}

/// Cosine similarity, clamped into `[-1, 1]`.
pub fn cosine<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    let na = norm(a);
    let nb = norm(b);
    for n in [na, nb] {
        if !(n > T::lit(ZERO_NORM)) {
            return Err(Error::ZeroVector { norm: n.to_f64_lossy() });
        }
    }
    Ok(clamp_unit(dot(a, b) / (na * nb)))
}

/// Angle in `[0, π]` between two nonzero vectors.
pub fn angle<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    cosine(a, b).map(T::acos)
}

pub(crate) fn clamp_unit<T: Scalar>(c: T) -> T {
    c.max(-T::one()).min(T::one())
}

/// Fails with `NotUnitNorm` unless `|‖v‖ - 1| <= UNIT_TOL`.
pub fn check_unit<T: Scalar>(v: &[T]) -> Result<()> {
    let n = norm(v).to_f64_lossy();
    if (n - 1.0).abs() > UNIT_TOL || !n.is_finite() {
        return Err(Error::NotUnitNorm { norm: n, tol: UNIT_TOL });
    }
    Ok(())
}
