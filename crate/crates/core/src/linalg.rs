use nalgebra::SymmetricEigen;

use crate::error::{IsacError, Result};
use crate::geometry::{CMatrix, CVector};

/// Validates a square Hermitian PSD covariance of the given order. Small
/// negative eigenvalues (relative to the trace) are accepted as round-off.
pub(crate) fn check_covariance(r: &CMatrix, order: usize) -> Result<()> {
    if r.nrows() != order || r.ncols() != order {
        return Err(IsacError::DimensionMismatch(format!(
            "covariance is {}x{}, expected {order}x{order}",
            r.nrows(),
            r.ncols()
        )));
    }
    let scale = r.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let asym = (r - r.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    if asym > 1e-9 * scale {
        return Err(IsacError::InvalidArgument(format!("covariance is not Hermitian (asymmetry {asym:.3e})")));
    }
    let herm = (r + r.adjoint()).unscale(2.0);
    let eig = SymmetricEigen::new(herm);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let trace = r.trace().re.abs().max(scale);
    if min < -1e-9 * trace {
        return Err(IsacError::NotPsd(min));
    }
    Ok(())
}

/// `x^H R x`, real for Hermitian `R`.
pub(crate) fn quad_form(r: &CMatrix, x: &CVector) -> f64 {
    x.dotc(&(r * x)).re
}

/// `sum_i |x_i|` for a complex vector.
pub(crate) fn l1_norm(x: &CVector) -> f64 {
    x.iter().map(|z| z.norm()).sum()
}
