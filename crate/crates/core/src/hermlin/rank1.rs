use nalgebra::DVector;
use num_complex::Complex64;

use super::hermitian::{eigh, HermitianMatrix};
use crate::error::{Error, Result};

/// Leading-eigenpair voltage recovery.
///
/// Returns `v = √w₁·u₁` rotated so that the slack (node 0) entry is real and
/// nonnegative, together with `w₂/w₁` (0 for a 1×1 matrix). Small negative
/// eigenvalues from rounding count as zero.
pub fn rank1_extract(v: &HermitianMatrix) -> Result<(DVector<Complex64>, f64)> {
    let n = v.dim();
    let dec = eigh(v)?;
    let w1 = dec.eigenvalues[n - 1];
    if !(w1 > 0.0) {
        return Err(Error::Degenerate(w1));
    }
    let mut x: DVector<Complex64> =
        dec.eigenvectors.column(n - 1).into_owned() * Complex64::new(w1.sqrt(), 0.0);
    let anchor = x[0];
    if anchor.norm() > 0.0 {
        let rot = anchor.conj() / anchor.norm();
        x *= rot;
        x[0] = Complex64::new(x[0].re.max(0.0), 0.0);
    }
    let ratio = if n > 1 {
        (dec.eigenvalues[n - 2] / w1).max(0.0)
    } else {
        0.0
    };
    Ok((x, ratio))
}
