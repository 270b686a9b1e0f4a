use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;

use crate::hermlin::HermitianMatrix;

pub(crate) fn random_hermitian(rng: &mut impl Rng, n: usize, scale: f64) -> HermitianMatrix {
    let m = DMatrix::from_fn(n, n, |_, _| {
        Complex64::new(
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
        )
    });
    HermitianMatrix::hermitian_part(&m)
}
