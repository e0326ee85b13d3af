//! Seeded random draws for property checks and instance generation.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type CheckRng = ChaCha8Rng;

/// RNG for one named check of one scenario. Distinct labels give
/// independent streams, so adding a check never perturbs the others.
pub fn rng_for(seed: u64, label: &str) -> CheckRng {
    // FNV-1a over the label, mixed into the seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(seed ^ h.rotate_left(17))
}

pub fn random_normal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

pub fn random_unit_normal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    loop {
        let v = random_normal(rng, n);
        let nrm = v.norm();
        if nrm > 1e-8 {
            return v / nrm;
        }
    }
}

pub fn random_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// `n × k` matrix with orthonormal columns, Haar-like via QR of a Gaussian.
pub fn random_orthonormal<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize) -> DMatrix<f64> {
    if k == 0 {
        return DMatrix::zeros(n, 0);
    }
    let g = random_matrix(rng, n, k);
    crate::linalg::orthonormalize(&g)
}

/// Random element of the column span of `basis`.
pub fn random_in_span<R: Rng + ?Sized>(rng: &mut R, basis: &DMatrix<f64>) -> DVector<f64> {
    let c = random_normal(rng, basis.ncols());
    basis * c
}

pub fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}
