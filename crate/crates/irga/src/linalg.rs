//! Small numerical helpers shared across modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Seeded generator used throughout the crate. ChaCha streams give
/// reproducible independent substreams for parallel work.
pub type SeededRng = ChaCha8Rng;

pub type CholDyn = Cholesky<f64, Dyn>;

/// Deterministic RNG for a (seed, stream) pair.
pub fn rng_for(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// log(sum(exp(xs))) without overflow. Returns -inf for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// log sigmoid(x), stable for large |x|.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    log_sigmoid(x).exp()
}

/// (m + m^T) / 2
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetrize and clamp eigenvalues from below. Used to repair approximate
/// covariance estimates before factorization.
pub fn floor_eigenvalues(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let sym = symmetrize(m);
    let eig = sym.symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Log density of N(x | mean, C) given the Cholesky factor of C.
pub fn log_gaussian(x: &DVector<f64>, mean: &DVector<f64>, chol: &CholDyn) -> f64 {
    let d = x.len();
    if d == 0 {
        return 0.0;
    }
    let diff = x - mean;
    let half = chol.l_dirty().solve_lower_triangular(&diff).expect("triangular solve");
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + half.norm_squared())
}

/// Log density of N(x | mean, s2 I).
pub fn log_gaussian_iso(x: &DVector<f64>, mean: &DVector<f64>, s2: f64) -> f64 {
    let d = x.len() as f64;
    let diff = x - mean;
    -0.5 * (d * (2.0 * std::f64::consts::PI * s2).ln() + diff.norm_squared() / s2)
}

/// Vector of n independent standard normal draws.
pub fn standard_normal_vector(n: usize, rng: &mut SeededRng) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)))
}

/// Draw from N(mean, C) given the Cholesky factor of C.
pub fn sample_gaussian(mean: &DVector<f64>, chol: &CholDyn, rng: &mut SeededRng) -> DVector<f64> {
    let z = standard_normal_vector(mean.len(), rng);
    mean + chol.l_dirty().lower_triangle() * z
}

/// Smallest/largest singular value ratio check; returns the singular values.
pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    m.clone().svd(false, false).singular_values
}
