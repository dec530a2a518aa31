//! Prior families and the scalar spike-and-slab denoiser.
//!
//! The denoiser is the exact scalar posterior map under the prior
//! `lambda N(0, psi) + (1 - lambda) delta(0)` and a Gaussian pseudo-observation
//! `r ~ N(alpha, tau)`. It is exposed per coordinate because the prior is a
//! product measure and the message passing solver consumes the scalar form.
//! All mixture weights are computed in log space; psi/tau ratios span many
//! orders of magnitude during message passing iterations.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::{self, SeededRng};
use crate::{Error, Result};

/// Per-coordinate mixture prior: alpha_j ~ lambda N(0, psi) + (1-lambda) delta(0).
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SpikeSlabPrior {
    /// Prior inclusion probability, in (0, 1).
    pub lambda: f64,
    /// Slab variance, > 0.
    pub psi: f64,
}

impl SpikeSlabPrior {
    pub fn new(lambda: f64, psi: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::Config(format!("lambda must lie in (0,1), got {lambda}")));
        }
        if !(psi > 0.0) || !psi.is_finite() {
            return Err(Error::Config(format!("psi must be positive, got {psi}")));
        }
        Ok(SpikeSlabPrior { lambda, psi })
    }

    /// log(lambda / (1 - lambda))
    pub fn prior_log_odds(&self) -> f64 {
        self.lambda.ln() - (-self.lambda).ln_1p()
    }

    /// Draw a vector with independent spike-and-slab coordinates.
    pub fn sample_vector(&self, len: usize, rng: &mut SeededRng) -> DVector<f64> {
        DVector::from_iterator(
            len,
            (0..len).map(|_| {
                if rng.gen::<f64>() < self.lambda {
                    let z: f64 = StandardNormal.sample(rng);
                    z * self.psi.sqrt()
                } else {
                    0.0
                }
            }),
        )
    }
}

/// Zellner-style prior scale for model selection.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GPrior {
    pub g_n: f64,
}

impl GPrior {
    pub fn new(g_n: f64) -> Result<Self> {
        if !(g_n > 0.0) || !g_n.is_finite() {
            return Err(Error::Config(format!("g_n must be positive, got {g_n}")));
        }
        Ok(GPrior { g_n })
    }
}

/// Multivariate Gaussian prior on the parameter of interest.
#[derive(Clone, Debug)]
pub struct GaussianPrior {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianPrior {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let p = mean.len();
        if covariance.nrows() != p || covariance.ncols() != p {
            return Err(Error::DimensionMismatch(format!(
                "mean has length {} but covariance is {}x{}",
                p,
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        let asym = (&covariance - covariance.transpose()).amax();
        if asym > 1e-12 {
            return Err(Error::SingularCovariance(format!(
                "prior covariance asymmetric: max deviation {asym:.3e}"
            )));
        }
        let min_eig = linalg::symmetrize(&covariance).symmetric_eigen().eigenvalues.min();
        if min_eig < -1e-10 {
            return Err(Error::SingularCovariance(format!(
                "prior covariance has eigenvalue {min_eig:.3e}"
            )));
        }
        Ok(GaussianPrior { mean, covariance })
    }

    /// Zero-mean isotropic prior N(0, v I_p).
    pub fn isotropic(p: usize, v: f64) -> Result<Self> {
        if !(v > 0.0) {
            return Err(Error::Config(format!("prior variance must be positive, got {v}")));
        }
        Ok(GaussianPrior {
            mean: DVector::zeros(p),
            covariance: DMatrix::identity(p, p) * v,
        })
    }
}

/// Exact scalar posterior summary of the denoiser.
#[derive(Clone, Copy, Debug)]
pub struct ScalarPosterior {
    pub mean: f64,
    pub variance: f64,
    pub inclusion_prob: f64,
}

/// Posterior mean, variance, and inclusion probability of a scalar alpha with
/// prior `lambda N(0, psi) + (1-lambda) delta(0)` observed through
/// `r ~ N(alpha, tau)`.
pub fn spike_slab_denoise(r: f64, tau: f64, prior: &SpikeSlabPrior) -> Result<ScalarPosterior> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidVariance(format!("tau = {tau}")));
    }
    let psi = prior.psi;
    let s2 = psi + tau;

    // Slab-conditional posterior is Gaussian shrinkage.
    let slab_var = psi * tau / s2;
    let slab_mean = r * psi / s2;

    // log N(r | 0, psi + tau) - log N(r | 0, tau), assembled without exp.
    let log_evidence_ratio = 0.5 * (tau / s2).ln() + 0.5 * r * r * (1.0 / tau - 1.0 / s2);
    let log_odds = prior.prior_log_odds() + log_evidence_ratio;
    let inclusion_prob = linalg::sigmoid(log_odds);

    let mean = inclusion_prob * slab_mean;
    // pi*v + pi*(1-pi)*m^2, the law-of-total-variance form (nonnegative).
    let variance = inclusion_prob * slab_var
        + inclusion_prob * (1.0 - inclusion_prob) * slab_mean * slab_mean;

    Ok(ScalarPosterior {
        mean,
        variance,
        inclusion_prob,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Adaptive Simpson quadrature over fixed initial panels (so narrow peaks
    /// cannot be skipped), used as the independent oracle for the denoiser
    /// moments.
    fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        fn simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
            (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
        }
        fn recurse(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
            let mid = 0.5 * (a + b);
            let whole = simpson(f, a, b);
            let left = simpson(f, a, mid);
            let right = simpson(f, mid, b);
            if depth == 0 || (left + right - whole).abs() < 15.0 * tol {
                left + right + (left + right - whole) / 15.0
            } else {
                recurse(f, a, mid, tol / 2.0, depth - 1) + recurse(f, mid, b, tol / 2.0, depth - 1)
            }
        }
        let panels = 64;
        let h = (b - a) / panels as f64;
        (0..panels)
            .map(|i| {
                recurse(
                    f,
                    a + i as f64 * h,
                    a + (i + 1) as f64 * h,
                    tol / panels as f64,
                    depth,
                )
            })
            .sum()
    }

    fn normal_pdf(x: f64, mu: f64, var: f64) -> f64 {
        (-0.5 * (x - mu) * (x - mu) / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
    }

    /// Quadrature oracle for the two-component posterior.
    fn denoise_oracle(r: f64, tau: f64, prior: &SpikeSlabPrior) -> ScalarPosterior {
        let lo = -20.0 * (prior.psi + tau).sqrt();
        let hi = -lo;
        let joint = |a: f64| prior.lambda * normal_pdf(a, 0.0, prior.psi) * normal_pdf(r, a, tau);
        let z_slab = adaptive_simpson(&joint, lo, hi, 1e-14, 40);
        let z_spike = (1.0 - prior.lambda) * normal_pdf(r, 0.0, tau);
        let z = z_slab + z_spike;
        let m1 = adaptive_simpson(&|a| a * joint(a), lo, hi, 1e-14, 40) / z;
        let m2 = adaptive_simpson(&|a| a * a * joint(a), lo, hi, 1e-14, 40) / z;
        ScalarPosterior {
            mean: m1,
            variance: m2 - m1 * m1,
            inclusion_prob: z_slab / z,
        }
    }

    #[test]
    fn near_certain_inclusion_is_gaussian_shrinkage() {
        let prior = SpikeSlabPrior::new(1.0 - 1e-15, 1.0).unwrap();
        let r = 2.5;
        let tau = 0.3;
        let got = spike_slab_denoise(r, tau, &prior).unwrap();
        let want = r * prior.psi / (prior.psi + tau);
        assert!((got.mean - want).abs() < 1e-6);
    }

    #[test]
    fn zero_observation_closed_form() {
        let prior = SpikeSlabPrior::new(0.3, 2.0).unwrap();
        for tau in [0.1, 1.0, 10.0] {
            let got = spike_slab_denoise(0.0, tau, &prior).unwrap();
            assert_eq!(got.mean, 0.0);
            let s = (tau / (prior.psi + tau)).sqrt();
            let want = prior.lambda * s / (prior.lambda * s + 1.0 - prior.lambda);
            assert!((got.inclusion_prob - want).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_quadrature_oracle_on_reference_point() {
        let prior = SpikeSlabPrior::new(0.3, 1.0).unwrap();
        let got = spike_slab_denoise(2.0, 0.5, &prior).unwrap();
        let want = denoise_oracle(2.0, 0.5, &prior);
        assert!((got.mean - want.mean).abs() < 1e-8, "{} vs {}", got.mean, want.mean);
        assert!((got.variance - want.variance).abs() < 1e-8);
        assert!((got.inclusion_prob - want.inclusion_prob).abs() < 1e-8);
    }

    #[test]
    fn matches_quadrature_oracle_on_randomized_grid() {
        let mut k = 0u64;
        for &lambda in &[0.05, 0.5, 0.95] {
            for &psi in &[0.2, 1.0, 8.0] {
                for &tau in &[0.05, 1.0, 4.0] {
                    k += 1;
                    let r = ((k * 2654435761) % 1000) as f64 / 100.0 - 5.0;
                    let prior = SpikeSlabPrior::new(lambda, psi).unwrap();
                    let got = spike_slab_denoise(r, tau, &prior).unwrap();
                    let want = denoise_oracle(r, tau, &prior);
                    assert!((got.mean - want.mean).abs() < 1e-7);
                    assert!((got.variance - want.variance).abs() < 1e-7);
                    assert!((got.inclusion_prob - want.inclusion_prob).abs() < 1e-7);
                }
            }
        }
    }

    /// Tweedie identity for exponential-family posteriors: d mean / dr = var / tau.
    #[test]
    fn posterior_mean_derivative_matches_variance() {
        let prior = SpikeSlabPrior::new(0.4, 1.5).unwrap();
        for &tau in &[0.2, 1.0, 3.0] {
            for &r in &[-3.0f64, -0.7, 0.0, 0.4, 2.2] {
                let h = 1e-5 * (1.0 + r.abs());
                let up = spike_slab_denoise(r + h, tau, &prior).unwrap().mean;
                let down = spike_slab_denoise(r - h, tau, &prior).unwrap().mean;
                let deriv = (up - down) / (2.0 * h);
                let want = spike_slab_denoise(r, tau, &prior).unwrap().variance / tau;
                assert!(
                    (deriv - want).abs() < 1e-5,
                    "r={r} tau={tau}: {deriv} vs {want}"
                );
            }
        }
    }

    #[test]
    fn inclusion_monotone_in_abs_r() {
        let prior = SpikeSlabPrior::new(0.25, 1.0).unwrap();
        let tau = 0.7;
        let mut last = -1.0;
        for i in 0..60 {
            let r = i as f64 * 0.25;
            let pi = spike_slab_denoise(r, tau, &prior).unwrap().inclusion_prob;
            assert!(pi >= last, "inclusion must grow with |r|");
            last = pi;
        }
        // symmetry
        let a = spike_slab_denoise(-2.0, tau, &prior).unwrap().inclusion_prob;
        let b = spike_slab_denoise(2.0, tau, &prior).unwrap().inclusion_prob;
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn extreme_ratio_does_not_overflow() {
        let prior = SpikeSlabPrior::new(0.5, 1.0).unwrap();
        let got = spike_slab_denoise(1000.0, 1e-3, &prior).unwrap();
        assert!(got.mean.is_finite());
        assert!(got.variance.is_finite() && got.variance >= 0.0);
        assert!((got.inclusion_prob - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_tau_rejected() {
        let prior = SpikeSlabPrior::new(0.5, 1.0).unwrap();
        assert!(matches!(
            spike_slab_denoise(1.0, 0.0, &prior),
            Err(Error::InvalidVariance(_))
        ));
    }
}
