//! Nonparametric nuisance estimation: a Gaussian-process prior on a latent
//! function, observed through an elementwise link in the complement submodel
//! `sy ~ N(S^T G(F), sigma2 I)`, fitted by a Gauss-Newton Laplace
//! approximation and summarized by sampling.

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;

use crate::exact_posterior::NuisanceSummary;
use crate::linalg::{self, rng_for, standard_normal_vector, CholDyn};
use crate::{Error, Result};

/// Elementwise link applied to the latent function values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Identity,
    Square,
}

impl Link {
    pub fn apply(self, a: f64) -> f64 {
        match self {
            Link::Identity => a,
            Link::Square => a * a,
        }
    }

    pub fn deriv(self, a: f64) -> f64 {
        match self {
            Link::Identity => 1.0,
            Link::Square => 2.0 * a,
        }
    }

    fn map(self, f: &DVector<f64>) -> DVector<f64> {
        f.map(|v| self.apply(v))
    }

    /// Starting point for the Gauss-Newton iteration. The origin is a saddle
    /// of the linearized update when the link derivative vanishes there (the
    /// square link), so those links start from a symmetry-breaking constant
    /// at the prior scale.
    fn init_value(self) -> f64 {
        match self {
            Link::Identity => 0.0,
            Link::Square => 0.5,
        }
    }
}

/// Configuration of the Gaussian-process nuisance estimator.
#[derive(Clone, Debug)]
pub struct GpConfig {
    /// Feature matrix, one row per observation.
    pub features: DMatrix<f64>,
    /// Squared-exponential kernel denominator: k(a, b) = exp(-|a-b|^2 / this).
    pub lengthscale_sq: f64,
    pub link: Link,
    /// Diagonal stabilizer added to the kernel matrix.
    pub jitter: f64,
    pub gn_max_iters: usize,
    pub gn_tol: f64,
    /// Monte Carlo draws for the moment summary.
    pub n_samples: usize,
    pub seed: u64,
}

impl GpConfig {
    pub fn new(features: DMatrix<f64>) -> Self {
        GpConfig {
            features,
            lengthscale_sq: 10.0,
            link: Link::Square,
            jitter: 1e-8,
            gn_max_iters: 50,
            gn_tol: 1e-8,
            n_samples: 4096,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lengthscale_sq > 0.0) {
            return Err(Error::Config(format!(
                "lengthscale_sq must be positive, got {}",
                self.lengthscale_sq
            )));
        }
        if !(self.jitter > 0.0) {
            return Err(Error::Config(format!("jitter must be positive, got {}", self.jitter)));
        }
        if self.n_samples < 100 {
            return Err(Error::Config(format!(
                "n_samples must be at least 100, got {}",
                self.n_samples
            )));
        }
        Ok(())
    }
}

/// Laplace approximation at the posterior mode of the latent values.
#[derive(Clone, Debug)]
pub struct LaplaceFit {
    pub f_mode: DVector<f64>,
    /// Cholesky factor of the precision matrix at the mode.
    pub precision_chol: CholDyn,
    pub converged: bool,
}

/// Squared-exponential kernel matrix of the feature rows.
pub fn kernel_matrix(features: &DMatrix<f64>, lengthscale_sq: f64) -> DMatrix<f64> {
    let n = features.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        let d2 = (features.row(i) - features.row(j)).norm_squared();
        (-d2 / lengthscale_sq).exp()
    })
}

/// Gauss-Newton Laplace fit of the latent values given the complement part of
/// the rotated data. Each step linearizes the link around the current point,
/// solves the resulting Gaussian system, and backtracks by step halving until
/// the exact log posterior does not decrease.
pub fn gp_laplace_fit(
    sy: &DVector<f64>,
    s: &DMatrix<f64>,
    config: &GpConfig,
    sigma2: f64,
) -> Result<LaplaceFit> {
    config.validate()?;
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidVariance(format!("sigma2 = {sigma2}")));
    }
    let n = s.nrows();
    let m = s.ncols();
    if sy.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "S has {m} columns but the rotated response has length {}",
            sy.len()
        )));
    }
    if config.features.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "features have {} rows but S has {n} rows",
            config.features.nrows()
        )));
    }

    let kernel = kernel_matrix(&config.features, config.lengthscale_sq)
        + DMatrix::<f64>::identity(n, n) * config.jitter;
    let chol_k = Cholesky::new(kernel).ok_or(Error::SingularKernel)?;
    let k_inv = chol_k.inverse();
    let s_t = s.transpose();
    let link = config.link;

    let log_posterior = |f: &DVector<f64>| -> f64 {
        let resid = sy - &s_t * link.map(f);
        -0.5 * f.dot(&chol_k.solve(f)) - 0.5 * resid.norm_squared() / sigma2
    };

    let mut f = DVector::<f64>::from_element(n, link.init_value());
    let mut obj = log_posterior(&f);
    let mut converged = false;

    // S^T scaled by the link derivative at f: the linearized design.
    let linearized_design = |f: &DVector<f64>| -> DMatrix<f64> {
        let mut m_lin = s_t.clone();
        for j in 0..n {
            let d = link.deriv(f[j]);
            for i in 0..m {
                m_lin[(i, j)] *= d;
            }
        }
        m_lin
    };

    for _ in 0..config.gn_max_iters {
        let m_lin = linearized_design(&f);
        let offset = link.map(&f)
            - DVector::from_fn(n, |j, _| link.deriv(f[j]) * f[j]);
        let resid_lin = sy - &s_t * offset;
        let precision = &k_inv + m_lin.transpose() * &m_lin / sigma2;
        let chol_p = Cholesky::new(linalg::symmetrize(&precision)).ok_or_else(|| {
            Error::SingularCovariance("linearized precision not positive definite".into())
        })?;
        let target = chol_p.solve(&(m_lin.transpose() * &resid_lin / sigma2));
        let step = &target - &f;

        // Step halving on the exact objective.
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &f + &step * t;
            let cand_obj = log_posterior(&cand);
            if cand_obj >= obj - 1e-12 * obj.abs().max(1.0) {
                f = cand;
                obj = cand_obj;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break; // no ascent direction left at this linearization
        }
        if (step.norm() * t) / f.norm().max(1.0) < config.gn_tol {
            converged = true;
            break;
        }
    }

    let m_lin = linearized_design(&f);
    let precision = &k_inv + m_lin.transpose() * &m_lin / sigma2;
    let precision_chol = Cholesky::new(linalg::symmetrize(&precision)).ok_or_else(|| {
        Error::SingularCovariance("Laplace precision not positive definite".into())
    })?;
    Ok(LaplaceFit {
        f_mode: f,
        precision_chol,
        converged,
    })
}

/// Sample the Laplace Gaussian, push every draw through `R^T G(.)`, and
/// return the sample mean and covariance. Deterministic for a fixed seed:
/// draw i uses its own counter-mode stream, and the reduction order is fixed
/// regardless of how many threads run the map.
pub fn gp_nuisance_summary(
    fit: &LaplaceFit,
    r: &DMatrix<f64>,
    config: &GpConfig,
) -> Result<NuisanceSummary> {
    config.validate()?;
    let n = fit.f_mode.len();
    if r.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "R has {} rows but the latent vector has length {n}",
            r.nrows()
        )));
    }
    let p = r.ncols();
    let lt = fit.precision_chol.l().transpose().into_owned();
    let r_t = r.transpose();
    let link = config.link;

    let images: Vec<DVector<f64>> = (0..config.n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(config.seed, i as u64 + 1);
            let z = standard_normal_vector(n, &mut rng);
            // precision = L L^T, so covariance = L^{-T} L^{-1}: solve L^T x = z.
            let perturb = lt
                .solve_upper_triangular(&z)
                .expect("Cholesky factor is nonsingular");
            let f = &fit.f_mode + perturb;
            &r_t * link.map(&f)
        })
        .collect();

    let count = images.len() as f64;
    let mut mean = DVector::<f64>::zeros(p);
    for v in &images {
        mean += v;
    }
    mean /= count;
    let mut cov = DMatrix::<f64>::zeros(p, p);
    for v in &images {
        let d = v - &mean;
        cov += &d * d.transpose();
    }
    cov /= count - 1.0;
    NuisanceSummary::new(mean, cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::compute_rotation;
    use rand_distr::Distribution;

    fn random_matrix(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rng_for(seed, 0);
        DMatrix::from_fn(n, p, |_, _| rand_distr::StandardNormal.sample(&mut rng))
    }

    fn setup(n: usize, p: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>, GpConfig) {
        let x = random_matrix(n, p, seed);
        let split = compute_rotation(&x).unwrap();
        let features = DMatrix::from_column_slice(n, 1, x.column(0).as_slice());
        (split.r, split.s, GpConfig::new(features))
    }

    #[test]
    fn identity_link_matches_conjugate_posterior() {
        let n = 25;
        let (_, s, mut config) = setup(n, 2, 61);
        config.link = Link::Identity;
        let sigma2 = 0.5;
        let mut rng = rng_for(62, 0);
        let sy = standard_normal_vector(s.ncols(), &mut rng);

        let fit = gp_laplace_fit(&sy, &s, &config, sigma2).unwrap();

        // Closed form: F | sy ~ N(C S sy / sigma2, C), C = (K^-1 + S S^T / sigma2)^-1.
        let kernel = kernel_matrix(&config.features, config.lengthscale_sq)
            + DMatrix::<f64>::identity(n, n) * config.jitter;
        let k_inv = Cholesky::new(kernel).unwrap().inverse();
        let prec = k_inv + &s * s.transpose() / sigma2;
        let chol = Cholesky::new(prec.clone()).unwrap();
        let want_mode = chol.solve(&(&s * &sy / sigma2));
        assert!((&fit.f_mode - &want_mode).amax() < 1e-6);

        // Laplace precision equals the exact Gaussian precision (relative
        // scale: the kernel inverse is huge for smooth kernels).
        let got_prec =
            fit.precision_chol.l() * fit.precision_chol.l().transpose();
        let scale = prec.amax();
        assert!((got_prec - prec).amax() / scale < 1e-8);
    }

    #[test]
    fn zero_observation_square_link_stays_at_origin() {
        let (_, s, config) = setup(20, 2, 63);
        let sy = DVector::zeros(s.ncols());
        let fit = gp_laplace_fit(&sy, &s, &config, 1.0).unwrap();
        assert!(fit.f_mode.norm() < 1e-6);
    }

    #[test]
    fn mode_is_locally_optimal() {
        let n = 30;
        let (_, s, config) = setup(n, 2, 64);
        // Synthetic draw from the prior pushed through the square link.
        let kernel = kernel_matrix(&config.features, config.lengthscale_sq)
            + DMatrix::<f64>::identity(n, n) * config.jitter;
        let chol_k = Cholesky::new(kernel.clone()).unwrap();
        let f0 = chol_k.l() * standard_normal_vector(n, &mut rng_for(65, 0));
        let sigma2 = 1.0;
        let sy = s.transpose() * f0.map(|v| v * v)
            + standard_normal_vector(s.ncols(), &mut rng_for(65, 1));

        let fit = gp_laplace_fit(&sy, &s, &config, sigma2).unwrap();

        let log_post = |f: &DVector<f64>| -> f64 {
            let resid = &sy - s.transpose() * f.map(|v| v * v);
            -0.5 * f.dot(&chol_k.solve(f)) - 0.5 * resid.norm_squared() / sigma2
        };
        let at_mode = log_post(&fit.f_mode);
        let mut rng = rng_for(66, 0);
        for _ in 0..100 {
            let perturbed = &fit.f_mode + standard_normal_vector(n, &mut rng) * 0.1;
            assert!(log_post(&perturbed) <= at_mode + 1e-9);
        }
    }

    #[test]
    fn identity_link_summary_matches_linear_pushforward() {
        let n = 20;
        let (r, s, mut config) = setup(n, 2, 67);
        config.link = Link::Identity;
        config.n_samples = 40_000;
        let sigma2 = 0.8;
        let sy = standard_normal_vector(s.ncols(), &mut rng_for(68, 0));
        let fit = gp_laplace_fit(&sy, &s, &config, sigma2).unwrap();
        let summary = gp_nuisance_summary(&fit, &r, &config).unwrap();

        // Linear map of a Gaussian: R^T N(mode, P^{-1}).
        let want_mean = r.transpose() * &fit.f_mode;
        let cov_full = {
            let prec = fit.precision_chol.l() * fit.precision_chol.l().transpose();
            Cholesky::new(prec).unwrap().inverse()
        };
        let want_cov = r.transpose() * cov_full * &r;

        // 3 Monte Carlo standard errors, se ~ sd / sqrt(n_samples).
        let sd = want_cov.diagonal().map(|v| v.sqrt());
        for j in 0..2 {
            let se = sd[j] / (config.n_samples as f64).sqrt();
            assert!(
                (summary.mu_hat[j] - want_mean[j]).abs() < 3.0 * se + 1e-9,
                "mean {j}"
            );
        }
        assert!((summary.sigma_hat - want_cov).amax() < 0.05 * sd.max() * sd.max() + 3e-3);
    }

    #[test]
    fn monte_carlo_error_shrinks_with_sample_size() {
        let (r, s, mut config) = setup(24, 2, 71);
        let sy = standard_normal_vector(s.ncols(), &mut rng_for(72, 0));
        let fit = gp_laplace_fit(&sy, &s, &config, 1.0).unwrap();

        config.n_samples = 1000;
        let small = gp_nuisance_summary(&fit, &r, &config).unwrap();
        config.n_samples = 64_000;
        config.seed = 1;
        let big = gp_nuisance_summary(&fit, &r, &config).unwrap();
        config.seed = 2;
        let big2 = gp_nuisance_summary(&fit, &r, &config).unwrap();

        // The small-sample deviation should exceed the large-sample
        // seed-to-seed deviation roughly by sqrt(64) = 8; allow a factor 3.
        let dev_small = (&small.sigma_hat - &big.sigma_hat).amax();
        let dev_big = (&big.sigma_hat - &big2.sigma_hat).amax();
        assert!(
            dev_small > dev_big * 8.0 / 3.0,
            "dev_small {dev_small} dev_big {dev_big}"
        );
    }

    #[test]
    fn summary_is_deterministic_for_fixed_seed() {
        let (r, s, config) = setup(18, 2, 73);
        let sy = standard_normal_vector(s.ncols(), &mut rng_for(74, 0));
        let fit = gp_laplace_fit(&sy, &s, &config, 1.0).unwrap();
        let a = gp_nuisance_summary(&fit, &r, &config).unwrap();
        let b = gp_nuisance_summary(&fit, &r, &config).unwrap();
        assert_eq!(a.mu_hat, b.mu_hat);
        assert_eq!(a.sigma_hat, b.sigma_hat);
    }
}
