//! Reference samplers used for validation: a spike-and-slab Gibbs sampler for
//! linear models and a random-walk Metropolis-Hastings sampler over the
//! latent Gaussian-process values with the regression parameter marginalized
//! out, plus overlapping-batch-means standard errors.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::gp_nuisance::{kernel_matrix, GpConfig};
use crate::linalg::{self, rng_for};
use crate::priors::{GaussianPrior, SpikeSlabPrior};
use crate::{Error, Result};

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct McmcConfig {
    pub burnin: usize,
    pub recorded: usize,
    pub seed: u64,
    /// Random-walk proposal scale (Metropolis-Hastings only).
    pub rw_step: f64,
    /// Batch length for overlapping-batch-means standard errors.
    pub batch_length: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            burnin: 10_000,
            recorded: 90_000,
            seed: 0,
            rw_step: 0.05,
            batch_length: 300,
        }
    }
}

/// Output of the spike-and-slab Gibbs sampler.
#[derive(Clone, Debug)]
pub struct GibbsOutput {
    /// Recorded-sample averages of the inclusion indicators.
    pub inclusion_probs: DVector<f64>,
    /// Recorded-sample averages of the coefficients.
    pub theta_mean: DVector<f64>,
    pub sigma2_mean: f64,
    pub sigma2_trace: Vec<f64>,
    /// Overlapping-batch-means standard error of each inclusion estimate.
    pub inclusion_se: DVector<f64>,
    /// Average of the per-coordinate standard errors.
    pub avg_inclusion_se: f64,
}

/// Systematic-scan Gibbs sampler for `y ~ N(A theta, sigma2 I)` with a
/// spike-and-slab prior on every coordinate. Each coordinate's inclusion
/// indicator is drawn from its conditional with the coefficient marginalized
/// analytically, then the coefficient given inclusion. With `sigma2_fixed`
/// absent, the variance is drawn from its inverse-gamma conditional under the
/// prior 1/sigma2 ~ Ga(1, 1).
pub fn gibbs_spike_slab(
    y: &DVector<f64>,
    a: &DMatrix<f64>,
    prior: &SpikeSlabPrior,
    config: &McmcConfig,
    sigma2_fixed: Option<f64>,
) -> Result<GibbsOutput> {
    let n = y.len();
    let r = a.ncols();
    if a.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "A has {} rows but y has length {n}",
            a.nrows()
        )));
    }
    if r == 0 || config.recorded == 0 {
        return Err(Error::Config("need r >= 1 and recorded >= 1".into()));
    }
    if let Some(s2) = sigma2_fixed {
        if !(s2 > 0.0) {
            return Err(Error::InvalidVariance(format!("sigma2 = {s2}")));
        }
    }

    let mut rng = rng_for(config.seed, 0);
    let col_norms2: Vec<f64> = (0..r).map(|j| a.column(j).norm_squared()).collect();
    let prior_log_odds = prior.prior_log_odds();

    let mut theta = DVector::<f64>::zeros(r);
    let mut resid = y.clone();
    let mut sigma2 = sigma2_fixed.unwrap_or(1.0);

    let total = config.burnin + config.recorded;
    let mut indicator_traces: Vec<Vec<u8>> = vec![Vec::with_capacity(config.recorded); r];
    let mut theta_sum = DVector::<f64>::zeros(r);
    let mut sigma2_trace = Vec::with_capacity(config.recorded);

    for it in 0..total {
        for j in 0..r {
            let col = a.column(j);
            if theta[j] != 0.0 {
                resid += col * theta[j];
            }
            let prec = col_norms2[j] / sigma2 + 1.0 / prior.psi;
            let var = 1.0 / prec;
            let mean = var * col.dot(&resid) / sigma2;
            // Bayes factor of inclusion with theta_j integrated out.
            let log_odds =
                prior_log_odds + 0.5 * (var / prior.psi).ln() + 0.5 * mean * mean / var;
            let include = rng.gen::<f64>() < linalg::sigmoid(log_odds);
            let value = if include {
                let z: f64 = StandardNormal.sample(&mut rng);
                mean + var.sqrt() * z
            } else {
                0.0
            };
            theta[j] = value;
            if value != 0.0 {
                resid -= col * value;
            }
            if it >= config.burnin {
                indicator_traces[j].push(include as u8);
            }
        }
        if sigma2_fixed.is_none() {
            // 1/sigma2 | rest ~ Ga(1 + n/2, 1 + ||resid||^2 / 2)
            let shape = 1.0 + n as f64 / 2.0;
            let rate = 1.0 + resid.norm_squared() / 2.0;
            let draw = Gamma::new(shape, 1.0 / rate)
                .expect("valid gamma parameters")
                .sample(&mut rng);
            sigma2 = (1.0 / draw).clamp(1e-12, 1e12);
        }
        if it >= config.burnin {
            theta_sum += &theta;
            sigma2_trace.push(sigma2);
        }
    }

    let rec = config.recorded as f64;
    let inclusion_probs = DVector::from_fn(r, |j, _| {
        indicator_traces[j].iter().map(|&v| v as f64).sum::<f64>() / rec
    });
    let mut inclusion_se = DVector::<f64>::zeros(r);
    for j in 0..r {
        let trace: Vec<f64> = indicator_traces[j].iter().map(|&v| v as f64).collect();
        inclusion_se[j] = batch_means_se(&trace, config.batch_length)?;
    }
    Ok(GibbsOutput {
        inclusion_probs,
        theta_mean: theta_sum / rec,
        sigma2_mean: sigma2_trace.iter().sum::<f64>() / rec,
        sigma2_trace,
        avg_inclusion_se: inclusion_se.mean(),
        inclusion_se,
    })
}

/// Marginal density estimate on a grid.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct DensityGrid {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

/// Output of the Metropolis-Hastings sampler over the latent values.
#[derive(Clone, Debug)]
pub struct MhGpOutput {
    /// Posterior mean of the regression parameter, averaged over the
    /// analytically available conditional means.
    pub beta_mean: DVector<f64>,
    /// Conditional covariance of the regression parameter given the latents
    /// (constant across draws).
    pub beta_cond_cov: DMatrix<f64>,
    /// Per-coordinate marginal density estimates.
    pub densities: Vec<DensityGrid>,
    pub acceptance_rate: f64,
    /// Batch-means standard error of each posterior-mean coordinate.
    pub beta_mean_se: DVector<f64>,
}

/// Random-walk Metropolis-Hastings on the latent function values of the model
/// `y ~ N(X beta + G(F), sigma2 I)` with a Gaussian prior on beta, which is
/// marginalized out of the acceptance ratio. The conditional of beta given F
/// is available in closed form, so marginal densities are averages of
/// Gaussians over the recorded draws.
///
/// The walk runs in the whitened parameterization F = L w with K = L L^T and
/// a spherical proposal on w. A spherical proposal on F itself is unusable
/// for smooth kernels: the prior precision explodes along the small
/// eigendirections and every move is rejected.
pub fn mh_gp(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    gp_config: &GpConfig,
    config: &McmcConfig,
    beta_prior: &GaussianPrior,
    sigma2: f64,
) -> Result<MhGpOutput> {
    gp_config.validate()?;
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidVariance(format!("sigma2 = {sigma2}")));
    }
    let n = y.len();
    let p = x.ncols();
    if x.nrows() != n || gp_config.features.nrows() != n || beta_prior.mean.len() != p {
        return Err(Error::DimensionMismatch(
            "response, design, features, and prior must agree".into(),
        ));
    }

    let kernel = kernel_matrix(&gp_config.features, gp_config.lengthscale_sq)
        + DMatrix::<f64>::identity(n, n) * gp_config.jitter;
    let chol_k = Cholesky::new(kernel).ok_or(Error::SingularKernel)?;

    // beta marginalized: y - G(F) ~ N(X mu0, sigma2 I + X Sigma0 X^T).
    let marginal_cov = DMatrix::<f64>::identity(n, n) * sigma2
        + x * &beta_prior.covariance * x.transpose();
    let chol_v = Cholesky::new(linalg::symmetrize(&marginal_cov))
        .ok_or_else(|| Error::SingularCovariance("marginal covariance".into()))?;
    let marginal_mean = x * &beta_prior.mean;

    // Conditional of beta given F: precision X^T X / sigma2 + Sigma0^{-1}.
    let prior_prec = Cholesky::new(linalg::symmetrize(&beta_prior.covariance))
        .ok_or_else(|| Error::SingularCovariance("beta prior covariance".into()))?
        .inverse();
    let cond_prec = x.transpose() * x / sigma2 + &prior_prec;
    let cond_chol = Cholesky::new(linalg::symmetrize(&cond_prec))
        .ok_or_else(|| Error::SingularCovariance("beta conditional precision".into()))?;
    let beta_cond_cov = cond_chol.inverse();
    let prior_prec_mean = &prior_prec * &beta_prior.mean;
    let link = gp_config.link;
    let cond_mean = |f: &DVector<f64>| -> DVector<f64> {
        let adjusted = y - f.map(|v| link.apply(v));
        cond_chol.solve(&(x.transpose() * adjusted / sigma2 + &prior_prec_mean))
    };

    let l_k = chol_k.l();
    let log_target = |w: &DVector<f64>| -> f64 {
        let f = &l_k * w;
        let g = f.map(|v| link.apply(v));
        let lik = linalg::log_gaussian(&(y - g), &marginal_mean, &chol_v);
        lik - 0.5 * w.norm_squared()
    };

    let mut rng = rng_for(config.seed, 0);
    let mut w = DVector::<f64>::zeros(n);
    let mut current = log_target(&w);
    let mut accepted = 0usize;
    let mut cond_means: Vec<DVector<f64>> = Vec::with_capacity(config.recorded);

    for it in 0..(config.burnin + config.recorded) {
        let proposal = &w + linalg::standard_normal_vector(n, &mut rng) * config.rw_step;
        let cand = log_target(&proposal);
        let u: f64 = rng.gen();
        if u.ln() < cand - current {
            w = proposal;
            current = cand;
            accepted += 1;
        }
        if it >= config.burnin {
            cond_means.push(cond_mean(&(&l_k * &w)));
        }
    }

    let rec = cond_means.len() as f64;
    let mut beta_mean = DVector::<f64>::zeros(p);
    for m in &cond_means {
        beta_mean += m;
    }
    beta_mean /= rec;

    let mut beta_mean_se = DVector::<f64>::zeros(p);
    for j in 0..p {
        let trace: Vec<f64> = cond_means.iter().map(|m| m[j]).collect();
        beta_mean_se[j] = batch_means_se(&trace, config.batch_length)?;
    }

    // Rao-Blackwellized density estimates: average the analytic conditional
    // over the recorded draws, thinned to keep the grids cheap.
    let thin = (cond_means.len() / 10_000).max(1);
    let kept: Vec<&DVector<f64>> = cond_means.iter().step_by(thin).collect();
    let mut densities = Vec::with_capacity(p);
    for j in 0..p {
        let sd_j = beta_cond_cov[(j, j)].sqrt();
        let center = beta_mean[j];
        let spread = cond_means
            .iter()
            .map(|m| (m[j] - center).abs())
            .fold(0.0f64, f64::max)
            + 4.0 * sd_j;
        let n_grid = 201;
        let grid: Vec<f64> = (0..n_grid)
            .map(|g| center - spread + 2.0 * spread * g as f64 / (n_grid - 1) as f64)
            .collect();
        let mut density = vec![0.0f64; n_grid];
        let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * sd_j * kept.len() as f64);
        for m in &kept {
            let mu = m[j];
            for (g, &xv) in grid.iter().enumerate() {
                let zsc = (xv - mu) / sd_j;
                density[g] += norm * (-0.5 * zsc * zsc).exp();
            }
        }
        densities.push(DensityGrid { grid, density });
    }

    Ok(MhGpOutput {
        beta_mean,
        beta_cond_cov,
        densities,
        acceptance_rate: accepted as f64 / (config.burnin + config.recorded) as f64,
        beta_mean_se,
    })
}

/// Overlapping-batch-means estimate of the Monte Carlo standard error of the
/// trace mean.
pub fn batch_means_se(trace: &[f64], batch_length: usize) -> Result<f64> {
    let n = trace.len();
    let b = batch_length;
    if b == 0 || n < 2 * b {
        return Err(Error::TraceTooShort { len: n, batch: b });
    }
    let mean = trace.iter().sum::<f64>() / n as f64;
    let n_batches = n - b + 1;
    // Running window sum over all overlapping batches.
    let mut window: f64 = trace[..b].iter().sum();
    let mut acc = (window / b as f64 - mean).powi(2);
    for k in 1..n_batches {
        window += trace[k + b - 1] - trace[k - 1];
        acc += (window / b as f64 - mean).powi(2);
    }
    let asymptotic_var =
        (n as f64 * b as f64) / ((n - b) as f64 * (n - b + 1) as f64) * acc;
    Ok((asymptotic_var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact_posterior::exact_selection_oracle;
    use crate::linalg::standard_normal_vector;

    fn random_matrix(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rng_for(seed, 0);
        DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng))
    }

    fn short_config(seed: u64) -> McmcConfig {
        McmcConfig {
            burnin: 2_000,
            recorded: 20_000,
            seed,
            rw_step: 0.05,
            batch_length: 150,
        }
    }

    #[test]
    fn strong_signal_always_included() {
        let n = 40;
        let col = standard_normal_vector(n, &mut rng_for(81, 0));
        let a = DMatrix::from_columns(&[col.clone()]);
        let y = &col * 5.0 + standard_normal_vector(n, &mut rng_for(81, 1)) * 0.2;
        let prior = SpikeSlabPrior::new(0.5, 1.0).unwrap();
        let out = gibbs_spike_slab(&y, &a, &prior, &short_config(1), None).unwrap();
        assert!(out.inclusion_probs[0] > 0.99);
    }

    #[test]
    fn orthogonal_design_matches_exact_oracle() {
        let n = 30;
        let mut a = DMatrix::<f64>::zeros(n, 3);
        a[(0, 0)] = 2.0;
        a[(1, 1)] = 1.0;
        a[(2, 2)] = 1.5;
        let mut y = standard_normal_vector(n, &mut rng_for(82, 0)) * 0.7;
        y[0] += 3.0;
        y[2] += 1.0;
        let prior = SpikeSlabPrior::new(0.4, 1.0).unwrap();
        let sigma2 = 0.49;
        let exact = exact_selection_oracle(&y, &a, &prior, sigma2).unwrap();
        let out = gibbs_spike_slab(&y, &a, &prior, &short_config(2), Some(sigma2)).unwrap();
        for j in 0..3 {
            let tol = 3.0 * out.inclusion_se[j] + 1e-3;
            assert!(
                (out.inclusion_probs[j] - exact[j]).abs() < tol,
                "coord {j}: gibbs {} exact {} se {}",
                out.inclusion_probs[j],
                exact[j],
                out.inclusion_se[j]
            );
        }
    }

    #[test]
    fn null_data_stays_near_prior() {
        let n = 25;
        let a = random_matrix(n, 4, 83);
        let y = DVector::<f64>::zeros(n);
        let prior = SpikeSlabPrior::new(0.3, 1.0).unwrap();
        let out = gibbs_spike_slab(&y, &a, &prior, &short_config(3), Some(1.0)).unwrap();
        for j in 0..4 {
            assert!(out.inclusion_probs[j] <= prior.lambda + 3.0 * out.inclusion_se[j]);
        }
    }

    #[test]
    fn gibbs_is_reproducible() {
        let n = 20;
        let a = random_matrix(n, 3, 84);
        let y = standard_normal_vector(n, &mut rng_for(84, 1));
        let prior = SpikeSlabPrior::new(0.5, 1.0).unwrap();
        let config = McmcConfig {
            burnin: 100,
            recorded: 500,
            seed: 9,
            rw_step: 0.05,
            batch_length: 50,
        };
        let a1 = gibbs_spike_slab(&y, &a, &prior, &config, None).unwrap();
        let a2 = gibbs_spike_slab(&y, &a, &prior, &config, None).unwrap();
        assert_eq!(a1.inclusion_probs, a2.inclusion_probs);
        assert_eq!(a1.sigma2_trace, a2.sigma2_trace);
    }

    #[test]
    fn batch_means_iid_matches_root_n() {
        let n = 100_000;
        let mut rng = rng_for(85, 0);
        let trace: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let se = batch_means_se(&trace, 316).unwrap();
        let want = (1.0 / n as f64).sqrt();
        assert!((se - want).abs() / want < 0.2, "se {se} want {want}");
    }

    #[test]
    fn batch_means_ar1_exceeds_iid_formula() {
        let n = 100_000;
        let phi = 0.9;
        let mut rng = rng_for(86, 0);
        let mut trace = Vec::with_capacity(n);
        let mut state = 0.0;
        for _ in 0..n {
            let e: f64 = StandardNormal.sample(&mut rng);
            state = phi * state + e;
            trace.push(state);
        }
        let se = batch_means_se(&trace, 316).unwrap();
        let mean = trace.iter().sum::<f64>() / n as f64;
        let sd = (trace.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).sqrt();
        let iid_se = sd / (n as f64).sqrt();
        // Asymptotic inflation for AR(1) is sqrt((1+phi)/(1-phi)) = 4.36.
        assert!(se / iid_se > 2.0, "ratio {}", se / iid_se);
    }

    #[test]
    fn batch_means_constant_trace_is_zero() {
        let trace = vec![1.5; 1000];
        let se = batch_means_se(&trace, 100).unwrap();
        assert_eq!(se, 0.0);
    }

    #[test]
    fn batch_means_rejects_short_trace() {
        assert!(matches!(
            batch_means_se(&[1.0, 2.0, 3.0], 2),
            Err(Error::TraceTooShort { .. })
        ));
    }

    #[test]
    fn mh_identity_link_matches_conjugate_answer() {
        // Fully Gaussian model: the sampler must reproduce the closed form.
        let n = 30;
        let p = 2;
        let x = random_matrix(n, p, 87);
        let features = DMatrix::from_column_slice(n, 1, x.column(0).as_slice());
        let mut gp_config = GpConfig::new(features);
        gp_config.link = crate::gp_nuisance::Link::Identity;
        let beta_prior = GaussianPrior::isotropic(p, 16.0).unwrap();
        let sigma2 = 1.0;
        let truth = DVector::from_column_slice(&[2.0, -1.0]);
        let kernel = kernel_matrix(&gp_config.features, gp_config.lengthscale_sq);
        let chol_k = Cholesky::new(kernel + DMatrix::<f64>::identity(n, n) * 1e-8).unwrap();
        let f0 = chol_k.l() * standard_normal_vector(n, &mut rng_for(88, 0));
        let y = &x * &truth + &f0 + standard_normal_vector(n, &mut rng_for(88, 1));

        let config = McmcConfig {
            burnin: 3_000,
            recorded: 30_000,
            seed: 5,
            rw_step: 0.28,
            batch_length: 300,
        };
        let out = mh_gp(&y, &x, &gp_config, &config, &beta_prior, sigma2).unwrap();
        assert!(
            out.acceptance_rate > 0.1 && out.acceptance_rate < 0.6,
            "acceptance {}",
            out.acceptance_rate
        );

        // Closed form: y ~ N(X beta, sigma2 I + K), conjugate Gaussian update.
        let v = Cholesky::new(
            DMatrix::<f64>::identity(n, n) * sigma2
                + kernel_matrix(&gp_config.features, gp_config.lengthscale_sq)
                + DMatrix::<f64>::identity(n, n) * gp_config.jitter,
        )
        .unwrap();
        let prec = x.transpose() * v.solve(&x) + DMatrix::<f64>::identity(p, p) / 16.0;
        let want = Cholesky::new(prec).unwrap().solve(&(x.transpose() * v.solve(&y)));
        for j in 0..p {
            let tol = 3.0 * out.beta_mean_se[j] + 1e-3;
            assert!(
                (out.beta_mean[j] - want[j]).abs() < tol,
                "coord {j}: mh {} want {} se {}",
                out.beta_mean[j],
                want[j],
                out.beta_mean_se[j]
            );
        }
    }
}
