//! Exact Bayesian computation for small spike-and-slab (or g-prior) Gaussian
//! linear models by enumeration over support patterns.
//!
//! Enumeration is the workhorse in three places: the final low-dimensional
//! posterior over the parameter of interest, the exact 2^q treatment of the
//! nuisance submodel at test scale, and the brute-force selection oracle the
//! approximate solvers are validated against.
//!
//! Subsets are enumerated in plain counting order with a fresh Cholesky per
//! subset. Gray-code rank-one updates would be faster but the dimension is
//! capped, so clarity wins.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;

use crate::linalg::{self, CholDyn, SeededRng};
use crate::priors::{GPrior, SpikeSlabPrior};
use crate::{Error, Result};

/// Enumeration guard for the low-dimensional posterior.
pub const MAX_ENUM_P: usize = 25;
/// Enumeration guard for the brute-force selection oracle.
pub const MAX_ORACLE_R: usize = 15;

/// Estimated mean and covariance of the projected nuisance given the
/// complement part of the rotated data.
#[derive(Clone, Debug)]
pub struct NuisanceSummary {
    pub mu_hat: DVector<f64>,
    pub sigma_hat: DMatrix<f64>,
}

impl NuisanceSummary {
    pub fn new(mu_hat: DVector<f64>, sigma_hat: DMatrix<f64>) -> Result<Self> {
        let p = mu_hat.len();
        if sigma_hat.nrows() != p || sigma_hat.ncols() != p {
            return Err(Error::DimensionMismatch(format!(
                "mu_hat has length {} but Sigma_hat is {}x{}",
                p,
                sigma_hat.nrows(),
                sigma_hat.ncols()
            )));
        }
        let asym = (&sigma_hat - sigma_hat.transpose()).amax();
        if asym > 1e-10 {
            return Err(Error::SingularCovariance(format!(
                "Sigma_hat asymmetric: max deviation {asym:.3e}"
            )));
        }
        if p > 0 {
            let min_eig = linalg::symmetrize(&sigma_hat).symmetric_eigen().eigenvalues.min();
            if min_eig < -1e-8 {
                return Err(Error::SingularCovariance(format!(
                    "Sigma_hat has eigenvalue {min_eig:.3e}"
                )));
            }
        }
        Ok(NuisanceSummary { mu_hat, sigma_hat })
    }

    /// The summary that ignores the nuisance entirely.
    pub fn zero(p: usize) -> Self {
        NuisanceSummary {
            mu_hat: DVector::zeros(p),
            sigma_hat: DMatrix::zeros(p, p),
        }
    }

    pub fn p(&self) -> usize {
        self.mu_hat.len()
    }
}

/// One support pattern of a subset-mixture posterior: the active index set,
/// its normalized log weight, and the Gaussian conditional on the active
/// coordinates.
#[derive(Clone, Debug)]
pub struct ModelComponent {
    pub mask: u32,
    pub log_weight: f64,
    pub cond_mean: DVector<f64>,
    pub cond_cov: DMatrix<f64>,
}

impl ModelComponent {
    pub fn indices(&self) -> Vec<usize> {
        mask_indices(self.mask)
    }
}

pub fn mask_indices(mask: u32) -> Vec<usize> {
    (0..32).filter(|j| mask >> j & 1 == 1).collect()
}

/// Exact mixture-of-Gaussians posterior over a sparse coefficient vector,
/// represented by per-model log weights and Gaussian conditionals.
///
/// The enumeration constructors produce exactly one component per subset of
/// {0..p-1} with weights normalized to sum to one. Other builders (nested
/// nuisance mixtures in the diagnostics) may carry several components per
/// support pattern; all methods handle that.
#[derive(Clone, Debug)]
pub struct BetaPosterior {
    pub models: Vec<ModelComponent>,
    pub p: usize,
}

impl BetaPosterior {
    /// Normalize log weights in place so logsumexp(weights) = 0.
    fn normalize(mut self) -> Self {
        let lse = linalg::log_sum_exp(&self.models.iter().map(|m| m.log_weight).collect::<Vec<_>>());
        for m in &mut self.models {
            m.log_weight -= lse;
        }
        self
    }

    /// A single-component posterior with every coordinate active. Used for
    /// the conjugate Gaussian-prior update.
    pub fn single_gaussian(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        let p = mean.len();
        BetaPosterior {
            models: vec![ModelComponent {
                mask: (1u32 << p) - 1,
                log_weight: 0.0,
                cond_mean: mean,
                cond_cov: cov,
            }],
            p,
        }
    }

    /// Marginal inclusion probability per coordinate:
    /// entry j = sum of weights of models containing j.
    pub fn inclusion_probs(&self) -> DVector<f64> {
        let mut probs = DVector::<f64>::zeros(self.p);
        for m in &self.models {
            let w = m.log_weight.exp();
            for j in 0..self.p {
                if m.mask >> j & 1 == 1 {
                    probs[j] += w;
                }
            }
        }
        probs.map(|v| v.clamp(0.0, 1.0))
    }

    /// Posterior log odds of inclusion per coordinate, clamped away from
    /// infinities so they survive serialization.
    pub fn inclusion_log_odds(&self) -> DVector<f64> {
        self.inclusion_probs().map(|p| {
            let p = p.clamp(1e-12, 1.0 - 1e-12);
            (p / (1.0 - p)).ln()
        })
    }

    /// Mixture mean and covariance of the embedded p-dimensional vector.
    pub fn moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        let mut mean = DVector::zeros(self.p);
        let mut second = DMatrix::zeros(self.p, self.p);
        for m in &self.models {
            let w = m.log_weight.exp();
            let idx = m.indices();
            for (a, &ja) in idx.iter().enumerate() {
                mean[ja] += w * m.cond_mean[a];
                for (b, &jb) in idx.iter().enumerate() {
                    second[(ja, jb)] +=
                        w * (m.cond_cov[(a, b)] + m.cond_mean[a] * m.cond_mean[b]);
                }
            }
        }
        let cov = &second - &mean * mean.transpose();
        (mean, cov)
    }

    pub fn mean(&self) -> DVector<f64> {
        self.moments().0
    }

    /// Per-coordinate posterior standard deviations.
    pub fn post_sd(&self) -> DVector<f64> {
        let (_, cov) = self.moments();
        cov.diagonal().map(|v| v.max(0.0).sqrt())
    }

    /// Push the embedded vector through the linear map `t` (d x p), giving
    /// the mixture law of `t * beta`.
    pub fn pushforward(&self, t: &DMatrix<f64>) -> GaussianMixture {
        let d = t.nrows();
        let comps = self
            .models
            .iter()
            .map(|m| {
                let idx = m.indices();
                let t_sub = t.select_columns(idx.iter());
                let mean = &t_sub * &m.cond_mean;
                let cov = &t_sub * &m.cond_cov * t_sub.transpose();
                (m.log_weight, mean, cov)
            })
            .collect();
        GaussianMixture::new(d, comps)
    }

    /// Draw a support pattern and the active coordinate values.
    pub fn sample_support(&self, rng: &mut SeededRng) -> (u32, DVector<f64>) {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut pick = self.models.len() - 1;
        for (i, m) in self.models.iter().enumerate() {
            acc += m.log_weight.exp();
            if u <= acc {
                pick = i;
                break;
            }
        }
        let m = &self.models[pick];
        if m.cond_mean.is_empty() {
            return (m.mask, DVector::zeros(0));
        }
        let chol = Cholesky::new(linalg::symmetrize(&m.cond_cov))
            .expect("conditional covariance must be positive definite");
        (m.mask, linalg::sample_gaussian(&m.cond_mean, &chol, rng))
    }

    /// Log density at a support point, with respect to the natural dominating
    /// measure (counting measure on patterns times Lebesgue on the active
    /// coordinates). Mixes over all components sharing the pattern.
    pub fn log_density_support(&self, mask: u32, value: &DVector<f64>) -> f64 {
        let terms: Vec<f64> = self
            .models
            .iter()
            .filter(|m| m.mask == mask)
            .map(|m| {
                if m.cond_mean.is_empty() {
                    m.log_weight
                } else {
                    let chol = Cholesky::new(linalg::symmetrize(&m.cond_cov))
                        .expect("conditional covariance must be positive definite");
                    m.log_weight + linalg::log_gaussian(value, &m.cond_mean, &chol)
                }
            })
            .collect();
        linalg::log_sum_exp(&terms)
    }

    /// Marginal density of coordinate j at the grid points, continuous part
    /// only. The atom at zero has mass 1 - inclusion_probs()[j].
    pub fn marginal_density(&self, j: usize, grid: &[f64]) -> Vec<f64> {
        let mut dens = vec![0.0; grid.len()];
        for m in &self.models {
            if m.mask >> j & 1 == 0 {
                continue;
            }
            let a = m.indices().iter().position(|&i| i == j).unwrap();
            let mu = m.cond_mean[a];
            let var = m.cond_cov[(a, a)].max(1e-300);
            let w = m.log_weight.exp();
            for (g, &x) in grid.iter().enumerate() {
                dens[g] += w * (-0.5 * (x - mu) * (x - mu) / var).exp()
                    / (2.0 * std::f64::consts::PI * var).sqrt();
            }
        }
        dens
    }
}

/// A mixture of full-support Gaussians, the law of linear images of a
/// subset-mixture posterior.
#[derive(Clone, Debug)]
pub struct GaussianMixture {
    pub dim: usize,
    log_weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covs: Vec<DMatrix<f64>>,
    chols: Vec<Option<CholDyn>>,
}

impl GaussianMixture {
    pub fn new(dim: usize, comps: Vec<(f64, DVector<f64>, DMatrix<f64>)>) -> Self {
        let lse = linalg::log_sum_exp(&comps.iter().map(|c| c.0).collect::<Vec<_>>());
        let mut log_weights = Vec::with_capacity(comps.len());
        let mut means = Vec::with_capacity(comps.len());
        let mut covs = Vec::with_capacity(comps.len());
        let mut chols = Vec::with_capacity(comps.len());
        for (lw, mean, cov) in comps {
            log_weights.push(lw - lse);
            chols.push(Cholesky::new(linalg::symmetrize(&cov)));
            means.push(mean);
            covs.push(cov);
        }
        GaussianMixture {
            dim,
            log_weights,
            means,
            covs,
            chols,
        }
    }

    pub fn single(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        let dim = mean.len();
        GaussianMixture::new(dim, vec![(0.0, mean, cov)])
    }

    pub fn n_components(&self) -> usize {
        self.log_weights.len()
    }

    /// Borrow the normalized log weights, means, and covariances.
    pub fn parts(&self) -> (&[f64], &[DVector<f64>], &[DMatrix<f64>]) {
        (&self.log_weights, &self.means, &self.covs)
    }

    /// The law of `t * x` for a linear map `t`.
    pub fn pushforward_linear(&self, t: &DMatrix<f64>) -> GaussianMixture {
        let comps = (0..self.n_components())
            .map(|i| {
                (
                    self.log_weights[i],
                    t * &self.means[i],
                    t * &self.covs[i] * t.transpose(),
                )
            })
            .collect();
        GaussianMixture::new(t.nrows(), comps)
    }

    /// Mixture mean and covariance.
    pub fn moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        let mut mean = DVector::zeros(self.dim);
        let mut second = DMatrix::zeros(self.dim, self.dim);
        for i in 0..self.n_components() {
            let w = self.log_weights[i].exp();
            mean += w * &self.means[i];
            second += w * (&self.covs[i] + &self.means[i] * self.means[i].transpose());
        }
        let cov = second - &mean * mean.transpose();
        (mean, cov)
    }

    /// The law of x + e with e ~ N(0, s2 I), i.e. every component covariance
    /// inflated by s2 I. Components become strictly positive definite.
    pub fn convolve_iso(&self, s2: f64) -> Result<GaussianMixture> {
        if !(s2 > 0.0) {
            return Err(Error::InvalidVariance(format!("convolution variance {s2}")));
        }
        let eye = DMatrix::<f64>::identity(self.dim, self.dim);
        let comps = (0..self.n_components())
            .map(|i| {
                (
                    self.log_weights[i],
                    self.means[i].clone(),
                    &self.covs[i] + &eye * s2,
                )
            })
            .collect();
        let out = GaussianMixture::new(self.dim, comps);
        if out.chols.iter().any(|c| c.is_none()) {
            return Err(Error::SingularCovariance(
                "mixture component not positive definite after convolution".into(),
            ));
        }
        Ok(out)
    }

    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        let terms: Vec<f64> = (0..self.n_components())
            .map(|i| {
                let chol = self.chols[i]
                    .as_ref()
                    .expect("component covariance not positive definite; convolve first");
                self.log_weights[i] + linalg::log_gaussian(x, &self.means[i], chol)
            })
            .collect();
        linalg::log_sum_exp(&terms)
    }

    pub fn sample(&self, rng: &mut SeededRng) -> DVector<f64> {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut pick = self.n_components() - 1;
        for i in 0..self.n_components() {
            acc += self.log_weights[i].exp();
            if u <= acc {
                pick = i;
                break;
            }
        }
        let chol = self.chols[pick]
            .as_ref()
            .expect("component covariance not positive definite; convolve first");
        linalg::sample_gaussian(&self.means[pick], chol, rng)
    }
}

/// Shared enumeration core. Computes, for every subset of the w columns, the
/// marginal log likelihood of `resid ~ N(W_g b_g, C)` with `b_g ~ N(0, P_g)`
/// plus the Gaussian conditional of `b_g`, where `P_g` is the per-subset
/// prior covariance (spike-and-slab slab or g-prior).
struct EnumWorkspace {
    /// W^T C^{-1} W
    whitened_gram: DMatrix<f64>,
    /// W^T C^{-1} resid
    u: DVector<f64>,
    /// resid^T C^{-1} resid
    base_quad: f64,
    /// log det C
    log_det_c: f64,
}

impl EnumWorkspace {
    fn new(resid: &DVector<f64>, w: &DMatrix<f64>, chol_c: &CholDyn) -> Self {
        let ci_w = chol_c.solve(w);
        let ci_r = chol_c.solve(resid);
        EnumWorkspace {
            whitened_gram: w.transpose() * &ci_w,
            u: w.transpose() * &ci_r,
            base_quad: resid.dot(&ci_r),
            log_det_c: 2.0
                * chol_c
                    .l_dirty()
                    .diagonal()
                    .iter()
                    .map(|v| v.ln())
                    .sum::<f64>(),
        }
    }

    fn submatrix(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(idx.len(), idx.len(), |a, b| m[(idx[a], idx[b])])
    }

    /// Marginal log likelihood and conditional for one subset given the prior
    /// precision matrix on the active coordinates.
    ///
    /// log N(resid | 0, C + W_g P_g W_g^T)
    ///   = -dim/2 log 2pi - 1/2 [log det C + log det P_g + log det M]
    ///     - 1/2 [base_quad - u_g^T M^{-1} u_g],
    /// with M = P_g^{-1} + W_g^T C^{-1} W_g the conditional precision.
    fn subset(
        &self,
        idx: &[usize],
        prior_prec: &DMatrix<f64>,
        log_det_prior_cov: f64,
        obs_dim: usize,
    ) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        let k = idx.len();
        let two_pi_term = -0.5 * obs_dim as f64 * (2.0 * std::f64::consts::PI).ln();
        if k == 0 {
            let ll = two_pi_term - 0.5 * (self.log_det_c + self.base_quad);
            return Ok((ll, DVector::zeros(0), DMatrix::zeros(0, 0)));
        }
        let m = Self::submatrix(&self.whitened_gram, idx) + prior_prec;
        let chol_m = Cholesky::new(linalg::symmetrize(&m)).ok_or_else(|| {
            Error::SingularCovariance("conditional precision not positive definite".into())
        })?;
        let u_g = DVector::from_fn(k, |a, _| self.u[idx[a]]);
        let cond_mean = chol_m.solve(&u_g);
        let cond_cov = chol_m.inverse();
        let log_det_m = 2.0
            * chol_m
                .l_dirty()
                .diagonal()
                .iter()
                .map(|v| v.ln())
                .sum::<f64>();
        let ll = two_pi_term
            - 0.5 * (self.log_det_c + log_det_prior_cov + log_det_m)
            - 0.5 * (self.base_quad - u_g.dot(&cond_mean));
        Ok((ll, cond_mean, cond_cov))
    }
}

fn regularized_noise_cov(summary: &NuisanceSummary, sigma2: f64) -> DMatrix<f64> {
    let p = summary.p();
    // Upstream estimators return approximate covariances; symmetrize and
    // floor the spectrum at zero before adding the observation noise.
    linalg::floor_eigenvalues(&summary.sigma_hat, 0.0) + DMatrix::<f64>::identity(p, p) * sigma2
}

/// Exact posterior over the parameter of interest under a spike-and-slab
/// prior, given the rotated data and the nuisance summary:
/// weight(g) proportional to
/// lambda^|g| (1-lambda)^(p-|g|) N(ry - mu_hat | 0, C + psi W_g W_g^T)
/// with C = sigma2 I + Sigma_hat.
pub fn beta_posterior(
    ry: &DVector<f64>,
    rx: &DMatrix<f64>,
    summary: &NuisanceSummary,
    sigma2: f64,
    prior: &SpikeSlabPrior,
) -> Result<BetaPosterior> {
    let p = ry.len();
    if p > MAX_ENUM_P {
        return Err(Error::TooManyVariables { n: p, max: MAX_ENUM_P });
    }
    if rx.nrows() != p || rx.ncols() != p || summary.p() != p {
        return Err(Error::DimensionMismatch(format!(
            "ry has length {p} but rx is {}x{} and summary has p = {}",
            rx.nrows(),
            rx.ncols(),
            summary.p()
        )));
    }
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidVariance(format!("sigma2 = {sigma2}")));
    }

    let c = regularized_noise_cov(summary, sigma2);
    let chol_c = Cholesky::new(linalg::symmetrize(&c))
        .ok_or_else(|| Error::SingularCovariance("sigma2 I + Sigma_hat not positive definite".into()))?;
    let resid = ry - &summary.mu_hat;
    let ws = EnumWorkspace::new(&resid, rx, &chol_c);

    let log_lambda = prior.lambda.ln();
    let log_one_minus = (-prior.lambda).ln_1p();
    let mut models = Vec::with_capacity(1 << p);
    for mask in 0u32..(1 << p) {
        let idx = mask_indices(mask);
        let k = idx.len();
        let prior_prec = DMatrix::<f64>::identity(k, k) / prior.psi;
        let log_det_prior = k as f64 * prior.psi.ln();
        let (ll, cond_mean, cond_cov) = ws.subset(&idx, &prior_prec, log_det_prior, p)?;
        models.push(ModelComponent {
            mask,
            log_weight: k as f64 * log_lambda + (p - k) as f64 * log_one_minus + ll,
            cond_mean,
            cond_cov,
        });
    }
    Ok(BetaPosterior { models, p }.normalize())
}

/// Variant of [`beta_posterior`] with the Zellner prior
/// b_g ~ N(0, sigma2 g_n (X_g^T X_g)^{-1}) and a uniform prior over subsets.
/// The Gram matrix of the rotated design equals that of the original design.
pub fn beta_posterior_gprior(
    ry: &DVector<f64>,
    rx: &DMatrix<f64>,
    summary: &NuisanceSummary,
    sigma2: f64,
    prior: &GPrior,
) -> Result<BetaPosterior> {
    let p = ry.len();
    if p > MAX_ENUM_P {
        return Err(Error::TooManyVariables { n: p, max: MAX_ENUM_P });
    }
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidVariance(format!("sigma2 = {sigma2}")));
    }

    let c = regularized_noise_cov(summary, sigma2);
    let chol_c = Cholesky::new(linalg::symmetrize(&c))
        .ok_or_else(|| Error::SingularCovariance("sigma2 I + Sigma_hat not positive definite".into()))?;
    let resid = ry - &summary.mu_hat;
    let ws = EnumWorkspace::new(&resid, rx, &chol_c);
    let gram = rx.transpose() * rx;

    let mut models = Vec::with_capacity(1 << p);
    for mask in 0u32..(1 << p) {
        let idx = mask_indices(mask);
        let k = idx.len();
        let gram_sub = EnumWorkspace::submatrix(&gram, &idx);
        let (prior_prec, log_det_prior) = if k == 0 {
            (DMatrix::zeros(0, 0), 0.0)
        } else {
            let chol_g = Cholesky::new(linalg::symmetrize(&gram_sub)).ok_or(Error::RankDeficient {
                smallest: 0.0,
                tol: 0.0,
            })?;
            let log_det_gram = 2.0
                * chol_g
                    .l_dirty()
                    .diagonal()
                    .iter()
                    .map(|v| v.ln())
                    .sum::<f64>();
            (
                gram_sub / (sigma2 * prior.g_n),
                k as f64 * (sigma2 * prior.g_n).ln() - log_det_gram,
            )
        };
        let (ll, cond_mean, cond_cov) = ws.subset(&idx, &prior_prec, log_det_prior, p)?;
        models.push(ModelComponent {
            mask,
            log_weight: ll, // uniform model prior: constant cancels on normalizing
            cond_mean,
            cond_cov,
        });
    }
    Ok(BetaPosterior { models, p }.normalize())
}

/// Free-function form of the marginal inclusion probabilities.
pub fn inclusion_probs(post: &BetaPosterior) -> DVector<f64> {
    post.inclusion_probs()
}

/// Exact posterior of a spike-and-slab linear model `y ~ N(A alpha, sigma2 I)`
/// by full enumeration. The observation dimension may be large; each subset
/// costs O(|g|^3) via the precomputed Gram matrix.
pub fn spike_slab_linear_posterior(
    y: &DVector<f64>,
    a: &DMatrix<f64>,
    prior: &SpikeSlabPrior,
    sigma2: f64,
) -> Result<BetaPosterior> {
    let m = y.len();
    let r = a.ncols();
    if a.nrows() != m {
        return Err(Error::DimensionMismatch(format!(
            "A has {} rows but y has length {}",
            a.nrows(),
            m
        )));
    }
    if r > MAX_ORACLE_R {
        return Err(Error::TooManyVariables { n: r, max: MAX_ORACLE_R });
    }
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidVariance(format!("sigma2 = {sigma2}")));
    }

    let gram = a.transpose() * a;
    let b = a.transpose() * y;
    let yty = y.norm_squared();
    let log_lambda = prior.lambda.ln();
    let log_one_minus = (-prior.lambda).ln_1p();
    let two_pi_term = -0.5 * m as f64 * (2.0 * std::f64::consts::PI).ln();

    let mut models = Vec::with_capacity(1 << r);
    for mask in 0u32..(1 << r) {
        let idx = mask_indices(mask);
        let k = idx.len();
        let (ll, cond_mean, cond_cov) = if k == 0 {
            let ll = two_pi_term - 0.5 * (m as f64 * sigma2.ln() + yty / sigma2);
            (ll, DVector::zeros(0), DMatrix::zeros(0, 0))
        } else {
            // M = sigma2 I + psi G_gg; conditional covariance is psi sigma2 M^{-1}.
            let m_mat = EnumWorkspace::submatrix(&gram, &idx) * prior.psi
                + DMatrix::<f64>::identity(k, k) * sigma2;
            let chol_m = Cholesky::new(linalg::symmetrize(&m_mat)).ok_or_else(|| {
                Error::SingularCovariance("subset marginal covariance not positive definite".into())
            })?;
            let b_g = DVector::from_fn(k, |i, _| b[idx[i]]);
            let mi_b = chol_m.solve(&b_g);
            let log_det_m = 2.0
                * chol_m
                    .l_dirty()
                    .diagonal()
                    .iter()
                    .map(|v| v.ln())
                    .sum::<f64>();
            let log_det = (m - k) as f64 * sigma2.ln() + log_det_m;
            let quad = (yty - prior.psi * b_g.dot(&mi_b)) / sigma2;
            let ll = two_pi_term - 0.5 * (log_det + quad);
            let cond_mean = &mi_b * prior.psi;
            let cond_cov = chol_m.inverse() * (prior.psi * sigma2);
            (ll, cond_mean, cond_cov)
        };
        models.push(ModelComponent {
            mask,
            log_weight: k as f64 * log_lambda + (r - k) as f64 * log_one_minus + ll,
            cond_mean,
            cond_cov,
        });
    }
    Ok(BetaPosterior { models, p: r }.normalize())
}

/// Exact marginal inclusion probabilities by full 2^r enumeration of the
/// marginal likelihoods N(y | 0, sigma2 I + psi A_g A_g^T).
pub fn exact_selection_oracle(
    y: &DVector<f64>,
    a: &DMatrix<f64>,
    prior: &SpikeSlabPrior,
    sigma2: f64,
) -> Result<DVector<f64>> {
    Ok(spike_slab_linear_posterior(y, a, prior, sigma2)?.inclusion_probs())
}

/// Log marginal likelihood of `y` under the g-prior model with active design
/// `x_gamma`: beta_g ~ N(0, sigma2 g_n (X_g^T X_g)^{-1}). The empty model
/// (zero columns) gives log N(y | 0, sigma2 I).
///
/// Marginal covariance is sigma2 (I + g_n P_g) with P_g the projection onto
/// col(X_g), so
/// log m = -n/2 log(2 pi sigma2) - k/2 log(1+g_n)
///         - [y'y - g_n/(1+g_n) y'P_g y] / (2 sigma2).
pub fn gprior_log_marginal(
    y: &DVector<f64>,
    x_gamma: &DMatrix<f64>,
    g_n: f64,
    sigma2: f64,
) -> Result<f64> {
    let n = y.len();
    let k = x_gamma.ncols();
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidVariance(format!("sigma2 = {sigma2}")));
    }
    if !(g_n > 0.0) {
        return Err(Error::Config(format!("g_n must be positive, got {g_n}")));
    }
    let yty = y.norm_squared();
    let base = -0.5 * n as f64 * (2.0 * std::f64::consts::PI * sigma2).ln();
    if k == 0 {
        return Ok(base - 0.5 * yty / sigma2);
    }
    if x_gamma.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "X_gamma has {} rows but y has length {}",
            x_gamma.nrows(),
            n
        )));
    }
    let sv = linalg::singular_values(x_gamma);
    let tol = crate::rotation::RANK_RTOL * sv.max() * n.max(k) as f64;
    if !(sv.min() > tol) {
        return Err(Error::RankDeficient {
            smallest: sv.min(),
            tol,
        });
    }
    let gram = x_gamma.transpose() * x_gamma;
    let xty = x_gamma.transpose() * y;
    let chol = Cholesky::new(linalg::symmetrize(&gram))
        .ok_or_else(|| Error::SingularCovariance("X_gamma Gram not positive definite".into()))?;
    let y_proj = xty.dot(&chol.solve(&xty));
    let shrink = g_n / (1.0 + g_n);
    Ok(base - 0.5 * k as f64 * (1.0 + g_n).ln() - 0.5 * (yty - shrink * y_proj) / sigma2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{rng_for, standard_normal_vector};
    use rand_distr::Distribution;

    fn random_matrix(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rng_for(seed, 0);
        DMatrix::from_fn(n, p, |_, _| rand_distr::StandardNormal.sample(&mut rng))
    }

    #[test]
    fn weights_normalize() {
        let rx = random_matrix(3, 3, 1);
        let ry = standard_normal_vector(3, &mut rng_for(1, 1));
        let prior = SpikeSlabPrior::new(0.4, 1.0).unwrap();
        let post = beta_posterior(&ry, &rx, &NuisanceSummary::zero(3), 1.0, &prior).unwrap();
        assert_eq!(post.models.len(), 8);
        let lse = linalg::log_sum_exp(
            &post.models.iter().map(|m| m.log_weight).collect::<Vec<_>>(),
        );
        assert!(lse.abs() < 1e-10);
        let probs = post.inclusion_probs();
        assert!(probs.iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn p1_zero_observation_log_odds() {
        // p = 1, mu = 0, Sigma = 0, RX = (1), Ry = (0), lambda = 1/2:
        // inclusion log odds = 0.5 log(sigma2 / (psi + sigma2)).
        let prior = SpikeSlabPrior::new(0.5, 1.3).unwrap();
        let sigma2 = 0.8;
        let post = beta_posterior(
            &DVector::from_element(1, 0.0),
            &DMatrix::from_element(1, 1, 1.0),
            &NuisanceSummary::zero(1),
            sigma2,
            &prior,
        )
        .unwrap();
        let pi = post.inclusion_probs()[0];
        let want = 0.5 * (sigma2 / (prior.psi + sigma2)).ln();
        let got = (pi / (1.0 - pi)).ln();
        assert!((got - want).abs() < 1e-10);
        assert!(pi < 0.5);
    }

    #[test]
    fn diffuse_summary_equals_inflated_noise() {
        let p = 2;
        let rx = random_matrix(p, p, 5);
        let ry = standard_normal_vector(p, &mut rng_for(5, 1));
        let prior = SpikeSlabPrior::new(0.3, 2.0).unwrap();
        let c = 0.7;
        let a = beta_posterior(
            &ry,
            &rx,
            &NuisanceSummary::new(DVector::zeros(p), DMatrix::identity(p, p) * c).unwrap(),
            1.0,
            &prior,
        )
        .unwrap();
        let b = beta_posterior(&ry, &rx, &NuisanceSummary::zero(p), 1.0 + c, &prior).unwrap();
        for (ma, mb) in a.models.iter().zip(b.models.iter()) {
            assert!((ma.log_weight - mb.log_weight).abs() < 1e-10);
            assert!((&ma.cond_mean - &mb.cond_mean).amax() < 1e-10);
            assert!((&ma.cond_cov - &mb.cond_cov).amax() < 1e-10);
        }
    }

    /// Importance-sampling oracle for the p = 2 case with a nonzero nuisance
    /// covariance: draw beta from the prior and weight by the Gaussian
    /// likelihood with covariance C.
    #[test]
    fn p2_inclusion_matches_monte_carlo() {
        let p = 2;
        let rx = DMatrix::from_row_slice(2, 2, &[1.4, 0.5, 0.0, 0.9]);
        let ry = DVector::from_column_slice(&[1.2, -0.4]);
        let sigma_hat = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.2, 0.4]);
        let mu_hat = DVector::from_column_slice(&[0.3, -0.1]);
        let summary = NuisanceSummary::new(mu_hat.clone(), sigma_hat.clone()).unwrap();
        let sigma2 = 0.6;
        let prior = SpikeSlabPrior::new(0.35, 1.2).unwrap();

        let post = beta_posterior(&ry, &rx, &summary, sigma2, &prior).unwrap();
        let probs = post.inclusion_probs();

        let c = sigma_hat + DMatrix::identity(p, p) * sigma2;
        let chol = Cholesky::new(c).unwrap();
        let resid = &ry - &mu_hat;
        let mut rng = rng_for(99, 0);
        let n_draws = 1_000_000usize;
        let mut wsum = 0.0;
        let mut wsum2 = 0.0;
        let mut hit = [0.0f64; 2];
        let mut hit2 = [0.0f64; 2];
        for _ in 0..n_draws {
            let beta = prior.sample_vector(p, &mut rng);
            let mean = &rx * &beta;
            let lw = linalg::log_gaussian(&resid, &mean, &chol);
            let w = (lw + 3.0).exp(); // constant shift, cancels in the ratio
            wsum += w;
            wsum2 += w * w;
            for j in 0..2 {
                if beta[j] != 0.0 {
                    hit[j] += w;
                    hit2[j] += w * w;
                }
            }
        }
        for j in 0..2 {
            let est = hit[j] / wsum;
            // Delta-method standard error for the self-normalized ratio.
            let var = (hit2[j] - 2.0 * est * hit2[j] + est * est * wsum2).max(0.0);
            let se = var.sqrt() / wsum;
            assert!(
                (probs[j] - est).abs() < 3.0 * se + 1e-4,
                "coord {j}: exact {} vs MC {est} (se {se})",
                probs[j]
            );
        }
    }

    #[test]
    fn single_model_inclusion() {
        let post = BetaPosterior {
            models: vec![ModelComponent {
                mask: 0b001,
                log_weight: 0.0,
                cond_mean: DVector::from_element(1, 2.0),
                cond_cov: DMatrix::from_element(1, 1, 0.5),
            }],
            p: 3,
        };
        let probs = post.inclusion_probs();
        assert_eq!(probs, DVector::from_column_slice(&[1.0, 0.0, 0.0]));
    }

    #[test]
    fn uniform_weights_give_half() {
        let mut models = Vec::new();
        for mask in 0u32..4 {
            let k = mask.count_ones() as usize;
            models.push(ModelComponent {
                mask,
                log_weight: -(4.0f64.ln()),
                cond_mean: DVector::zeros(k),
                cond_cov: DMatrix::identity(k, k),
            });
        }
        let post = BetaPosterior { models, p: 2 };
        let probs = post.inclusion_probs();
        assert!((probs[0] - 0.5).abs() < 1e-12);
        assert!((probs[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn oracle_orthogonal_columns_factorize() {
        // Orthogonal design: joint enumeration equals per-column closed form.
        let n = 8;
        let mut a = DMatrix::zeros(n, 2);
        a[(0, 0)] = 2.0;
        a[(1, 1)] = 1.5;
        let y = DVector::from_fn(n, |i, _| match i {
            0 => 1.0,
            1 => -2.0,
            _ => 0.3,
        });
        let prior = SpikeSlabPrior::new(0.3, 1.1).unwrap();
        let sigma2 = 0.7;
        let probs = exact_selection_oracle(&y, &a, &prior, sigma2).unwrap();
        for j in 0..2 {
            let col = a.column(j).into_owned();
            let single = exact_selection_oracle(&y, &DMatrix::from_columns(&[col]), &prior, sigma2)
                .unwrap()[0];
            assert!((probs[j] - single).abs() < 1e-10, "{} vs {single}", probs[j]);
        }
    }

    #[test]
    fn oracle_duplicated_column_symmetric() {
        let n = 10;
        let col = standard_normal_vector(n, &mut rng_for(7, 0));
        let a = DMatrix::from_columns(&[col.clone(), col.clone()]);
        let y = &col * 3.0 + standard_normal_vector(n, &mut rng_for(7, 1)) * 0.1;
        let prior = SpikeSlabPrior::new(0.5, 1.0).unwrap();
        let probs = exact_selection_oracle(&y, &a, &prior, 0.25).unwrap();
        assert!((probs[0] - probs[1]).abs() < 1e-10);
    }

    #[test]
    fn oracle_agrees_with_rotated_enumeration() {
        // r = 10 random instance: direct oracle equals beta_posterior applied
        // with p = r, no nuisance features, zero summary.
        let n = 24;
        let r = 10;
        let a = random_matrix(n, r, 13);
        let theta = {
            let mut t = DVector::zeros(r);
            t[1] = 2.0;
            t[6] = -1.5;
            t
        };
        let y = &a * theta + standard_normal_vector(n, &mut rng_for(13, 1));
        let prior = SpikeSlabPrior::new(0.25, 1.0).unwrap();
        let sigma2 = 1.0;
        let direct = exact_selection_oracle(&y, &a, &prior, sigma2).unwrap();

        let split = crate::rotation::compute_rotation(&a).unwrap();
        let data = crate::rotation::Dataset::new(y, a.clone(), None, Some(sigma2)).unwrap();
        let rot = crate::rotation::rotate(&data, &split).unwrap();
        let post =
            beta_posterior(&rot.ry, &rot.rx, &NuisanceSummary::zero(r), sigma2, &prior).unwrap();
        let via_rotation = post.inclusion_probs();
        assert!((direct - via_rotation).amax() < 1e-8);
    }

    #[test]
    fn too_many_variables_rejected() {
        let a = random_matrix(20, 16, 3);
        let y = standard_normal_vector(20, &mut rng_for(3, 1));
        let prior = SpikeSlabPrior::new(0.5, 1.0).unwrap();
        assert!(matches!(
            exact_selection_oracle(&y, &a, &prior, 1.0),
            Err(Error::TooManyVariables { .. })
        ));
    }

    #[test]
    fn gprior_collapses_to_null_as_g_vanishes() {
        let n = 6;
        let x = random_matrix(n, 2, 21);
        let y = standard_normal_vector(n, &mut rng_for(21, 1));
        let sigma2 = 0.9;
        let null = gprior_log_marginal(&y, &DMatrix::zeros(n, 0), 1.0, sigma2).unwrap();
        let tiny = gprior_log_marginal(&y, &x, 1e-12, sigma2).unwrap();
        assert!((null - tiny).abs() < 1e-6, "{null} vs {tiny}");
    }

    #[test]
    fn gprior_matches_quadrature() {
        // n = 5, one active column: integrate the likelihood against the
        // scalar g-prior by adaptive quadrature.
        let n = 5;
        let x = DMatrix::from_column_slice(n, 1, &[0.8, -0.4, 1.1, 0.2, -0.9]);
        let y = DVector::from_column_slice(&[1.0, -0.2, 1.4, 0.5, -1.0]);
        let g_n = 7.0;
        let sigma2 = 0.5;
        let got = gprior_log_marginal(&y, &x, g_n, sigma2).unwrap();

        let xtx = x.norm_squared();
        let prior_var = sigma2 * g_n / xtx;
        let f = |b: f64| {
            let mean = x.column(0).into_owned() * b;
            let ll = crate::linalg::log_gaussian_iso(&y, &mean, sigma2);
            let lp = -0.5 * ((2.0 * std::f64::consts::PI * prior_var).ln() + b * b / prior_var);
            (ll + lp).exp()
        };
        // Simple composite Simpson over a wide bracket.
        let (lo, hi) = (-40.0 * prior_var.sqrt(), 40.0 * prior_var.sqrt());
        let m = 40_001usize;
        let h = (hi - lo) / (m - 1) as f64;
        let mut acc = 0.0;
        for i in 0..m {
            let w = if i == 0 || i == m - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += w * f(lo + i as f64 * h);
        }
        let integral = acc * h / 3.0;
        assert!((got - integral.ln()).abs() < 1e-6, "{got} vs {}", integral.ln());
    }

    #[test]
    fn gprior_scaling_identity() {
        let n = 7;
        let x = random_matrix(n, 2, 31);
        let y = standard_normal_vector(n, &mut rng_for(31, 1));
        let g_n = 11.0;
        let sigma2 = 0.8;
        let c = 2.5;
        let base = gprior_log_marginal(&y, &x, g_n, sigma2).unwrap();
        let scaled = gprior_log_marginal(&(&y * c), &x, g_n, sigma2 * c * c).unwrap();
        assert!((scaled - (base - n as f64 * c.ln())).abs() < 1e-8);
    }

    #[test]
    fn gprior_rank_deficient_rejected() {
        let n = 6;
        let col = standard_normal_vector(n, &mut rng_for(8, 0));
        let x = DMatrix::from_columns(&[col.clone(), col * 2.0]);
        let y = standard_normal_vector(n, &mut rng_for(8, 1));
        assert!(matches!(
            gprior_log_marginal(&y, &x, 5.0, 1.0),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn mixture_moments_match_sampling() {
        let post = spike_slab_linear_posterior(
            &standard_normal_vector(12, &mut rng_for(41, 0)),
            &random_matrix(12, 3, 41),
            &SpikeSlabPrior::new(0.4, 1.5).unwrap(),
            0.8,
        )
        .unwrap();
        let (mean, cov) = post.moments();
        let mut rng = rng_for(42, 0);
        let n_draws = 200_000;
        let mut s1 = DVector::zeros(3);
        let mut s2 = DMatrix::zeros(3, 3);
        for _ in 0..n_draws {
            let (mask, val) = post.sample_support(&mut rng);
            let mut full = DVector::zeros(3);
            for (a, j) in mask_indices(mask).into_iter().enumerate() {
                full[j] = val[a];
            }
            s1 += &full;
            s2 += &full * full.transpose();
        }
        let emp_mean = s1 / n_draws as f64;
        let emp_cov = s2 / n_draws as f64 - &emp_mean * emp_mean.transpose();
        assert!((&mean - &emp_mean).amax() < 0.02);
        assert!((&cov - &emp_cov).amax() < 0.05);
    }

    #[test]
    fn gaussian_mixture_moments_closed_form() {
        // Equal-weight scalar mixture: mean and variance have closed forms.
        let gm = GaussianMixture::new(
            1,
            vec![
                (0.0, DVector::from_element(1, -1.0), DMatrix::from_element(1, 1, 0.5)),
                (0.0, DVector::from_element(1, 2.0), DMatrix::from_element(1, 1, 1.5)),
            ],
        );
        let (mean, cov) = gm.moments();
        assert!((mean[0] - 0.5).abs() < 1e-12);
        let want_var = 0.5 * (0.5 + 1.0) + 0.5 * (1.5 + 4.0) - 0.25;
        assert!((cov[(0, 0)] - want_var).abs() < 1e-12);

        // Sampling and density evaluation agree with the components.
        let mut rng = rng_for(5, 5);
        let x = gm.sample(&mut rng);
        let by_hand = {
            let d = |mu: f64, v: f64| {
                (-0.5 * (x[0] - mu) * (x[0] - mu) / v).exp()
                    / (2.0 * std::f64::consts::PI * v).sqrt()
            };
            (0.5 * d(-1.0, 0.5) + 0.5 * d(2.0, 1.5)).ln()
        };
        assert!((gm.log_density(&x) - by_hand).abs() < 1e-12);
    }
}
