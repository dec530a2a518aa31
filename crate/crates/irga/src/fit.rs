//! End-to-end algorithm and the variable-selection driver.
//!
//! A fit proceeds in three steps: rotate the data (step 1), estimate the mean
//! and covariance of the projected nuisance given the complement part of the
//! rotated data (step 2, pluggable strategy), and solve the remaining
//! p-dimensional model exactly (step 3). The selection driver splits a
//! design into consecutive blocks, runs the fit per block with the remaining
//! columns as nuisance features, and assembles all marginal inclusion
//! probabilities; blocks run in parallel and the result does not depend on
//! the worker count.

use std::time::{Duration, Instant};

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;

use crate::exact_posterior::{
    beta_posterior, beta_posterior_gprior, spike_slab_linear_posterior, BetaPosterior,
    NuisanceSummary,
};
use crate::gp_nuisance::{gp_laplace_fit, gp_nuisance_summary, GpConfig};
use crate::linalg;
use crate::priors::{GPrior, GaussianPrior, SpikeSlabPrior};
use crate::rotation::{compute_rotation, rotate, Dataset, RotatedData};
use crate::vamp::{vamp_fit, VampConfig};
use crate::{Error, Result};

/// Prior on the parameter of interest.
#[derive(Clone, Debug)]
pub enum BetaPrior {
    SpikeSlab(SpikeSlabPrior),
    Gaussian(GaussianPrior),
    GPrior(GPrior),
}

/// How step 2 turns the message passing output into a nuisance covariance.
#[derive(Clone, Debug, Default)]
pub enum CovarianceForm {
    /// Sigma_hat = RZ C2 RZ^T with C2 the full linear-side posterior
    /// covariance of the solver. On collinear designs the negative
    /// correlations between near-duplicate columns cancel in the projection;
    /// a diagonal surrogate misses that and overstates the covariance.
    #[default]
    Projected,
    /// Sigma_hat = RZ diag(variances) RZ^T using the per-coordinate denoiser
    /// variances only.
    Diagonal,
    /// Sigma_hat = tr(Lambda Psi_hat) I_p, the scalar form used by the
    /// accuracy diagnostics; Lambda is the known row covariance of Z.
    Scalar { lambda: DMatrix<f64> },
}

/// Pluggable strategy for the nuisance moments of step 2.
#[derive(Clone, Debug)]
pub enum NuisanceEstimator {
    /// Message passing on the complement submodel (requires Z).
    Vamp {
        alpha_prior: SpikeSlabPrior,
        config: VampConfig,
        covariance_form: CovarianceForm,
    },
    /// Exact moments of the projected nuisance from the full 2^q mixture
    /// (requires Z with q <= 15 and a known error variance).
    ExactEnumeration { alpha_prior: SpikeSlabPrior },
    /// Gauss-Newton Laplace fit of a Gaussian-process nuisance.
    GpLaplace(GpConfig),
    /// Exact Gaussian conditional moments for eta ~ N(0, covariance).
    GaussianExact { covariance: DMatrix<f64> },
    /// Ignore the nuisance: zero mean, zero covariance.
    Zero,
}

impl NuisanceEstimator {
    fn name(&self) -> &'static str {
        match self {
            NuisanceEstimator::Vamp { .. } => "vamp",
            NuisanceEstimator::ExactEnumeration { .. } => "exact",
            NuisanceEstimator::GpLaplace(_) => "gp",
            NuisanceEstimator::GaussianExact { .. } => "gaussian",
            NuisanceEstimator::Zero => "zero",
        }
    }
}

/// Wall-clock durations of the three steps.
#[derive(Clone, Copy, Debug, Default)]
pub struct StepTimings {
    pub rotation: Duration,
    pub nuisance: Duration,
    pub posterior: Duration,
}

/// Result of a fit.
#[derive(Clone, Debug)]
pub struct IrgaResult {
    pub posterior: BetaPosterior,
    pub summary: NuisanceSummary,
    pub sigma2_used: f64,
    pub sigma2_estimated: bool,
    pub timings: StepTimings,
}

/// A variable-selection problem for the block driver.
#[derive(Clone, Debug)]
pub struct SelectionProblem {
    pub y: DVector<f64>,
    pub a: DMatrix<f64>,
    pub prior: SpikeSlabPrior,
    /// Known error variance; when absent the step-2 estimator must provide
    /// one (message passing does).
    pub sigma2: Option<f64>,
    pub block_size: usize,
    /// Worker threads for the block loop.
    pub parallelism: usize,
    pub seed: u64,
}

struct Step2Output {
    summary: NuisanceSummary,
    sigma2: f64,
    sigma2_estimated: bool,
}

fn step2(
    data: &Dataset,
    rot: &RotatedData,
    split_r: &DMatrix<f64>,
    split_s: &DMatrix<f64>,
    estimator: &NuisanceEstimator,
) -> Result<Step2Output> {
    let p = data.p();
    match estimator {
        NuisanceEstimator::Zero => {
            // Documented fallback: with no step-2 algorithm, the error
            // variance comes from the least-squares residuals, which live
            // entirely in the complement part of the rotation.
            let sigma2 = match data.sigma2 {
                Some(s2) => s2,
                None => {
                    let dof = (data.n() - p).max(1) as f64;
                    (rot.sy.norm_squared() / dof).max(1e-12)
                }
            };
            Ok(Step2Output {
                summary: NuisanceSummary::zero(p),
                sigma2,
                sigma2_estimated: data.sigma2.is_none(),
            })
        }
        NuisanceEstimator::Vamp {
            alpha_prior,
            config,
            covariance_form,
        } => {
            let sz = rot.sz.as_ref().ok_or_else(|| {
                Error::IncompatibleEstimator("message passing requires nuisance features Z".into())
            })?;
            let rz = rot.rz.as_ref().expect("rz present whenever sz is");
            let mut config = config.clone();
            if data.sigma2.is_none() {
                config.estimate_sigma2 = true;
            }
            let sigma2_init = data.sigma2.unwrap_or(1.0);
            let out = vamp_fit(&rot.sy, sz, alpha_prior, sigma2_init, &config)?;
            let mu_hat = rz * &out.mean;
            let sigma_hat = match covariance_form {
                CovarianceForm::Projected => out.linear_posterior.project_covariance(rz),
                CovarianceForm::Diagonal => {
                    // RZ diag(v) RZ^T without materializing the diagonal.
                    let mut scaled = rz.clone();
                    for j in 0..scaled.ncols() {
                        let s = out.variances[j].max(0.0).sqrt();
                        for i in 0..p {
                            scaled[(i, j)] *= s;
                        }
                    }
                    &scaled * scaled.transpose()
                }
                CovarianceForm::Scalar { lambda } => {
                    let tr = (0..out.variances.len())
                        .map(|j| lambda[(j, j)] * out.variances[j])
                        .sum::<f64>();
                    DMatrix::<f64>::identity(p, p) * tr
                }
            };
            Ok(Step2Output {
                summary: NuisanceSummary::new(mu_hat, sigma_hat)?,
                sigma2: if data.sigma2.is_some() {
                    data.sigma2.unwrap()
                } else {
                    out.sigma2_hat
                },
                sigma2_estimated: data.sigma2.is_none(),
            })
        }
        NuisanceEstimator::ExactEnumeration { alpha_prior } => {
            let sz = rot.sz.as_ref().ok_or_else(|| {
                Error::IncompatibleEstimator("exact enumeration requires nuisance features Z".into())
            })?;
            let rz = rot.rz.as_ref().expect("rz present whenever sz is");
            let sigma2 = data.sigma2.ok_or_else(|| {
                Error::IncompatibleEstimator(
                    "exact enumeration needs a known error variance".into(),
                )
            })?;
            let alpha_post = spike_slab_linear_posterior(&rot.sy, sz, alpha_prior, sigma2)?;
            let (alpha_mean, alpha_cov) = alpha_post.moments();
            let mu_hat = rz * alpha_mean;
            let sigma_hat = rz * alpha_cov * rz.transpose();
            Ok(Step2Output {
                summary: NuisanceSummary::new(mu_hat, sigma_hat)?,
                sigma2,
                sigma2_estimated: false,
            })
        }
        NuisanceEstimator::GpLaplace(config) => {
            let sigma2 = data.sigma2.ok_or_else(|| {
                Error::IncompatibleEstimator(
                    "the Gaussian-process estimator needs a known error variance".into(),
                )
            })?;
            let fit = gp_laplace_fit(&rot.sy, split_s, config, sigma2)?;
            let summary = gp_nuisance_summary(&fit, split_r, config)?;
            Ok(Step2Output {
                summary,
                sigma2,
                sigma2_estimated: false,
            })
        }
        NuisanceEstimator::GaussianExact { covariance } => {
            let n = data.n();
            if covariance.nrows() != n || covariance.ncols() != n {
                return Err(Error::DimensionMismatch(format!(
                    "nuisance covariance is {}x{} but n = {n}",
                    covariance.nrows(),
                    covariance.ncols()
                )));
            }
            let sigma2 = data.sigma2.ok_or_else(|| {
                Error::IncompatibleEstimator(
                    "the exact Gaussian estimator needs a known error variance".into(),
                )
            })?;
            // Joint Gaussian of (R^T eta, S^T eta): condition on
            // sy = S^T eta + noise.
            let rv = split_r.transpose() * covariance;
            let rvr = &rv * split_r;
            let rvs = &rv * split_s;
            let svs = split_s.transpose() * covariance * split_s;
            let m = split_s.ncols();
            let obs_cov = svs + DMatrix::<f64>::identity(m, m) * sigma2;
            let chol = Cholesky::new(linalg::symmetrize(&obs_cov)).ok_or_else(|| {
                Error::SingularCovariance("observed nuisance covariance".into())
            })?;
            let mu_hat = &rvs * chol.solve(&rot.sy);
            let sigma_hat = rvr - &rvs * chol.solve(&rvs.transpose());
            Ok(Step2Output {
                summary: NuisanceSummary::new(mu_hat, linalg::symmetrize(&sigma_hat))?,
                sigma2,
                sigma2_estimated: false,
            })
        }
    }
}

/// Gaussian-prior conjugate update of the rotated p-dimensional model.
fn gaussian_step3(
    rot: &RotatedData,
    summary: &NuisanceSummary,
    sigma2: f64,
    prior: &GaussianPrior,
) -> Result<BetaPosterior> {
    let p = rot.ry.len();
    let c = linalg::floor_eigenvalues(&summary.sigma_hat, 0.0)
        + DMatrix::<f64>::identity(p, p) * sigma2;
    let chol_c = Cholesky::new(linalg::symmetrize(&c))
        .ok_or_else(|| Error::SingularCovariance("noise covariance".into()))?;
    let prior_prec = Cholesky::new(linalg::symmetrize(&prior.covariance))
        .ok_or_else(|| Error::SingularCovariance("beta prior covariance".into()))?
        .inverse();
    let resid = &rot.ry - &summary.mu_hat;
    let prec = rot.rx.transpose() * chol_c.solve(&rot.rx) + &prior_prec;
    let chol_prec = Cholesky::new(linalg::symmetrize(&prec))
        .ok_or_else(|| Error::SingularCovariance("posterior precision".into()))?;
    let rhs = rot.rx.transpose() * chol_c.solve(&resid) + &prior_prec * &prior.mean;
    let mean = chol_prec.solve(&rhs);
    let cov = chol_prec.inverse();
    Ok(BetaPosterior::single_gaussian(mean, cov))
}

/// Run the three-step fit.
pub fn irga_fit(
    data: &Dataset,
    beta_prior: &BetaPrior,
    estimator: &NuisanceEstimator,
) -> Result<IrgaResult> {
    let t0 = Instant::now();
    let split = compute_rotation(&data.x)?;
    let rot = rotate(data, &split)?;
    let rotation_time = t0.elapsed();

    let t1 = Instant::now();
    let step2_out = step2(data, &rot, &split.r, &split.s, estimator)?;
    let nuisance_time = t1.elapsed();

    let t2 = Instant::now();
    let posterior = match beta_prior {
        BetaPrior::SpikeSlab(prior) => {
            beta_posterior(&rot.ry, &rot.rx, &step2_out.summary, step2_out.sigma2, prior)?
        }
        BetaPrior::GPrior(prior) => {
            beta_posterior_gprior(&rot.ry, &rot.rx, &step2_out.summary, step2_out.sigma2, prior)?
        }
        BetaPrior::Gaussian(prior) => {
            gaussian_step3(&rot, &step2_out.summary, step2_out.sigma2, prior)?
        }
    };
    let posterior_time = t2.elapsed();

    Ok(IrgaResult {
        posterior,
        summary: step2_out.summary,
        sigma2_used: step2_out.sigma2,
        sigma2_estimated: step2_out.sigma2_estimated,
        timings: StepTimings {
            rotation: rotation_time,
            nuisance: nuisance_time,
            posterior: posterior_time,
        },
    })
}

/// Derive the per-block estimator, reseeding seeded strategies so distinct
/// blocks use distinct substreams while staying reproducible.
fn block_estimator(estimator: &NuisanceEstimator, seed: u64, block: usize) -> NuisanceEstimator {
    let mut out = estimator.clone();
    match &mut out {
        NuisanceEstimator::Vamp { config, .. } => {
            config.seed = seed.wrapping_add(block as u64);
        }
        NuisanceEstimator::GpLaplace(config) => {
            config.seed = seed.wrapping_add(block as u64);
        }
        _ => {}
    }
    out
}

/// Per-variable summaries produced by the selection driver.
#[derive(Clone, Debug)]
pub struct SelectionDetail {
    pub inclusion_probs: DVector<f64>,
    pub post_mean: DVector<f64>,
    pub post_sd: DVector<f64>,
}

/// Estimate every marginal inclusion probability by running the fit once per
/// consecutive block of columns, with the remaining columns treated as
/// nuisance features. Deterministic for a fixed seed regardless of the
/// worker count.
pub fn select_all(problem: &SelectionProblem, estimator: &NuisanceEstimator) -> Result<DVector<f64>> {
    Ok(select_all_detailed(problem, estimator)?.inclusion_probs)
}

/// [`select_all`] plus per-variable posterior means and standard deviations.
pub fn select_all_detailed(
    problem: &SelectionProblem,
    estimator: &NuisanceEstimator,
) -> Result<SelectionDetail> {
    let r = problem.a.ncols();
    if r < 2 {
        return Err(Error::DimensionMismatch("selection needs r >= 2".into()));
    }
    if problem.block_size == 0 || problem.block_size > r.min(crate::exact_posterior::MAX_ENUM_P) {
        return Err(Error::Config(format!(
            "block_size must lie in 1..={}, got {}",
            r.min(crate::exact_posterior::MAX_ENUM_P),
            problem.block_size
        )));
    }
    if problem.a.nrows() != problem.y.len() {
        return Err(Error::DimensionMismatch(format!(
            "A has {} rows but y has length {}",
            problem.a.nrows(),
            problem.y.len()
        )));
    }

    let blocks: Vec<(usize, usize)> = (0..r)
        .step_by(problem.block_size)
        .map(|start| (start, (start + problem.block_size).min(r)))
        .collect();

    type BlockSummary = Vec<(f64, f64, f64)>;
    let run_block = |(index, &(start, end)): (usize, &(usize, usize))| -> Result<BlockSummary> {
        let p = end - start;
        let x = problem.a.columns(start, p).into_owned();
        let rest: Vec<usize> = (0..r).filter(|j| *j < start || *j >= end).collect();
        let z = if rest.is_empty() {
            None
        } else {
            Some(problem.a.select_columns(rest.iter()))
        };
        let effective: NuisanceEstimator = if z.is_none() {
            // Single-block degenerate case: nothing to integrate out.
            NuisanceEstimator::Zero
        } else {
            block_estimator(estimator, problem.seed, index)
        };
        let data = Dataset::new(problem.y.clone(), x, z, problem.sigma2)?;
        let fit = irga_fit(&data, &BetaPrior::SpikeSlab(problem.prior), &effective)?;
        let probs = fit.posterior.inclusion_probs();
        let (mean, cov) = fit.posterior.moments();
        Ok((0..p)
            .map(|j| (probs[j], mean[j], cov[(j, j)].max(0.0).sqrt()))
            .collect())
    };

    let per_block: Vec<Result<BlockSummary>> = if problem.parallelism <= 1 {
        blocks.iter().enumerate().map(run_block).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(problem.parallelism)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        pool.install(|| blocks.par_iter().enumerate().map(run_block).collect())
    };

    let mut probs = DVector::<f64>::zeros(r);
    let mut post_mean = DVector::<f64>::zeros(r);
    let mut post_sd = DVector::<f64>::zeros(r);
    for (block, result) in per_block.into_iter().enumerate() {
        let vals = result?;
        let (start, end) = blocks[block];
        debug_assert_eq!(vals.len(), end - start);
        for (offset, (p, m, s)) in vals.into_iter().enumerate() {
            probs[start + offset] = p;
            post_mean[start + offset] = m;
            post_sd[start + offset] = s;
        }
    }
    Ok(SelectionDetail {
        inclusion_probs: probs,
        post_mean,
        post_sd,
    })
}

/// Helper shared by the CLI and the validation suites: map the estimator to
/// the name used in the output document.
pub fn estimator_name(estimator: &NuisanceEstimator) -> &'static str {
    estimator.name()
}
