//! Command-line front end: configuration, dispatch, and the structured
//! output document.

use std::path::PathBuf;

use clap::{Parser, ValueEnum};

use crate::diagnostics::{theorem1_check, Theorem1Config};
use crate::exact_posterior::{spike_slab_linear_posterior, BetaPosterior, MAX_ORACLE_R};
use crate::fit::{
    irga_fit, select_all_detailed, BetaPrior, CovarianceForm, NuisanceEstimator, StepTimings,
};
use crate::gp_nuisance::{GpConfig, Link};
use crate::io::{
    output_to_json, read_dataset_csv, standardize, CsvDataset, OutputDocument, RunResults,
    Sigma2Info, VariableDensity, VariableSummary,
};
use crate::mcmc::{gibbs_spike_slab, McmcConfig};
use crate::priors::{GPrior, GaussianPrior, SpikeSlabPrior};
use crate::vamp::VampConfig;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Posterior for the x_ coefficients, adjusting for the z_ features.
    Fit,
    /// All marginal inclusion probabilities by blockwise fits.
    Select,
    /// Fit with the Gaussian-process nuisance estimator.
    Gp,
    /// Reference answers: exact enumeration when feasible, else Gibbs.
    Oracle,
    /// Empirical check of the approximation-accuracy bound.
    Diagnose,
}

impl Mode {
    fn as_str(&self) -> &'static str {
        match self {
            Mode::Fit => "fit",
            Mode::Select => "select",
            Mode::Gp => "gp",
            Mode::Oracle => "oracle",
            Mode::Diagnose => "diagnose",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Vamp,
    Exact,
    Gp,
    Zero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaPriorKind {
    SpikeSlab,
    Gaussian,
    GPrior,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkKind {
    Identity,
    Square,
}

impl From<LinkKind> for Link {
    fn from(k: LinkKind) -> Link {
        match k {
            LinkKind::Identity => Link::Identity,
            LinkKind::Square => Link::Square,
        }
    }
}

/// Posterior approximation for regression with a high-dimensional nuisance
/// component.
#[derive(Parser, Debug)]
#[command(name = "irga", version)]
pub struct Cli {
    #[arg(long, value_enum)]
    pub mode: Mode,
    /// Input CSV with columns y, x_*, and optionally z_*.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Prior inclusion probability of the spike-and-slab prior.
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    /// Slab variance of the spike-and-slab prior.
    #[arg(long, default_value_t = 1.0)]
    pub psi: f64,
    /// Scale of the g-prior (used with --beta-prior g-prior).
    #[arg(long)]
    pub g_n: Option<f64>,
    /// Step-2 nuisance estimator.
    #[arg(long, value_enum, default_value_t = EstimatorKind::Vamp)]
    pub estimator: EstimatorKind,
    /// Variables per block in select mode.
    #[arg(long, default_value_t = 4)]
    pub block_size: usize,
    /// Known error variance; omit to estimate it.
    #[arg(long)]
    pub sigma2: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for parallel sections.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Standardize y and every column to zero mean and unit norm.
    #[arg(long, default_value_t = false)]
    pub standardize: bool,
    /// Output path; stdout when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Prior family on the coefficients of interest.
    #[arg(long, value_enum, default_value_t = BetaPriorKind::SpikeSlab)]
    pub beta_prior: BetaPriorKind,
    /// Variance of the isotropic Gaussian prior.
    #[arg(long, default_value_t = 16.0)]
    pub gaussian_var: f64,
    /// Message passing iteration cap.
    #[arg(long, default_value_t = 200)]
    pub max_iters: usize,
    /// Message passing damping factor in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    pub damping: f64,
    /// Burn-in sweeps for the Gibbs oracle.
    #[arg(long, default_value_t = 10_000)]
    pub burnin: usize,
    /// Recorded sweeps for the Gibbs oracle.
    #[arg(long, default_value_t = 90_000)]
    pub recorded: usize,
    /// Random-walk proposal scale for the latent-function oracle.
    #[arg(long, default_value_t = 0.05)]
    pub rw_step: f64,
    /// Link applied to the latent Gaussian-process values.
    #[arg(long, value_enum, default_value_t = LinkKind::Square)]
    pub link: LinkKind,
    /// Squared-exponential kernel denominator.
    #[arg(long, default_value_t = 10.0)]
    pub lengthscale_sq: f64,
    /// Monte Carlo draws for the Gaussian-process moment summary.
    #[arg(long, default_value_t = 4096)]
    pub gp_samples: usize,
    /// Replicates for diagnose mode.
    #[arg(long, default_value_t = 20)]
    pub replicates: usize,
    /// Monte Carlo draws per divergence estimate in diagnose mode.
    #[arg(long, default_value_t = 100_000)]
    pub mc_draws: usize,
}

fn default_workers() -> usize {
    1
}

/// Fully resolved run configuration; embedded in the output document and
/// sufficient to re-run the job identically. The worker count is excluded:
/// it cannot change any numeric result.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub input: Option<String>,
    pub lambda: f64,
    pub psi: f64,
    pub g_n: Option<f64>,
    pub estimator: EstimatorKind,
    pub block_size: usize,
    pub sigma2: Option<f64>,
    pub seed: u64,
    /// Worker threads; not serialized, so documents produced with different
    /// parallelism settings stay byte-identical.
    #[serde(skip, default = "default_workers")]
    pub workers: usize,
    pub standardize: bool,
    pub beta_prior: BetaPriorKind,
    pub gaussian_var: f64,
    pub max_iters: usize,
    pub damping: f64,
    pub burnin: usize,
    pub recorded: usize,
    pub rw_step: f64,
    pub link: LinkKind,
    pub lengthscale_sq: f64,
    pub gp_samples: usize,
    pub replicates: usize,
    pub mc_draws: usize,
}

impl RunConfig {
    pub fn from_cli(cli: &Cli) -> RunConfig {
        RunConfig {
            mode: cli.mode,
            input: cli.input.as_ref().map(|p| p.display().to_string()),
            lambda: cli.lambda,
            psi: cli.psi,
            g_n: cli.g_n,
            estimator: cli.estimator,
            block_size: cli.block_size,
            sigma2: cli.sigma2,
            seed: cli.seed,
            workers: cli.workers,
            standardize: cli.standardize,
            beta_prior: cli.beta_prior,
            gaussian_var: cli.gaussian_var,
            max_iters: cli.max_iters,
            damping: cli.damping,
            burnin: cli.burnin,
            recorded: cli.recorded,
            rw_step: cli.rw_step,
            link: cli.link,
            lengthscale_sq: cli.lengthscale_sq,
            gp_samples: cli.gp_samples,
            replicates: cli.replicates,
            mc_draws: cli.mc_draws,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::Config(format!("--lambda must lie in (0,1), got {}", self.lambda)));
        }
        if !(self.psi > 0.0) {
            return Err(Error::Config(format!("--psi must be positive, got {}", self.psi)));
        }
        if let Some(g) = self.g_n {
            if !(g > 0.0) {
                return Err(Error::Config(format!("--g-n must be positive, got {g}")));
            }
        }
        if let Some(s2) = self.sigma2 {
            if !(s2 > 0.0) || !s2.is_finite() {
                return Err(Error::Config(format!("--sigma2 must be positive, got {s2}")));
            }
        }
        if self.workers == 0 {
            return Err(Error::Config("--workers must be at least 1".into()));
        }
        if self.block_size == 0 {
            return Err(Error::Config("--block-size must be at least 1".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Config(format!(
                "--damping must lie in (0,1], got {}",
                self.damping
            )));
        }
        Ok(())
    }

    fn spike_slab(&self) -> Result<SpikeSlabPrior> {
        SpikeSlabPrior::new(self.lambda, self.psi)
    }

    fn vamp_config(&self) -> VampConfig {
        VampConfig {
            max_iters: self.max_iters,
            tol: 1e-8,
            damping: self.damping,
            estimate_sigma2: self.sigma2.is_none(),
            sigma2_prior_shape: 1.0,
            sigma2_prior_rate: 1.0,
            seed: self.seed,
        }
    }

    fn load_input(&self) -> Result<CsvDataset> {
        let path = self
            .input
            .as_ref()
            .ok_or_else(|| Error::Config(format!("--input is required for {} mode", self.mode.as_str())))?;
        let mut parsed = read_dataset_csv(Path::new(path))?;
        if self.standardize {
            eprintln!("standardizing response and columns to zero mean, unit norm");
            standardize(&mut parsed.dataset)?;
        }
        parsed.dataset.sigma2 = self.sigma2;
        Ok(parsed)
    }
}

use std::path::Path;

fn variable_summaries(
    names: &[String],
    posterior: &BetaPosterior,
    with_inclusion: bool,
) -> Vec<VariableSummary> {
    let (mean, cov) = posterior.moments();
    let probs = posterior.inclusion_probs();
    let log_odds = posterior.inclusion_log_odds();
    names
        .iter()
        .enumerate()
        .map(|(j, name)| VariableSummary {
            name: name.clone(),
            inclusion_prob: with_inclusion.then_some(probs[j]),
            log_odds: with_inclusion.then_some(log_odds[j]),
            post_mean: mean[j],
            post_sd: cov[(j, j)].max(0.0).sqrt(),
        })
        .collect()
}

fn posterior_densities(names: &[String], posterior: &BetaPosterior, atoms: bool) -> Vec<VariableDensity> {
    let (mean, cov) = posterior.moments();
    let probs = posterior.inclusion_probs();
    names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let sd = cov[(j, j)].max(1e-12).sqrt();
            let (lo, hi) = (mean[j] - 5.0 * sd, mean[j] + 5.0 * sd);
            let n_grid = 161;
            let grid: Vec<f64> = (0..n_grid)
                .map(|g| lo + (hi - lo) * g as f64 / (n_grid - 1) as f64)
                .collect();
            let density = posterior.marginal_density(j, &grid);
            VariableDensity {
                name: name.clone(),
                atom_at_zero: atoms.then_some(1.0 - probs[j]),
                grid,
                density,
            }
        })
        .collect()
}

fn timing_entries(t: &StepTimings, total: f64) -> Vec<(String, f64)> {
    vec![
        ("rotation_s".into(), t.rotation.as_secs_f64()),
        ("nuisance_s".into(), t.nuisance.as_secs_f64()),
        ("posterior_s".into(), t.posterior.as_secs_f64()),
        ("total_s".into(), total),
    ]
}

fn run_fit(config: &RunConfig, force_gp: bool) -> Result<(RunResults, Vec<(String, f64)>)> {
    let started = std::time::Instant::now();
    let parsed = config.load_input()?;
    let data = &parsed.dataset;
    let prior = config.spike_slab()?;

    let estimator_kind = if force_gp { EstimatorKind::Gp } else { config.estimator };
    let estimator = match estimator_kind {
        EstimatorKind::Vamp => NuisanceEstimator::Vamp {
            alpha_prior: prior,
            config: config.vamp_config(),
            covariance_form: CovarianceForm::Projected,
        },
        EstimatorKind::Exact => NuisanceEstimator::ExactEnumeration { alpha_prior: prior },
        EstimatorKind::Zero => NuisanceEstimator::Zero,
        EstimatorKind::Gp => {
            let z = data.z.as_ref().ok_or_else(|| {
                Error::IncompatibleEstimator(
                    "the Gaussian-process estimator needs z_ feature columns".into(),
                )
            })?;
            let mut gp = GpConfig::new(z.clone());
            gp.lengthscale_sq = config.lengthscale_sq;
            gp.link = config.link.into();
            gp.n_samples = config.gp_samples;
            gp.seed = config.seed;
            NuisanceEstimator::GpLaplace(gp)
        }
    };

    let beta_prior = match config.beta_prior {
        BetaPriorKind::SpikeSlab => BetaPrior::SpikeSlab(prior),
        BetaPriorKind::Gaussian => {
            BetaPrior::Gaussian(GaussianPrior::isotropic(data.p(), config.gaussian_var)?)
        }
        BetaPriorKind::GPrior => {
            let g_n = config
                .g_n
                .ok_or_else(|| Error::Config("--g-n is required with --beta-prior g-prior".into()))?;
            BetaPrior::GPrior(GPrior::new(g_n)?)
        }
    };

    let fit = irga_fit(data, &beta_prior, &estimator)?;
    let with_inclusion = !matches!(config.beta_prior, BetaPriorKind::Gaussian);
    let results = RunResults::Fit {
        variables: variable_summaries(&parsed.x_names, &fit.posterior, with_inclusion),
        sigma2: Sigma2Info {
            value: fit.sigma2_used,
            estimated: fit.sigma2_estimated,
        },
        densities: posterior_densities(&parsed.x_names, &fit.posterior, with_inclusion),
    };
    Ok((results, timing_entries(&fit.timings, started.elapsed().as_secs_f64())))
}

fn run_select(config: &RunConfig) -> Result<(RunResults, Vec<(String, f64)>)> {
    let started = std::time::Instant::now();
    let parsed = config.load_input()?;
    if parsed.dataset.z.is_some() {
        return Err(Error::Config(
            "select mode expects only x_ columns; fold all candidates into x_".into(),
        ));
    }
    let prior = config.spike_slab()?;
    let estimator = match config.estimator {
        EstimatorKind::Vamp => NuisanceEstimator::Vamp {
            alpha_prior: prior,
            config: config.vamp_config(),
            covariance_form: CovarianceForm::Projected,
        },
        EstimatorKind::Exact => NuisanceEstimator::ExactEnumeration { alpha_prior: prior },
        EstimatorKind::Zero => NuisanceEstimator::Zero,
        EstimatorKind::Gp => {
            return Err(Error::Config(
                "the Gaussian-process estimator does not apply to select mode".into(),
            ))
        }
    };
    let problem = crate::fit::SelectionProblem {
        y: parsed.dataset.y.clone(),
        a: parsed.dataset.x.clone(),
        prior,
        sigma2: config.sigma2,
        block_size: config.block_size,
        parallelism: config.workers,
        seed: config.seed,
    };
    let detail = select_all_detailed(&problem, &estimator)?;
    let variables = parsed
        .x_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let p = detail.inclusion_probs[j];
            let clamped = p.clamp(1e-12, 1.0 - 1e-12);
            VariableSummary {
                name: name.clone(),
                inclusion_prob: Some(p),
                log_odds: Some((clamped / (1.0 - clamped)).ln()),
                post_mean: detail.post_mean[j],
                post_sd: detail.post_sd[j],
            }
        })
        .collect();
    let results = RunResults::Select {
        variables,
        block_size: config.block_size,
        sigma2_known: config.sigma2.is_some(),
    };
    Ok((
        results,
        vec![("total_s".into(), started.elapsed().as_secs_f64())],
    ))
}

fn run_oracle(config: &RunConfig) -> Result<(RunResults, Vec<(String, f64)>)> {
    let started = std::time::Instant::now();
    let parsed = config.load_input()?;
    if parsed.dataset.z.is_some() {
        return Err(Error::Config("oracle mode expects only x_ columns".into()));
    }
    let prior = config.spike_slab()?;
    let r = parsed.dataset.p();

    let (results, _method) = if r <= MAX_ORACLE_R && config.sigma2.is_some() {
        let post = spike_slab_linear_posterior(
            &parsed.dataset.y,
            &parsed.dataset.x,
            &prior,
            config.sigma2.expect("checked above"),
        )?;
        (
            RunResults::Oracle {
                variables: variable_summaries(&parsed.x_names, &post, true),
                method: "exact_enumeration".into(),
                avg_batch_se: None,
            },
            "exact",
        )
    } else {
        let mcmc = McmcConfig {
            burnin: config.burnin,
            recorded: config.recorded,
            seed: config.seed,
            rw_step: config.rw_step,
            batch_length: ((config.recorded as f64).sqrt() as usize).max(2),
        };
        let out = gibbs_spike_slab(
            &parsed.dataset.y,
            &parsed.dataset.x,
            &prior,
            &mcmc,
            config.sigma2,
        )?;
        let variables = parsed
            .x_names
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let p = out.inclusion_probs[j];
                let clamped = p.clamp(1e-12, 1.0 - 1e-12);
                VariableSummary {
                    name: name.clone(),
                    inclusion_prob: Some(p),
                    log_odds: Some((clamped / (1.0 - clamped)).ln()),
                    post_mean: out.theta_mean[j],
                    post_sd: 0.0,
                }
            })
            .collect();
        (
            RunResults::Oracle {
                variables,
                method: "gibbs".into(),
                avg_batch_se: Some(out.avg_inclusion_se),
            },
            "gibbs",
        )
    };
    Ok((
        results,
        vec![("total_s".into(), started.elapsed().as_secs_f64())],
    ))
}

fn run_diagnose(config: &RunConfig) -> Result<(RunResults, Vec<(String, f64)>)> {
    let started = std::time::Instant::now();
    let mut t1 = Theorem1Config::acceptance_instance();
    t1.n_replicates = config.replicates;
    t1.n_mc = config.mc_draws;
    t1.seed = config.seed;
    let report = theorem1_check(&t1)?;
    let results = RunResults::Diagnose {
        report,
        scalar_bound: None,
    };
    Ok((
        results,
        vec![("total_s".into(), started.elapsed().as_secs_f64())],
    ))
}

/// Execute a resolved configuration and assemble the output document.
pub fn run(config: &RunConfig) -> Result<OutputDocument> {
    config.validate()?;
    let (results, timings) = match config.mode {
        Mode::Fit => run_fit(config, false)?,
        Mode::Gp => run_fit(config, true)?,
        Mode::Select => run_select(config)?,
        Mode::Oracle => run_oracle(config)?,
        Mode::Diagnose => run_diagnose(config)?,
    };
    Ok(OutputDocument {
        tool: "irga".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        mode: config.mode.as_str().into(),
        seed: config.seed,
        config: serde_json::to_value(config).expect("config serializes"),
        results,
        timings,
    })
}

/// Re-create a run configuration from the document it produced.
pub fn config_from_document(doc: &OutputDocument) -> Result<RunConfig> {
    serde_json::from_value(doc.config.clone())
        .map_err(|e| Error::Parse(format!("embedded config: {e}")))
}

/// Entry point used by the binary: parse arguments, run, write the document,
/// and map errors to exit codes (2 parse, 3 config, 4 numerical,
/// 5 resource limits).
pub fn main_entry() -> i32 {
    let cli = Cli::parse();
    let config = RunConfig::from_cli(&cli);
    match run(&config) {
        Ok(doc) => {
            let json = output_to_json(&doc);
            match &cli.output {
                Some(path) => {
                    if let Err(e) = std::fs::write(path, json) {
                        eprintln!(
                            "{}",
                            serde_json::json!({"error": {"kind": "io", "message": e.to_string(), "exit_code": 2}})
                        );
                        return 2;
                    }
                }
                None => println!("{json}"),
            }
            0
        }
        Err(err) => {
            let code = err.exit_code();
            eprintln!(
                "{}",
                serde_json::json!({"error": {"kind": error_kind(&err), "message": err.to_string(), "exit_code": code}})
            );
            code
        }
    }
}

fn error_kind(err: &Error) -> &'static str {
    match err {
        Error::Parse(_) | Error::Io(_) => "parse",
        Error::Config(_) | Error::IncompatibleEstimator(_) | Error::DimensionMismatch(_) => "config",
        Error::TooManyVariables { .. } | Error::TraceTooShort { .. } => "resource",
        _ => "numerical",
    }
}
