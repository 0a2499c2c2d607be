//! Estimator suite with run-level statistics.
//!
//! Every estimator runs `m_runs` independent runs of `n_trajectories`
//! trajectories, reports the per-run estimates together with their mean,
//! sample standard deviation, normal-approximation 95% confidence interval
//! and relative error, and carries trajectory-length diagnostics. Work is
//! split over threads with per-trajectory random streams, so results are
//! identical for any worker count.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::models::{PathProblem, SdeModel};
use crate::pde::PdeField;
use crate::trajectory::{
    run_trajectory, ControlPolicy, CovariateField, RngStream, TrajectoryOutcome,
};

/// Which estimator produced a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    MonteCarlo,
    ImportanceSampling,
    ControlVariate,
    RiskSensitive,
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            EstimatorKind::MonteCarlo => "mc",
            EstimatorKind::ImportanceSampling => "is",
            EstimatorKind::ControlVariate => "cov",
            EstimatorKind::RiskSensitive => "risk-sensitive",
        };
        write!(f, "{s}")
    }
}

/// Risk level and cost regularisation of the certainty-equivalent
/// estimators: `alpha > 0` selects the exponential utility, `c >= 0` shifts
/// the path cost away from zero (subtracted back from estimates).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskParams {
    pub alpha: f64,
    pub regularization_c: f64,
}

impl RiskParams {
    pub fn new(alpha: f64) -> Result<Self> {
        Self::with_regularization(alpha, 0.0)
    }

    pub fn with_regularization(alpha: f64, regularization_c: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::invalid_argument("risk level alpha must be > 0"));
        }
        if !(regularization_c >= 0.0) {
            return Err(Error::invalid_argument("regularisation c must be >= 0"));
        }
        Ok(RiskParams {
            alpha,
            regularization_c,
        })
    }
}

/// Sampling layout shared by all estimators: `m_runs` runs of
/// `n_trajectories` trajectories at step size `dt` under a base seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingPlan {
    pub dt: f64,
    pub n_trajectories: usize,
    pub m_runs: usize,
    pub seed: u64,
    pub max_steps: u64,
}

impl SamplingPlan {
    pub fn new(dt: f64, n_trajectories: usize, m_runs: usize, seed: u64, max_steps: u64) -> Self {
        SamplingPlan {
            dt,
            n_trajectories,
            m_runs,
            seed,
            max_steps,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::invalid_argument("dt must be > 0"));
        }
        if self.n_trajectories == 0 || self.m_runs == 0 {
            return Err(Error::invalid_argument("need n_trajectories >= 1 and m_runs >= 1"));
        }
        if self.max_steps == 0 {
            return Err(Error::invalid_argument("max_steps must be >= 1"));
        }
        Ok(())
    }
}

/// Mean, spread and 95% normal-approximation interval of per-run estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub sample_std: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// `sample_std / |mean|`; `None` when the mean vanishes.
    pub relative_error: Option<f64>,
    /// Set when only a single run was supplied, in which case the spread is
    /// reported as zero.
    pub single_run: bool,
}

/// Summarise per-run estimates: mean, sample standard deviation and the 95%
/// normal-approximation confidence interval `mean +- 1.96 std / sqrt(M)`.
pub fn summarize(per_run: &[f64]) -> Result<Summary> {
    if per_run.is_empty() {
        return Err(Error::invalid_argument("summarize needs at least one run"));
    }
    let m = per_run.len() as f64;
    let mean = per_run.iter().sum::<f64>() / m;
    let single_run = per_run.len() == 1;
    let sample_std = if single_run {
        0.0
    } else {
        let ss: f64 = per_run.iter().map(|v| (v - mean) * (v - mean)).sum();
        (ss / (m - 1.0)).sqrt()
    };
    let half_width = 1.96 * sample_std / m.sqrt();
    let relative_error = if mean == 0.0 {
        None
    } else {
        Some(sample_std / mean.abs())
    };
    Ok(Summary {
        mean,
        sample_std,
        ci_low: mean - half_width,
        ci_high: mean + half_width,
        relative_error,
        single_run,
    })
}

/// Importance-sampling weight diagnostics for `w_i = exp(-log L_i)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightDiagnostics {
    pub max_weight: f64,
    pub max_abs_log_weight: f64,
    /// Effective sample size `(sum w)^2 / sum w^2` over all trajectories.
    pub effective_sample_size: f64,
}

/// Full report of one estimator invocation.
#[derive(Debug, Clone)]
pub struct EstimatorReport {
    pub kind: EstimatorKind,
    pub per_run_estimates: Vec<f64>,
    pub summary: Summary,
    /// Mean stopping time over all trajectories.
    pub mean_tau: f64,
    /// Pooled sample variance of the stopping times.
    pub tau_variance: f64,
    /// Mean step count over all trajectories.
    pub mean_steps: f64,
    /// Fraction of trajectories that exhausted the step budget without
    /// exiting (horizon stops do not count).
    pub non_exit_fraction: f64,
    pub total_steps: u64,
    /// Pooled sample variance of the per-trajectory estimates.
    pub per_path_variance: f64,
    pub wall_time: Duration,
    /// Present for importance-sampling style estimators.
    pub weights: Option<WeightDiagnostics>,
    /// Present for the risk-sensitive estimator: the averaged
    /// moment-generating-function form `mean(exp(-alpha gamma_i))`.
    pub mgf_mean: Option<f64>,
}

impl EstimatorReport {
    pub fn mean(&self) -> f64 {
        self.summary.mean
    }
}

/// Simulate the full `(run, trajectory)` grid in parallel, returning the
/// outcomes in deterministic trajectory order.
fn run_batch(
    model: &SdeModel,
    problem: &PathProblem,
    policy: &ControlPolicy,
    covariate: Option<&CovariateField>,
    plan: &SamplingPlan,
) -> Result<Vec<TrajectoryOutcome>> {
    plan.validate()?;
    let n = plan.n_trajectories;
    let total = n * plan.m_runs;
    let results: Vec<Result<TrajectoryOutcome>> = (0..total)
        .into_par_iter()
        .map(|idx| {
            let stream = RngStream::new(plan.seed, (idx / n) as u64, (idx % n) as u64);
            run_trajectory(model, problem, policy, covariate, plan.dt, plan.max_steps, stream)
        })
        .collect();
    // Deterministic error selection: the first failing trajectory wins.
    results.into_iter().collect()
}

struct BatchStats {
    mean_tau: f64,
    tau_variance: f64,
    mean_steps: f64,
    non_exit_fraction: f64,
    total_steps: u64,
}

fn batch_stats(outcomes: &[TrajectoryOutcome]) -> BatchStats {
    let n = outcomes.len() as f64;
    let total_steps: u64 = outcomes.iter().map(|o| o.steps).sum();
    let taus: Vec<f64> = outcomes.iter().map(|o| o.tau).collect();
    BatchStats {
        mean_tau: taus.iter().sum::<f64>() / n,
        tau_variance: pooled_variance(&taus),
        mean_steps: total_steps as f64 / n,
        non_exit_fraction: outcomes.iter().filter(|o| o.budget_exhausted()).count() as f64 / n,
        total_steps,
    }
}

fn per_run_means(values: &[f64], n: usize) -> Vec<f64> {
    values
        .chunks_exact(n)
        .map(|chunk| chunk.iter().sum::<f64>() / n as f64)
        .collect()
}

fn pooled_variance(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
}

fn assemble_report(
    kind: EstimatorKind,
    per_traj: Vec<f64>,
    outcomes: &[TrajectoryOutcome],
    plan: &SamplingPlan,
    started: Instant,
    weights: Option<WeightDiagnostics>,
    mgf_mean: Option<f64>,
) -> Result<EstimatorReport> {
    let per_run = per_run_means(&per_traj, plan.n_trajectories);
    let summary = summarize(&per_run)?;
    let stats = batch_stats(outcomes);
    Ok(EstimatorReport {
        kind,
        per_run_estimates: per_run,
        summary,
        mean_tau: stats.mean_tau,
        tau_variance: stats.tau_variance,
        mean_steps: stats.mean_steps,
        non_exit_fraction: stats.non_exit_fraction,
        total_steps: stats.total_steps,
        per_path_variance: pooled_variance(&per_traj),
        wall_time: started.elapsed(),
        weights,
        mgf_mean,
    })
}

/// Plain Monte Carlo estimate of `E[S]` under the uncontrolled dynamics.
pub fn mc_estimate(
    problem: &PathProblem,
    model: &SdeModel,
    plan: &SamplingPlan,
) -> Result<EstimatorReport> {
    let started = Instant::now();
    let outcomes = run_batch(model, problem, &ControlPolicy::None, None, plan)?;
    let per_traj: Vec<f64> = outcomes.iter().map(|o| o.cost).collect();
    assemble_report(
        EstimatorKind::MonteCarlo,
        per_traj,
        &outcomes,
        plan,
        started,
        None,
        None,
    )
}

/// Importance-sampling estimate: sample under the controlled dynamics and
/// reweight each path by `exp(-log L)`. With `ControlPolicy::None` this
/// reproduces [`mc_estimate`] bit for bit on the same seed.
pub fn is_estimate(
    problem: &PathProblem,
    model: &SdeModel,
    policy: &ControlPolicy,
    plan: &SamplingPlan,
) -> Result<EstimatorReport> {
    let started = Instant::now();
    let outcomes = run_batch(model, problem, policy, None, plan)?;

    let mut per_traj = Vec::with_capacity(outcomes.len());
    let mut max_weight = 0.0f64;
    let mut max_abs_log = 0.0f64;
    let mut w_sum = 0.0f64;
    let mut w2_sum = 0.0f64;
    for o in &outcomes {
        let log_w = -o.log_likelihood;
        if log_w > 700.0 {
            return Err(Error::NumericalBlowup {
                step: o.steps,
                detail: format!("importance weight overflow, max |log L| = {}", log_w.abs()),
            });
        }
        let w = log_w.exp();
        max_weight = max_weight.max(w);
        max_abs_log = max_abs_log.max(o.log_likelihood.abs());
        w_sum += w;
        w2_sum += w * w;
        per_traj.push(o.cost * w);
    }
    let ess = if w2_sum > 0.0 { w_sum * w_sum / w2_sum } else { 0.0 };
    let weights = WeightDiagnostics {
        max_weight,
        max_abs_log_weight: max_abs_log,
        effective_sample_size: ess,
    };
    assemble_report(
        EstimatorKind::ImportanceSampling,
        per_traj,
        &outcomes,
        plan,
        started,
        Some(weights),
        None,
    )
}

/// Control-variate estimate: uncontrolled trajectories scored as `S - M`
/// where `M = int (sigma^T grad phi) . dW` for the supplied covariate field.
/// With the exact solution field the per-path estimate is constant up to
/// discretisation error; with `phi = 0` this reproduces [`mc_estimate`] bit
/// for bit on the same seed.
pub fn cov_estimate(
    problem: &PathProblem,
    model: &SdeModel,
    covariate: &CovariateField,
    plan: &SamplingPlan,
) -> Result<EstimatorReport> {
    let started = Instant::now();
    // Reject covariates whose gradient is already broken at the start point.
    let mut probe = vec![0.0; model.dim()];
    covariate.gradient(problem.start(), &mut probe);
    if probe.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidCovariate(
            "covariate gradient is non-finite at the start point".into(),
        ));
    }
    let outcomes = run_batch(model, problem, &ControlPolicy::None, Some(covariate), plan)?;
    let per_traj: Vec<f64> = outcomes.iter().map(|o| o.cost - o.martingale).collect();
    assemble_report(
        EstimatorKind::ControlVariate,
        per_traj,
        &outcomes,
        plan,
        started,
        None,
        None,
    )
}

/// Scaled cumulant generating function of a sample:
/// `-(1/alpha) log mean(exp(-alpha s_i))`, evaluated with a max-shift so that
/// large samples cannot underflow the exponentials.
pub fn cgf_naive(samples: &[f64], alpha: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid_argument("cgf needs a non-empty sample set"));
    }
    if !(alpha > 0.0) {
        return Err(Error::invalid_argument("cgf needs alpha > 0"));
    }
    // a_i = -alpha s_i; log mean exp(a_i) = a_max + log mean exp(a_i - a_max).
    let a_max = samples
        .iter()
        .map(|s| -alpha * s)
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = samples.iter().map(|s| (-alpha * s - a_max).exp()).sum();
    let log_mean = a_max + (sum / samples.len() as f64).ln();
    Ok(-log_mean / alpha)
}

/// Risk-sensitive estimator of the certainty-equivalent cost at level
/// `alpha`: trajectories are sampled under the feedback control
/// `u* = -alpha sigma^T dV/dx` extracted from the supplied value field, and
/// each path reports `gamma_i = S + (log L) / alpha`, which is constant up to
/// discretisation error when the value field is exact. The report also
/// carries the moment-generating-function form `mean(exp(-alpha gamma_i))`.
pub fn risk_sensitive_gamma(
    problem: &PathProblem,
    model: &SdeModel,
    value_field: &PdeField,
    alpha: f64,
    plan: &SamplingPlan,
) -> Result<EstimatorReport> {
    if !(alpha > 0.0) {
        return Err(Error::invalid_argument("risk-sensitive estimator needs alpha > 0"));
    }
    if model.dim() != 1 {
        return Err(Error::invalid_argument(
            "risk-sensitive estimator uses the 1-D value-function oracle",
        ));
    }
    let started = Instant::now();
    let policy = ControlPolicy::pde_control(value_field.clone(), alpha, problem.domain())?;
    let outcomes = run_batch(model, problem, &policy, None, plan)?;
    let per_traj: Vec<f64> = outcomes
        .iter()
        .map(|o| o.cost + o.log_likelihood / alpha)
        .collect();
    let mgf_mean =
        per_traj.iter().map(|g| (-alpha * g).exp()).sum::<f64>() / per_traj.len() as f64;
    assemble_report(
        EstimatorKind::RiskSensitive,
        per_traj,
        &outcomes,
        plan,
        started,
        None,
        Some(mgf_mean),
    )
}

/// One tested control in a Gibbs-inequality table.
#[derive(Debug, Clone)]
pub struct GibbsRow {
    pub label: String,
    /// `E_Q[S]` estimated under the controlled dynamics.
    pub mean_cost: f64,
    pub mean_cost_se: f64,
    /// Relative entropy `KL(Q, P)` estimated as the mean of `log L` under Q.
    pub kl: f64,
    pub kl_se: f64,
    /// Right side of the variational inequality: `E_Q[S] + KL / alpha`.
    pub bound: f64,
    pub bound_se: f64,
    /// `bound - gamma_naive`; nonnegative in expectation.
    pub slack: f64,
}

/// Both sides of the Gibbs variational inequality
/// `gamma(alpha) <= E_Q[S] + KL(Q, P) / alpha` for a family of controls.
#[derive(Debug, Clone)]
pub struct GibbsReport {
    pub alpha: f64,
    /// CGF of the uncontrolled samples.
    pub gamma_naive: f64,
    pub gamma_naive_se: f64,
    pub rows: Vec<GibbsRow>,
}

/// Estimate the Gibbs inequality table: the left side is the naive CGF of
/// uncontrolled samples, the right side is evaluated for each labelled
/// control under its own controlled dynamics.
pub fn gibbs_check(
    problem: &PathProblem,
    model: &SdeModel,
    controls: &[(String, ControlPolicy)],
    alpha: f64,
    plan: &SamplingPlan,
) -> Result<GibbsReport> {
    if !(alpha > 0.0) {
        return Err(Error::invalid_argument("gibbs check needs alpha > 0"));
    }
    if model.dim() != 1 {
        return Err(Error::invalid_argument("gibbs check is stated for 1-D problems"));
    }

    // Uncontrolled samples for the naive CGF (delta-method standard error).
    let base = run_batch(model, problem, &ControlPolicy::None, None, plan)?;
    let costs: Vec<f64> = base.iter().map(|o| o.cost).collect();
    let gamma_naive = cgf_naive(&costs, alpha)?;
    let weights: Vec<f64> = costs.iter().map(|s| (-alpha * s).exp()).collect();
    let w_mean = weights.iter().sum::<f64>() / weights.len() as f64;
    let w_se = (pooled_variance(&weights) / weights.len() as f64).sqrt();
    let gamma_naive_se = w_se / (alpha * w_mean);

    let mut rows = Vec::with_capacity(controls.len());
    for (stage, (label, policy)) in controls.iter().enumerate() {
        let sub_plan = SamplingPlan {
            seed: crate::trajectory::derive_seed(plan.seed, 1 + stage as u64),
            ..*plan
        };
        let outcomes = run_batch(model, problem, policy, None, &sub_plan)?;
        let s: Vec<f64> = outcomes.iter().map(|o| o.cost).collect();
        let log_l: Vec<f64> = outcomes.iter().map(|o| o.log_likelihood).collect();
        let n = s.len() as f64;
        let mean_cost = s.iter().sum::<f64>() / n;
        let mean_cost_se = (pooled_variance(&s) / n).sqrt();
        let kl = log_l.iter().sum::<f64>() / n;
        let kl_se = (pooled_variance(&log_l) / n).sqrt();
        let bound = mean_cost + kl / alpha;
        let bound_samples: Vec<f64> = s
            .iter()
            .zip(&log_l)
            .map(|(si, li)| si + li / alpha)
            .collect();
        let bound_se = (pooled_variance(&bound_samples) / n).sqrt();
        rows.push(GibbsRow {
            label: label.clone(),
            mean_cost,
            mean_cost_se,
            kl,
            kl_se,
            bound,
            bound_se,
            slack: bound - gamma_naive,
        });
    }

    Ok(GibbsReport {
        alpha,
        gamma_naive,
        gamma_naive_se,
        rows,
    })
}
