//! The experiment runners behind the CLI: radius sweeps of the estimator
//! suite on the ball exit problem, the suboptimal-covariate study on the
//! matrix Ornstein-Uhlenbeck process, the non-exit pathology of the singular
//! zero-variance drift, the risk-level sweep of the risk-sensitive estimator,
//! the small-risk control-variate limit study, and the PDE solver check.

use std::time::Instant;

use anyhow::{bail, Context};
use rayon::prelude::*;

use exitlab::analytic::{mfet_bm_ball, value_exit_bm_1d, SingularControlMode};
use exitlab::estimators::{
    cov_estimate, gibbs_check, mc_estimate, risk_sensitive_gamma, EstimatorReport, SamplingPlan,
};
use exitlab::models::{PathProblem, SdeModel};
use exitlab::pde::{
    control_from_value, hjb_residual, solve_linear_bvp, solve_mgf_bvp, solve_parabolic_fk,
    value_from_mgf, Grid1d, PdeField,
};
use exitlab::trajectory::{
    derive_seed, perturb_covariate, run_trajectory, ControlPolicy, CovariateField, RngStream,
    TrajectoryOutcome,
};

use crate::config::{DomainSpec, EstimatorName, ExperimentConfig, ExperimentKind};
use crate::report::{fmt_f64, ExperimentOutput, Manifest, RunsTable, SummaryTable};
use crate::svg::{line_chart, Series, PALETTE};

/// Run the experiment selected by the config. `workers`, when set, bounds
/// the rayon thread count; the outputs are identical for any value.
pub fn run(
    cfg: &ExperimentConfig,
    preset_label: Option<&str>,
    workers: Option<usize>,
) -> anyhow::Result<ExperimentOutput> {
    cfg.validate()?;
    let mut output = match workers {
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .context("building worker pool")?;
            pool.install(|| dispatch(cfg, preset_label))?
        }
        None => dispatch(cfg, preset_label)?,
    };
    output.manifest.workers = workers;
    Ok(output)
}

fn dispatch(cfg: &ExperimentConfig, preset: Option<&str>) -> anyhow::Result<ExperimentOutput> {
    match cfg.experiment {
        ExperimentKind::Fig1 => run_fig1(cfg, preset),
        ExperimentKind::Fig2 => run_fig2(cfg, preset),
        ExperimentKind::Pathology => run_pathology(cfg, preset),
        ExperimentKind::AlphaSweep => run_alpha_sweep(cfg, preset),
        ExperimentKind::CovLimit => run_cov_limit(cfg, preset),
        ExperimentKind::PdeCheck => run_pde_check(cfg, preset),
        ExperimentKind::Custom => run_custom(cfg, preset),
    }
}

fn ball_radius(cfg: &ExperimentConfig) -> f64 {
    match cfg.domain {
        DomainSpec::Ball { radius } => radius,
        DomainSpec::Interval { a, b } => (b - a) / 2.0,
        DomainSpec::Annulus { r_outer, .. } => r_outer,
    }
}

/// Start point on the first coordinate axis at the given radius.
fn axis_start(dim: usize, radius: f64) -> Vec<f64> {
    let mut x = vec![0.0; dim];
    x[0] = radius;
    x
}

/// Start point on the sphere of the given radius along a seeded direction.
fn seeded_sphere_start(dim: usize, radius: f64, seed: u64, sweep: u64) -> Vec<f64> {
    if radius == 0.0 {
        return vec![0.0; dim];
    }
    let draws =
        exitlab::trajectory::gaussian_increments(RngStream::new(seed, u64::MAX, sweep), dim, 1);
    let dir = &draws[0];
    let norm: f64 = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    dir.iter().map(|v| v / norm * radius).collect()
}

fn sweep_label(value: f64) -> String {
    fmt_f64(value)
}

// ---------------------------------------------------------------------------
// Radius sweep on the driftless ball problem: MC vs exact-covariate CoV vs
// gradient-perturbed CoV, with the closed-form exit-time curve.
// ---------------------------------------------------------------------------

fn run_fig1(cfg: &ExperimentConfig, preset: Option<&str>) -> anyhow::Result<ExperimentOutput> {
    let started = Instant::now();
    let model = cfg.build_model()?;
    let domain = cfg.build_domain()?;
    let radius = ball_radius(cfg);
    let covariate = CovariateField::ball_mfet(radius, cfg.eps);

    let mut summary = SummaryTable::new(&["exact", "per_path_variance"]);
    let mut runs = RunsTable::default();
    let mut manifest = Manifest::new(cfg, preset);
    manifest.note("initial point convention: start = radius * e_1");

    let mut estimator_labels: Vec<String> = vec!["mc".into(), "cov".into()];
    for d in &cfg.deltas {
        estimator_labels.push(format!("pcov-{}", fmt_f64(*d)));
    }
    let mut totals = vec![0.0f64; estimator_labels.len()];

    for (ri, &r) in cfg.radii.iter().enumerate() {
        let start = axis_start(cfg.n, r);
        let exact = mfet_bm_ball(&start, radius, cfg.eps)?;
        let problem = PathProblem::mean_exit_time(domain.clone(), start)?;
        let plan = SamplingPlan::new(
            cfg.dt,
            cfg.n_trajectories,
            cfg.m_runs,
            derive_seed(cfg.seed, ri as u64),
            cfg.max_steps,
        );
        let sweep = sweep_label(r);

        let push = |label: &str,
                        report: &EstimatorReport,
                        summary: &mut SummaryTable,
                        runs: &mut RunsTable,
                        manifest: &mut Manifest,
                        totals: &mut [f64]| {
            let extras = vec![fmt_f64(exact), fmt_f64(report.per_path_variance)];
            summary.push_report(&sweep, label, report, &extras);
            runs.push_report(&sweep, label, report);
            manifest.timing(format!("{label} r={sweep}"), report.wall_time);
            let idx = estimator_labels.iter().position(|l| l == label).unwrap();
            totals[idx] += report.wall_time.as_secs_f64();
        };

        if cfg.estimators.contains(&EstimatorName::Mc) {
            let report = mc_estimate(&problem, &model, &plan)?;
            push("mc", &report, &mut summary, &mut runs, &mut manifest, &mut totals);
        }
        if cfg.estimators.contains(&EstimatorName::Cov) {
            let report = cov_estimate(&problem, &model, &covariate, &plan)?;
            push("cov", &report, &mut summary, &mut runs, &mut manifest, &mut totals);
        }
        if cfg.estimators.contains(&EstimatorName::Pcov) {
            for &delta in &cfg.deltas {
                let perturbed = perturb_covariate(covariate.clone(), delta)?;
                let report = cov_estimate(&problem, &model, &perturbed, &plan)?;
                let label = format!("pcov-{}", fmt_f64(delta));
                push(&label, &report, &mut summary, &mut runs, &mut manifest, &mut totals);
            }
        }
    }

    for (label, secs) in estimator_labels.iter().zip(&totals) {
        manifest.timings.push(crate::report::TimingEntry {
            label: format!("total {label}"),
            seconds: *secs,
        });
    }

    let plot_svg = sweep_plot(
        &summary,
        &estimator_labels,
        "Exit-time estimates vs initial radius",
        "initial radius |x0|",
        "mean exit time",
        Some(("exact", &cfg.radii, &|r| {
            (radius * radius - r * r) / (2.0 * cfg.n as f64 * cfg.eps)
        })),
    );

    manifest.total_wall_seconds = started.elapsed().as_secs_f64();
    Ok(ExperimentOutput {
        summary,
        runs,
        manifest,
        plot_svg,
        extra_files: Vec::new(),
    })
}

// ---------------------------------------------------------------------------
// Matrix Ornstein-Uhlenbeck process with the deliberately suboptimal
// driftless-ball covariate: MC and CoV timed separately per radius.
// ---------------------------------------------------------------------------

fn run_fig2(cfg: &ExperimentConfig, preset: Option<&str>) -> anyhow::Result<ExperimentOutput> {
    let started = Instant::now();
    let model = cfg.build_model()?;
    let domain = cfg.build_domain()?;
    let radius = ball_radius(cfg);
    // Deliberately suboptimal covariate: the driftless-ball field, not the
    // unknown exit-time solution of the interacting process.
    let covariate = CovariateField::ball_mfet(radius, cfg.eps);

    let mut summary = SummaryTable::new(&["exact", "per_path_variance"]);
    let mut runs = RunsTable::default();
    let mut manifest = Manifest::new(cfg, preset);
    manifest.note("initial points drawn on the swept spheres along a seeded direction");
    manifest.note("covariate: driftless-ball exit-time field (suboptimal on purpose)");

    let mut mc_total = 0.0f64;
    let mut cov_total = 0.0f64;

    for (ri, &r) in cfg.radii.iter().enumerate() {
        let start = seeded_sphere_start(cfg.n, r, cfg.seed, ri as u64);
        let problem = PathProblem::mean_exit_time(domain.clone(), start)?;
        let plan = SamplingPlan::new(
            cfg.dt,
            cfg.n_trajectories,
            cfg.m_runs,
            derive_seed(cfg.seed, ri as u64),
            cfg.max_steps,
        );
        let sweep = sweep_label(r);

        let mc = mc_estimate(&problem, &model, &plan)?;
        summary.push_report(
            &sweep,
            "mc",
            &mc,
            &["NA".to_string(), fmt_f64(mc.per_path_variance)],
        );
        runs.push_report(&sweep, "mc", &mc);
        manifest.timing(format!("mc r={sweep}"), mc.wall_time);
        mc_total += mc.wall_time.as_secs_f64();

        let cov = cov_estimate(&problem, &model, &covariate, &plan)?;
        summary.push_report(
            &sweep,
            "cov",
            &cov,
            &["NA".to_string(), fmt_f64(cov.per_path_variance)],
        );
        runs.push_report(&sweep, "cov", &cov);
        manifest.timing(format!("cov r={sweep}"), cov.wall_time);
        cov_total += cov.wall_time.as_secs_f64();
    }

    manifest.timings.push(crate::report::TimingEntry {
        label: "total mc".into(),
        seconds: mc_total,
    });
    manifest.timings.push(crate::report::TimingEntry {
        label: "total cov".into(),
        seconds: cov_total,
    });

    let labels = ["mc".to_string(), "cov".to_string()];
    let plot_svg = sweep_plot(
        &summary,
        &labels,
        "Exit-time estimates for the interacting process",
        "initial radius |x0|",
        "mean exit time",
        None,
    );

    manifest.total_wall_seconds = started.elapsed().as_secs_f64();
    Ok(ExperimentOutput {
        summary,
        runs,
        manifest,
        plot_svg,
        extra_files: Vec::new(),
    })
}

// ---------------------------------------------------------------------------
// Non-exit pathology of the singular zero-variance drift.
// ---------------------------------------------------------------------------

/// Outcome statistics of a batch of trajectories under fixed dynamics,
/// without any reweighting.
struct RawBatch {
    per_run_cost: Vec<f64>,
    mean_tau: f64,
    mean_steps: f64,
    non_exit_fraction: f64,
    total_steps: u64,
    wall: std::time::Duration,
}

fn raw_batch(
    model: &SdeModel,
    problem: &PathProblem,
    policy: &ControlPolicy,
    plan: &SamplingPlan,
) -> anyhow::Result<RawBatch> {
    let started = Instant::now();
    let n = plan.n_trajectories;
    let total = n * plan.m_runs;
    let outcomes: Result<Vec<TrajectoryOutcome>, exitlab::Error> = (0..total)
        .into_par_iter()
        .map(|idx| {
            let stream = RngStream::new(plan.seed, (idx / n) as u64, (idx % n) as u64);
            run_trajectory(model, problem, policy, None, plan.dt, plan.max_steps, stream)
        })
        .collect();
    let outcomes = outcomes?;
    let count = outcomes.len() as f64;
    let costs: Vec<f64> = outcomes.iter().map(|o| o.cost).collect();
    Ok(RawBatch {
        per_run_cost: costs
            .chunks_exact(n)
            .map(|c| c.iter().sum::<f64>() / n as f64)
            .collect(),
        mean_tau: outcomes.iter().map(|o| o.tau).sum::<f64>() / count,
        mean_steps: outcomes.iter().map(|o| o.steps).sum::<u64>() as f64 / count,
        non_exit_fraction: outcomes.iter().filter(|o| o.budget_exhausted()).count() as f64 / count,
        total_steps: outcomes.iter().map(|o| o.steps).sum(),
        wall: started.elapsed(),
    })
}

fn run_pathology(cfg: &ExperimentConfig, preset: Option<&str>) -> anyhow::Result<ExperimentOutput> {
    let started = Instant::now();
    let model = cfg.build_model()?;
    let domain = cfg.build_domain()?;
    let radius = match cfg.domain {
        DomainSpec::Ball { radius } => radius,
        DomainSpec::Interval { a, b } => {
            if (a + b).abs() > 1e-12 {
                bail!("pathology: the singular drift needs a symmetric interval (-R, R)");
            }
            b
        }
        DomainSpec::Annulus { .. } => bail!("pathology: annulus domains are not supported"),
    };
    let start = vec![0.0; cfg.n];
    let problem = PathProblem::mean_exit_time(domain, start.clone())?;

    // Budget: 10x the analytic mean exit step count of the uncontrolled
    // dynamics, capped by the configured ceiling.
    let mfet = mfet_bm_ball(&start, radius, cfg.eps)?;
    let budget = (((10.0 * mfet / cfg.dt).ceil()) as u64).min(cfg.max_steps).max(1);

    let mut summary = SummaryTable::new(&["budget_steps", "exited_count"]);
    let mut runs = RunsTable::default();
    let mut manifest = Manifest::new(cfg, preset);
    manifest.note(format!(
        "step budget = 10x analytic mean exit steps = {budget} (ceiling {})",
        cfg.max_steps
    ));

    let dynamics: [(&str, ControlPolicy); 3] = [
        ("uncontrolled", ControlPolicy::None),
        (
            "singular-sigma-scaled",
            ControlPolicy::SingularLogMfet {
                radius,
                eps: cfg.eps,
                mode: SingularControlMode::SigmaScaled,
            },
        ),
        (
            "singular-diffusion-scaled",
            ControlPolicy::SingularLogMfet {
                radius,
                eps: cfg.eps,
                mode: SingularControlMode::DiffusionScaled,
            },
        ),
    ];

    for (di, (label, policy)) in dynamics.iter().enumerate() {
        let plan = SamplingPlan::new(
            cfg.dt,
            cfg.n_trajectories,
            cfg.m_runs,
            derive_seed(cfg.seed, di as u64),
            budget,
        );
        let batch = raw_batch(&model, &problem, policy, &plan)?;
        let total = (cfg.n_trajectories * cfg.m_runs) as f64;
        let exited = ((1.0 - batch.non_exit_fraction) * total).round();
        let s = exitlab::estimators::summarize(&batch.per_run_cost)?;
        summary.push_raw(vec![
            "0".into(),
            label.to_string(),
            fmt_f64(s.mean),
            fmt_f64(s.ci_low),
            fmt_f64(s.ci_high),
            fmt_f64(s.sample_std),
            s.relative_error.map(fmt_f64).unwrap_or("NA".into()),
            fmt_f64(batch.mean_tau),
            fmt_f64(batch.mean_steps),
            fmt_f64(batch.non_exit_fraction),
            batch.total_steps.to_string(),
            budget.to_string(),
            fmt_f64(exited),
        ]);
        for (i, est) in batch.per_run_cost.iter().enumerate() {
            runs.rows.push(("0".into(), label.to_string(), i, *est));
        }
        manifest.timing(*label, batch.wall);
        manifest.diagnostic(format!("{label} non_exit_fraction"), batch.non_exit_fraction);
    }

    // Bar-style plot: non-exit fraction per dynamics.
    let mut series = Vec::new();
    for (i, (label, _)) in dynamics.iter().enumerate() {
        let v = summary.cell_f64("0", label, "non_exit_fraction").unwrap();
        let mut s = Series::new(*label, PALETTE[i % PALETTE.len()]);
        s.points = vec![(i as f64, v)];
        s.error_bars = vec![(i as f64, 0.0, v)];
        series.push(s);
    }
    let plot_svg = line_chart(
        "Fraction of trajectories that never exit within the budget",
        "dynamics",
        "non-exit fraction",
        &series,
    );

    manifest.total_wall_seconds = started.elapsed().as_secs_f64();
    Ok(ExperimentOutput {
        summary,
        runs,
        manifest,
        plot_svg,
        extra_files: Vec::new(),
    })
}

// ---------------------------------------------------------------------------
// Risk-level sweep of the risk-sensitive estimator.
// ---------------------------------------------------------------------------

fn interval_params(cfg: &ExperimentConfig) -> anyhow::Result<(f64, f64, f64)> {
    match cfg.domain {
        DomainSpec::Interval { a, b } => Ok((a, b, (b - a) / 2.0)),
        _ => bail!("{} needs an interval domain", cfg.experiment.as_str()),
    }
}

fn run_alpha_sweep(cfg: &ExperimentConfig, preset: Option<&str>) -> anyhow::Result<ExperimentOutput> {
    let started = Instant::now();
    let model = cfg.build_model()?;
    let domain = cfg.build_domain()?;
    let (a, b, half_width) = interval_params(cfg)?;
    let x0 = cfg.radii.first().copied().unwrap_or(0.0);
    let symmetric_bm =
        matches!(cfg.theta, crate::config::ThetaSpec::Zero) && (a + b).abs() < 1e-12;
    let problem = PathProblem::mean_exit_time(domain, vec![x0])?;
    let grid = Grid1d::new(a, b, cfg.grid_nodes)?;
    let sigma = (2.0 * cfg.eps).sqrt();

    let phi = solve_linear_bvp(&model, |_| 1.0, 0.0, 0.0, grid.clone())?;

    let mut summary = SummaryTable::new(&[
        "exact",
        "per_path_std",
        "max_control",
        "gamma_from_mgf",
    ]);
    let mut runs = RunsTable::default();
    let mut manifest = Manifest::new(cfg, preset);
    manifest.note(format!("start point x0 = {}", fmt_f64(x0)));
    let mut extra_files: Vec<(String, String)> = Vec::new();
    let export_field = |field: &PdeField, name: String, files: &mut Vec<(String, String)>| {
        let mut buf = Vec::new();
        if field.write_csv(&mut buf).is_ok() {
            files.push((name, String::from_utf8_lossy(&buf).into_owned()));
        }
    };

    // Risk-neutral baseline: plain MC and the exact-field control variate.
    let base_plan = SamplingPlan::new(
        cfg.dt,
        cfg.n_trajectories,
        cfg.m_runs,
        derive_seed(cfg.seed, 10_000),
        cfg.max_steps,
    );
    let exact0 = if symmetric_bm {
        (half_width * half_width - x0 * x0) / (2.0 * cfg.eps)
    } else {
        phi.value_at(x0)
    };
    let mc = mc_estimate(&problem, &model, &base_plan)?;
    summary.push_report(
        "0",
        "mc",
        &mc,
        &[
            fmt_f64(exact0),
            fmt_f64(mc.per_path_variance.sqrt()),
            "0".into(),
            "NA".into(),
        ],
    );
    runs.push_report("0", "mc", &mc);
    manifest.timing("mc alpha=0", mc.wall_time);
    let cov = cov_estimate(&problem, &model, &CovariateField::Grid1d(phi.clone()), &base_plan)?;
    summary.push_report(
        "0",
        "cov",
        &cov,
        &[
            fmt_f64(exact0),
            fmt_f64(cov.per_path_variance.sqrt()),
            "0".into(),
            "NA".into(),
        ],
    );
    runs.push_report("0", "cov", &cov);
    manifest.timing("cov alpha=0", cov.wall_time);

    for (ai, &alpha) in cfg.alphas.iter().enumerate() {
        let h = solve_mgf_bvp(&model, |_| 1.0, 0.0, 0.0, alpha, grid.clone())?;
        let v = value_from_mgf(&h, alpha)?;
        let u_field = control_from_value(&v, alpha, sigma)?;
        let max_control = u_field
            .values()
            .iter()
            .fold(0.0f64, |acc, u| acc.max(u.abs()));

        let plan = SamplingPlan::new(
            cfg.dt,
            cfg.n_trajectories,
            cfg.m_runs,
            derive_seed(cfg.seed, 20_000 + ai as u64),
            cfg.max_steps,
        );
        let report = risk_sensitive_gamma(&problem, &model, &v, alpha, &plan)?;
        let sweep_name = sweep_label(alpha);
        export_field(&v, format!("value_field_alpha_{sweep_name}.csv"), &mut extra_files);
        export_field(
            &u_field,
            format!("control_field_alpha_{sweep_name}.csv"),
            &mut extra_files,
        );
        let exact = if symmetric_bm {
            value_exit_bm_1d(x0, half_width, cfg.eps, alpha)?
        } else {
            v.value_at(x0)
        };
        let gamma_from_mgf = -report.mgf_mean.unwrap().ln() / alpha;
        let sweep = sweep_label(alpha);
        summary.push_report(
            &sweep,
            "risk-sensitive",
            &report,
            &[
                fmt_f64(exact),
                fmt_f64(report.per_path_variance.sqrt()),
                fmt_f64(max_control),
                fmt_f64(gamma_from_mgf),
            ],
        );
        runs.push_report(&sweep, "risk-sensitive", &report);
        manifest.timing(format!("risk-sensitive alpha={sweep}"), report.wall_time);
    }

    // Gibbs-inequality table over a few constant controls plus the
    // feedback control at the first configured risk level.
    if let Some(&alpha) = cfg.alphas.first() {
        let h = solve_mgf_bvp(&model, |_| 1.0, 0.0, 0.0, alpha, grid.clone())?;
        let v = value_from_mgf(&h, alpha)?;
        let optimal = ControlPolicy::pde_control(v, alpha, problem.domain())
            .map_err(anyhow::Error::from)?;
        let controls = vec![
            ("u=0".to_string(), ControlPolicy::None),
            ("u=0.25".to_string(), ControlPolicy::constant(vec![0.25])),
            ("u=0.5".to_string(), ControlPolicy::constant(vec![0.5])),
            ("u=1".to_string(), ControlPolicy::constant(vec![1.0])),
            ("u=u*".to_string(), optimal),
        ];
        let gibbs_plan = SamplingPlan::new(
            cfg.dt,
            cfg.n_trajectories * cfg.m_runs,
            1,
            derive_seed(cfg.seed, 30_000),
            cfg.max_steps,
        );
        let table = gibbs_check(&problem, &model, &controls, alpha, &gibbs_plan)?;
        manifest.diagnostic("gibbs gamma_naive", table.gamma_naive);
        manifest.diagnostic("gibbs gamma_naive_se", table.gamma_naive_se);
        for row in &table.rows {
            manifest.diagnostic(format!("gibbs bound {}", row.label), row.bound);
            manifest.diagnostic(format!("gibbs bound_se {}", row.label), row.bound_se);
            manifest.diagnostic(format!("gibbs slack {}", row.label), row.slack);
        }
    }

    // Plot: estimate vs alpha with the closed-form curve.
    let mut series = Vec::new();
    let mut est = Series::new("risk-sensitive", PALETTE[0]);
    let mut exact_s = Series::new("closed form", PALETTE[1]);
    exact_s.dashed = true;
    for &alpha in &cfg.alphas {
        let sweep = sweep_label(alpha);
        if let Some(v) = summary.cell_f64(&sweep, "risk-sensitive", "estimate") {
            est.points.push((alpha, v));
            let lo = summary.cell_f64(&sweep, "risk-sensitive", "ci_low").unwrap();
            let hi = summary.cell_f64(&sweep, "risk-sensitive", "ci_high").unwrap();
            est.error_bars.push((alpha, lo, hi));
        }
        if let Some(v) = summary.cell_f64(&sweep, "risk-sensitive", "exact") {
            exact_s.points.push((alpha, v));
        }
    }
    est.points.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
    exact_s.points.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
    series.push(est);
    series.push(exact_s);
    let plot_svg = line_chart(
        "Certainty-equivalent estimate vs risk level",
        "alpha",
        "gamma(alpha)",
        &series,
    );

    manifest.total_wall_seconds = started.elapsed().as_secs_f64();
    Ok(ExperimentOutput {
        summary,
        runs,
        manifest,
        plot_svg,
        extra_files,
    })
}

// ---------------------------------------------------------------------------
// Small-risk limit: the scaled feedback control against the gradient of the
// risk-neutral solution, and per-path variances of the risk-sensitive and
// control-variate estimators.
// ---------------------------------------------------------------------------

fn run_cov_limit(cfg: &ExperimentConfig, preset: Option<&str>) -> anyhow::Result<ExperimentOutput> {
    let started = Instant::now();
    let model = cfg.build_model()?;
    let domain = cfg.build_domain()?;
    let (a, b, _) = interval_params(cfg)?;
    let x0 = cfg.radii.first().copied().unwrap_or(0.0);
    let problem = PathProblem::mean_exit_time(domain, vec![x0])?;
    let grid = Grid1d::new(a, b, cfg.grid_nodes)?;
    let sigma = (2.0 * cfg.eps).sqrt();

    let phi = solve_linear_bvp(&model, |_| 1.0, 0.0, 0.0, grid.clone())?;
    let phi_grad = phi.nodal_derivative().to_vec();

    let mut summary = SummaryTable::new(&[
        "value_gap",
        "control_gap",
        "per_path_variance",
        "martingale_mean",
        "martingale_se",
    ]);
    let mut runs = RunsTable::default();
    let mut manifest = Manifest::new(cfg, preset);

    let interior = 1..=cfg.grid_nodes;

    for (ai, &alpha) in cfg.alphas.iter().enumerate() {
        let h = solve_mgf_bvp(&model, |_| 1.0, 0.0, 0.0, alpha, grid.clone())?;
        let v = value_from_mgf(&h, alpha)?;
        let u_field = control_from_value(&v, alpha, sigma)?;

        // Nodewise gaps on the interior of the grid.
        let mut value_gap = 0.0f64;
        let mut control_gap = 0.0f64;
        for i in interior.clone() {
            value_gap = value_gap.max((v.values()[i] - phi.values()[i]).abs());
            let target = -sigma * phi_grad[i];
            control_gap = control_gap.max((u_field.values()[i] / alpha - target).abs());
        }

        let plan = SamplingPlan::new(
            cfg.dt,
            cfg.n_trajectories,
            cfg.m_runs,
            derive_seed(cfg.seed, 40_000 + ai as u64),
            cfg.max_steps,
        );
        let report = risk_sensitive_gamma(&problem, &model, &v, alpha, &plan)?;
        let sweep = sweep_label(alpha);
        summary.push_report(
            &sweep,
            "risk-sensitive",
            &report,
            &[
                fmt_f64(value_gap),
                fmt_f64(control_gap),
                fmt_f64(report.per_path_variance),
                "NA".into(),
                "NA".into(),
            ],
        );
        runs.push_report(&sweep, "risk-sensitive", &report);
        manifest.timing(format!("risk-sensitive alpha={sweep}"), report.wall_time);
    }

    // Risk-neutral references at the same step size.
    let plan0 = SamplingPlan::new(
        cfg.dt,
        cfg.n_trajectories,
        cfg.m_runs,
        derive_seed(cfg.seed, 41_000),
        cfg.max_steps,
    );
    let mc = mc_estimate(&problem, &model, &plan0)?;
    summary.push_report(
        "0",
        "mc",
        &mc,
        &[
            "NA".into(),
            "NA".into(),
            fmt_f64(mc.per_path_variance),
            "NA".into(),
            "NA".into(),
        ],
    );
    runs.push_report("0", "mc", &mc);
    manifest.timing("mc", mc.wall_time);

    let covariate = CovariateField::Grid1d(phi.clone());
    let cov = cov_estimate(&problem, &model, &covariate, &plan0)?;
    summary.push_report(
        "0",
        "cov",
        &cov,
        &[
            "NA".into(),
            "NA".into(),
            fmt_f64(cov.per_path_variance),
            "NA".into(),
            "NA".into(),
        ],
    );
    runs.push_report("0", "cov", &cov);
    manifest.timing("cov", cov.wall_time);

    // Martingale mean check on a dedicated batch.
    let mart_plan = SamplingPlan::new(
        cfg.dt.max(1e-3),
        10_000,
        1,
        derive_seed(cfg.seed, 42_000),
        cfg.max_steps,
    );
    let mart_outcomes: Result<Vec<TrajectoryOutcome>, exitlab::Error> = (0..mart_plan.n_trajectories)
        .into_par_iter()
        .map(|i| {
            run_trajectory(
                &model,
                &problem,
                &ControlPolicy::None,
                Some(&covariate),
                mart_plan.dt,
                mart_plan.max_steps,
                RngStream::new(mart_plan.seed, 0, i as u64),
            )
        })
        .collect();
    let mart_outcomes = mart_outcomes?;
    let n = mart_outcomes.len() as f64;
    let mart_mean = mart_outcomes.iter().map(|o| o.martingale).sum::<f64>() / n;
    let mart_var = mart_outcomes
        .iter()
        .map(|o| (o.martingale - mart_mean) * (o.martingale - mart_mean))
        .sum::<f64>()
        / (n - 1.0);
    let mart_se = (mart_var / n).sqrt();
    summary.push_raw(vec![
        "martingale".into(),
        "cov".into(),
        fmt_f64(mart_mean),
        fmt_f64(mart_mean - 1.96 * mart_se),
        fmt_f64(mart_mean + 1.96 * mart_se),
        fmt_f64(mart_var.sqrt()),
        "NA".into(),
        fmt_f64(mart_outcomes.iter().map(|o| o.tau).sum::<f64>() / n),
        fmt_f64(mart_outcomes.iter().map(|o| o.steps).sum::<u64>() as f64 / n),
        "0".into(),
        mart_outcomes.iter().map(|o| o.steps).sum::<u64>().to_string(),
        "NA".into(),
        "NA".into(),
        "NA".into(),
        fmt_f64(mart_mean),
        fmt_f64(mart_se),
    ]);

    // Plot the two gap curves against alpha.
    let mut value_series = Series::new("sup |V_alpha - phi|", PALETTE[0]);
    let mut control_series = Series::new("sup |u*/alpha + sigma phi'|", PALETTE[1]);
    for &alpha in &cfg.alphas {
        let sweep = sweep_label(alpha);
        if let Some(v) = summary.cell_f64(&sweep, "risk-sensitive", "value_gap") {
            value_series.points.push((alpha, v));
        }
        if let Some(v) = summary.cell_f64(&sweep, "risk-sensitive", "control_gap") {
            control_series.points.push((alpha, v));
        }
    }
    value_series.points.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
    control_series.points.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
    let plot_svg = line_chart(
        "Risk-neutral limit of the feedback control",
        "alpha",
        "sup-norm gap",
        &[value_series, control_series],
    );

    manifest.total_wall_seconds = started.elapsed().as_secs_f64();
    Ok(ExperimentOutput {
        summary,
        runs,
        manifest,
        plot_svg,
        extra_files: Vec::new(),
    })
}

// ---------------------------------------------------------------------------
// PDE solver verification table.
// ---------------------------------------------------------------------------

fn run_pde_check(cfg: &ExperimentConfig, preset: Option<&str>) -> anyhow::Result<ExperimentOutput> {
    let started = Instant::now();
    let model = cfg.build_model()?;
    let (a, b, half_width) = match cfg.domain {
        DomainSpec::Interval { a, b } => (a, b, (b - a) / 2.0),
        _ => bail!("pde-check needs an interval domain"),
    };
    if (a + b).abs() > 1e-12 {
        bail!("pde-check compares against the symmetric-interval closed forms; use (-R, R)");
    }
    let eps = cfg.eps;
    let alpha = cfg.alphas.first().copied().unwrap_or(0.1);
    let grid = Grid1d::new(a, b, cfg.grid_nodes)?;
    let sigma = (2.0 * eps).sqrt();

    let mut summary = SummaryTable::new(&["threshold", "pass"]);
    let mut runs = RunsTable::default();
    let mut manifest = Manifest::new(cfg, preset);

    let check = |name: &str, measured: f64, threshold: f64, pass: bool,
                     summary: &mut SummaryTable| {
        let mut row = vec![name.to_string(), "pde".to_string(), fmt_f64(measured)];
        row.extend(std::iter::repeat_n("NA".to_string(), 8));
        row.push(fmt_f64(threshold));
        row.push(if pass { "true".into() } else { "false".into() });
        summary.push_raw(row);
    };

    // Linear exit problem against the quadratic closed form.
    let phi = solve_linear_bvp(&model, |_| 1.0, 0.0, 0.0, grid.clone())?;
    let err_phi = phi.max_error_against(|x| (half_width * half_width - x * x) / (2.0 * eps));
    check("linear_bvp_max_error", err_phi, 1e-6, err_phi <= 1e-6, &mut summary);

    // Transformed exit problem against the cosh ratio.
    let h = solve_mgf_bvp(&model, |_| 1.0, 0.0, 0.0, alpha, grid.clone())?;
    let err_h = h.max_error_against(|x| {
        exitlab::analytic::mgf_exit_bm_1d(x, half_width, eps, alpha).unwrap()
    });
    check("mgf_bvp_max_error", err_h, 1e-6, err_h <= 1e-6, &mut summary);

    // Second-order convergence under grid doubling.
    let m_coarse = (cfg.grid_nodes + 1) / 2 - 1;
    let h_coarse = solve_mgf_bvp(
        &model,
        |_| 1.0,
        0.0,
        0.0,
        alpha,
        Grid1d::new(a, b, m_coarse)?,
    )?;
    let err_coarse = h_coarse.max_error_against(|x| {
        exitlab::analytic::mgf_exit_bm_1d(x, half_width, eps, alpha).unwrap()
    });
    let ratio = err_coarse / err_h;
    check("grid_halving_error_ratio", ratio, 3.5, ratio >= 3.5, &mut summary);

    // Discrete positivity bounds of the transformed solution.
    let h_min = h.values().iter().fold(f64::INFINITY, |acc, v| acc.min(*v));
    let h_max = h.values().iter().fold(0.0f64, |acc, v| acc.max(*v));
    check("mgf_min_value", h_min, 0.0, h_min > 0.0, &mut summary);
    check("mgf_max_value", h_max, 1.0, h_max <= 1.0 + 1e-15, &mut summary);

    // Residual of the nonlinear stationary equation after the log transform.
    let v = value_from_mgf(&h, alpha)?;
    let resid = hjb_residual(&v, &model, |_| 1.0, alpha)?;
    check("hjb_residual", resid, 1e-3, resid <= 1e-3, &mut summary);

    // Value at the centre against the closed form.
    let v_exact = value_exit_bm_1d(0.0, half_width, eps, alpha)?;
    let v_err = (v.value_at(0.0) - v_exact).abs();
    check("value_centre_error", v_err, 1e-5, v_err <= 1e-5, &mut summary);

    // Risk-neutral limit: both sup-norm gaps shrink monotonically in alpha.
    let mut alphas = cfg.alphas.clone();
    alphas.sort_by(|p, q| q.partial_cmp(p).unwrap());
    let mut value_gaps = Vec::new();
    let mut control_gaps = Vec::new();
    for &al in &alphas {
        let h = solve_mgf_bvp(&model, |_| 1.0, 0.0, 0.0, al, grid.clone())?;
        let v = value_from_mgf(&h, al)?;
        let u = control_from_value(&v, al, sigma)?;
        let mut vg = 0.0f64;
        let mut cg = 0.0f64;
        for i in 1..=cfg.grid_nodes {
            vg = vg.max((v.values()[i] - phi.values()[i]).abs());
            cg = cg.max((u.values()[i] / al + sigma * phi.nodal_derivative()[i]).abs());
        }
        value_gaps.push(vg);
        control_gaps.push(cg);
    }
    let monotone =
        |g: &[f64]| g.windows(2).all(|w| w[1] < w[0]) || g.len() < 2;
    check(
        "value_gap_monotone_in_alpha",
        *value_gaps.last().unwrap_or(&0.0),
        f64::INFINITY,
        monotone(&value_gaps),
        &mut summary,
    );
    check(
        "control_gap_monotone_in_alpha",
        *control_gaps.last().unwrap_or(&0.0),
        f64::INFINITY,
        monotone(&control_gaps),
        &mut summary,
    );

    // Parabolic solver: boundary and terminal data reproduced exactly, and
    // long horizons make exit almost sure.
    let sol = solve_parabolic_fk(&model, 2.0, 200, Grid1d::new(a, b, 199)?)?;
    let boundary_exact = (0..=sol.time_steps()).all(|k| {
        let f = sol.field_at_index(k);
        f.values()[0] == 1.0 && *f.values().last().unwrap() == 1.0
    });
    let terminal = sol.field_at_index(sol.time_steps());
    let terminal_exact = terminal.values()[terminal.values().len() / 2] == 0.0;
    check(
        "parabolic_boundary_terminal_exact",
        if boundary_exact && terminal_exact { 1.0 } else { 0.0 },
        1.0,
        boundary_exact && terminal_exact,
        &mut summary,
    );
    let mfet_centre = half_width * half_width / (2.0 * eps);
    let long = solve_parabolic_fk(&model, 20.0 * mfet_centre, 400, Grid1d::new(a, b, 199)?)?;
    let psi0_min = long
        .field_at_index(0)
        .values()
        .iter()
        .fold(f64::INFINITY, |acc, v| acc.min(*v));
    check(
        "parabolic_long_horizon_exit_probability",
        psi0_min,
        1.0 - 1e-3,
        psi0_min >= 1.0 - 1e-3,
        &mut summary,
    );

    for row in &summary.rows {
        manifest.diagnostic(row[0].clone(), row[2].parse().unwrap_or(f64::NAN));
    }

    // Plot the two limit gaps against alpha.
    let mut vg_series = Series::new("sup |V_alpha - phi|", PALETTE[0]);
    let mut cg_series = Series::new("sup |u*/alpha + sigma phi'|", PALETTE[1]);
    for (i, &al) in alphas.iter().enumerate() {
        vg_series.points.push((al, value_gaps[i]));
        cg_series.points.push((al, control_gaps[i]));
    }
    vg_series.points.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
    cg_series.points.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
    let plot_svg = line_chart(
        "Solver verification: risk-neutral limit gaps",
        "alpha",
        "sup-norm gap",
        &[vg_series, cg_series],
    );

    runs.rows.clear();
    manifest.total_wall_seconds = started.elapsed().as_secs_f64();
    Ok(ExperimentOutput {
        summary,
        runs,
        manifest,
        plot_svg,
        extra_files: Vec::new(),
    })
}

// ---------------------------------------------------------------------------
// Config-driven generic sweep.
// ---------------------------------------------------------------------------

fn run_custom(cfg: &ExperimentConfig, preset: Option<&str>) -> anyhow::Result<ExperimentOutput> {
    let started = Instant::now();
    let model = cfg.build_model()?;
    let domain = cfg.build_domain()?;

    // Covariate for cov/pcov: the exact driftless-ball field on balls, the
    // solved risk-neutral field on 1-D intervals.
    let needs_cov = cfg
        .estimators
        .iter()
        .any(|e| matches!(e, EstimatorName::Cov | EstimatorName::Pcov));
    let covariate = if needs_cov {
        Some(match cfg.domain {
            DomainSpec::Ball { radius } => CovariateField::ball_mfet(radius, cfg.eps),
            DomainSpec::Interval { a, b } => {
                let grid = Grid1d::new(a, b, cfg.grid_nodes)?;
                CovariateField::Grid1d(solve_linear_bvp(&model, |_| 1.0, 0.0, 0.0, grid)?)
            }
            DomainSpec::Annulus { .. } => {
                bail!("custom: control-variate estimators need a ball or interval domain")
            }
        })
    } else {
        None
    };

    let value_field: Option<(PdeField, f64)> = if cfg
        .estimators
        .contains(&EstimatorName::RiskSensitive)
    {
        let (a, b, _) = interval_params(cfg)?;
        let alpha = *cfg
            .alphas
            .first()
            .ok_or_else(|| anyhow::anyhow!("custom: risk-sensitive estimator needs an alpha"))?;
        let grid = Grid1d::new(a, b, cfg.grid_nodes)?;
        let h = solve_mgf_bvp(&model, |_| 1.0, 0.0, 0.0, alpha, grid)?;
        Some((value_from_mgf(&h, alpha)?, alpha))
    } else {
        None
    };

    let mut summary = SummaryTable::new(&["exact", "per_path_variance"]);
    let mut runs = RunsTable::default();
    let mut manifest = Manifest::new(cfg, preset);
    manifest.note("initial point convention: start = radius * e_1");

    let mut labels: Vec<String> = Vec::new();
    for (ri, &r) in cfg.radii.iter().enumerate() {
        let start = axis_start(cfg.n, r);
        let exact = match cfg.domain {
            DomainSpec::Ball { radius } if matches!(cfg.theta, crate::config::ThetaSpec::Zero) => {
                Some(mfet_bm_ball(&start, radius, cfg.eps)?)
            }
            _ => None,
        };
        let problem = PathProblem::mean_exit_time(domain.clone(), start)?;
        let plan = SamplingPlan::new(
            cfg.dt,
            cfg.n_trajectories,
            cfg.m_runs,
            derive_seed(cfg.seed, ri as u64),
            cfg.max_steps,
        );
        let sweep = sweep_label(r);
        let exact_cell = exact.map(fmt_f64).unwrap_or("NA".into());

        let mut push = |label: String,
                        report: &EstimatorReport,
                        summary: &mut SummaryTable,
                        runs: &mut RunsTable,
                        manifest: &mut Manifest| {
            let extras = vec![exact_cell.clone(), fmt_f64(report.per_path_variance)];
            summary.push_report(&sweep, &label, report, &extras);
            runs.push_report(&sweep, &label, report);
            manifest.timing(format!("{label} r={sweep}"), report.wall_time);
            if !labels.contains(&label) {
                labels.push(label);
            }
        };

        for est in &cfg.estimators {
            match est {
                EstimatorName::Mc => {
                    let report = mc_estimate(&problem, &model, &plan)?;
                    push("mc".into(), &report, &mut summary, &mut runs, &mut manifest);
                }
                EstimatorName::Cov => {
                    let report =
                        cov_estimate(&problem, &model, covariate.as_ref().unwrap(), &plan)?;
                    push("cov".into(), &report, &mut summary, &mut runs, &mut manifest);
                }
                EstimatorName::Pcov => {
                    for &delta in &cfg.deltas {
                        let field =
                            perturb_covariate(covariate.clone().unwrap(), delta)?;
                        let report = cov_estimate(&problem, &model, &field, &plan)?;
                        push(
                            format!("pcov-{}", fmt_f64(delta)),
                            &report,
                            &mut summary,
                            &mut runs,
                            &mut manifest,
                        );
                    }
                }
                EstimatorName::RiskSensitive => {
                    let (field, alpha) = value_field.as_ref().unwrap();
                    let report = risk_sensitive_gamma(&problem, &model, field, *alpha, &plan)?;
                    push(
                        "risk-sensitive".into(),
                        &report,
                        &mut summary,
                        &mut runs,
                        &mut manifest,
                    );
                }
            }
        }
    }

    let plot_svg = sweep_plot(
        &summary,
        &labels,
        "Estimates vs initial radius",
        "initial radius",
        "estimate",
        None,
    );

    manifest.total_wall_seconds = started.elapsed().as_secs_f64();
    Ok(ExperimentOutput {
        summary,
        runs,
        manifest,
        plot_svg,
        extra_files: Vec::new(),
    })
}

/// Standard radius-sweep chart: one error-bar series per estimator plus an
/// optional closed-form reference curve.
fn sweep_plot(
    summary: &SummaryTable,
    estimator_labels: &[String],
    title: &str,
    x_label: &str,
    y_label: &str,
    exact: Option<(&str, &[f64], &dyn Fn(f64) -> f64)>,
) -> String {
    let mut series = Vec::new();
    for (i, label) in estimator_labels.iter().enumerate() {
        let mut s = Series::new(label.clone(), PALETTE[i % PALETTE.len()]);
        for row in &summary.rows {
            if &row[1] == label {
                if let (Ok(x), Ok(y)) = (row[0].parse::<f64>(), row[2].parse::<f64>()) {
                    s.points.push((x, y));
                    if let (Ok(lo), Ok(hi)) = (row[3].parse::<f64>(), row[4].parse::<f64>()) {
                        s.error_bars.push((x, lo, hi));
                    }
                }
            }
        }
        s.points.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
        series.push(s);
    }
    if let Some((label, xs, f)) = exact {
        let mut s = Series::new(label, "#444444");
        s.dashed = true;
        s.points = xs.iter().map(|&x| (x, f(x))).collect();
        s.points.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
        series.push(s);
    }
    line_chart(title, x_label, y_label, &series)
}
