//! The per-path risk-sensitive estimator against the closed-form value, and
//! the variational inequality table for a family of constant controls.

use exitlab::analytic::value_exit_bm_1d;
use exitlab::estimators::{gibbs_check, mc_estimate, risk_sensitive_gamma, SamplingPlan};
use exitlab::models::{Domain, PathProblem, SdeModel};
use exitlab::pde::{solve_mgf_bvp, value_from_mgf, Grid1d};
use exitlab::trajectory::ControlPolicy;

fn setup() -> (SdeModel, PathProblem) {
    let model = SdeModel::brownian(1, 0.05).unwrap();
    let problem =
        PathProblem::mean_exit_time(Domain::interval(-1.0, 1.0).unwrap(), vec![0.0]).unwrap();
    (model, problem)
}

fn value_field(model: &SdeModel, alpha: f64) -> exitlab::pde::PdeField {
    let grid = Grid1d::new(-1.0, 1.0, 1999).unwrap();
    let h = solve_mgf_bvp(model, |_| 1.0, 0.0, 0.0, alpha, grid).unwrap();
    value_from_mgf(&h, alpha).unwrap()
}

#[test]
fn gamma_estimate_tracks_the_analytic_value() {
    let (model, problem) = setup();
    let alpha = 0.1;
    let field = value_field(&model, alpha);
    let plan = SamplingPlan::new(1e-3, 200, 10, 8_080, 1_000_000);
    let report = risk_sensitive_gamma(&problem, &model, &field, alpha, &plan).unwrap();

    let exact = value_exit_bm_1d(0.0, 1.0, 0.05, alpha).unwrap();
    assert!(
        (report.mean() - exact).abs() / exact <= 0.02,
        "gamma {} vs analytic {exact}",
        report.mean()
    );
    // The moment-generating-function form must agree after the log transform.
    let gamma_from_mgf = -report.mgf_mean.unwrap().ln() / alpha;
    assert!(
        (gamma_from_mgf - exact).abs() / exact <= 0.02,
        "mgf-form gamma {gamma_from_mgf} vs analytic {exact}"
    );
    // Controlled dynamics exit faster than uncontrolled on average.
    let mc = mc_estimate(&problem, &model, &plan).unwrap();
    assert!(report.mean_tau < mc.mean_tau, "control must shorten paths");
}

#[test]
fn gibbs_inequality_holds_for_constant_controls() {
    let (model, problem) = setup();
    let alpha = 0.1;
    let plan = SamplingPlan::new(1e-3, 2_000, 1, 44_001, 1_000_000);

    let field = value_field(&model, alpha);
    let optimal = ControlPolicy::pde_control(field, alpha, problem.domain()).unwrap();
    let controls = vec![
        ("u=0".to_string(), ControlPolicy::None),
        ("u=0.25".to_string(), ControlPolicy::constant(vec![0.25])),
        ("u=0.5".to_string(), ControlPolicy::constant(vec![0.5])),
        ("u=1.0".to_string(), ControlPolicy::constant(vec![1.0])),
        ("u=u*".to_string(), optimal),
    ];
    let table = gibbs_check(&problem, &model, &controls, alpha, &plan).unwrap();

    // Zero control: the bound is E[S] and the slack is E[S] - gamma > 0.
    let row0 = &table.rows[0];
    assert_eq!(row0.kl, 0.0);
    assert!(row0.slack > 0.0, "zero-control slack {}", row0.slack);

    for row in &table.rows {
        let combined_se = (table.gamma_naive_se.powi(2) + row.bound_se.powi(2)).sqrt();
        assert!(
            table.gamma_naive <= row.bound + 3.0 * combined_se,
            "{}: gamma {} > bound {} + 3 SE {}",
            row.label,
            table.gamma_naive,
            row.bound,
            combined_se
        );
    }

    // The feedback control attains the smallest slack among the tested set.
    let slack_star = table.rows.last().unwrap().slack;
    for row in &table.rows[..table.rows.len() - 1] {
        assert!(
            slack_star <= row.slack,
            "optimal-control slack {slack_star} must not exceed {} ({})",
            row.slack,
            row.label
        );
    }
}
