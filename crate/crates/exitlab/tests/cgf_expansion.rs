//! Small-alpha behaviour of the sample cumulant generating function on a
//! fixed set of simulated exit times.

use exitlab::estimators::cgf_naive;
use exitlab::models::{Domain, PathProblem, SdeModel};
use exitlab::trajectory::{run_trajectory, ControlPolicy, RngStream};

fn exit_time_samples(n: u64, seed: u64) -> Vec<f64> {
    let model = SdeModel::brownian(1, 0.05).unwrap();
    let problem =
        PathProblem::mean_exit_time(Domain::interval(-1.0, 1.0).unwrap(), vec![0.0]).unwrap();
    (0..n)
        .map(|i| {
            run_trajectory(
                &model,
                &problem,
                &ControlPolicy::None,
                None,
                1e-3,
                1_000_000,
                RngStream::new(seed, 0, i),
            )
            .unwrap()
            .cost
        })
        .collect()
}

#[test]
fn quadratic_expansion_controls_the_remainder() {
    let samples = exit_time_samples(10_000, 606);
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0);

    let remainder = |alpha: f64| cgf_naive(&samples, alpha).unwrap() - (mean - 0.5 * alpha * var);

    // The remainder is cubic-dominated: r(alpha)/alpha^2 drifts linearly in
    // alpha (third- vs fourth-cumulant contributions), so the coefficient at
    // the checked point comes from linearly extrapolating the two fitted
    // ratios.
    let a1 = 0.02;
    let a2 = 0.04;
    let r1 = remainder(a1) / (a1 * a1);
    let r2 = remainder(a2) / (a2 * a2);
    let a_check = 0.01;
    let c_fit = r1 + (r2 - r1) * (a_check - a1) / (a2 - a1);
    let r_check = remainder(a_check);

    assert!(
        r_check.abs() <= c_fit.abs() * a_check * a_check * 1.05,
        "remainder {} at alpha = {a_check} exceeds fitted quadratic bound {} (ratios: {r1}, {r2})",
        r_check,
        c_fit.abs() * a_check * a_check
    );
    // The remainder really is second order: it shrinks by roughly 4x per
    // alpha halving.
    let shrink = remainder(a2) / remainder(a1);
    assert!(
        (2.5..6.0).contains(&shrink),
        "remainder ratio across halving: {shrink}"
    );
}

#[test]
fn cgf_is_monotone_on_the_sample_set() {
    let samples = exit_time_samples(4_000, 607);
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let mut prev = f64::INFINITY;
    for alpha in [0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.4, 1.0] {
        let g = cgf_naive(&samples, alpha).unwrap();
        assert!(g <= mean + 1e-10);
        assert!(g <= prev + 1e-10);
        prev = g;
    }
}
