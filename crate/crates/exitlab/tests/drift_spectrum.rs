//! Brute-force eigenvalue checks of the built-in tridiagonal drift matrix
//! against an independent dense symmetric eigensolver.

use exitlab::models::make_tridiag_theta;
use nalgebra::DMatrix;

fn eigenvalues(n: usize) -> Vec<f64> {
    let theta = make_tridiag_theta(n).unwrap();
    let dense = DMatrix::from_fn(n, n, |i, j| theta.get(i, j));
    let mut eigs: Vec<f64> = dense
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .collect();
    eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eigs
}

#[test]
fn smallest_eigenvalue_n3_is_two_minus_sqrt_two() {
    let eigs = eigenvalues(3);
    let expected = 2.0 - (2.0f64).sqrt();
    assert!(
        (eigs[0] - expected).abs() < 1e-12,
        "lambda_min = {}, expected {expected}",
        eigs[0]
    );
}

#[test]
fn spectrum_lies_in_open_interval_up_to_128() {
    for n in [1usize, 2, 3, 5, 8, 13, 21, 34, 55, 89, 128] {
        let eigs = eigenvalues(n);
        for (k, lam) in eigs.iter().enumerate() {
            assert!(
                *lam > 0.0 && *lam < 4.0,
                "n = {n}: eigenvalue {k} = {lam} outside (0, 4)"
            );
        }
        // Closed-form spectrum 2 - 2 cos(k pi / (n+1)).
        for (k, lam) in eigs.iter().enumerate() {
            let exact = 2.0 - 2.0 * ((k + 1) as f64 * std::f64::consts::PI / (n + 1) as f64).cos();
            assert!(
                (lam - exact).abs() < 1e-10,
                "n = {n}: eigenvalue {k} = {lam}, closed form {exact}"
            );
        }
    }
}
