//! Step-size bias of discrete exit detection.
//!
//! For driftless diffusion with constant sigma, the Euler-Maruyama state at a
//! shared time is the same for every step size (x_t = sigma W_t), so running
//! one Brownian path and checking the exit condition at three cadences
//! isolates the exit-detection bias. Its mean decays like sqrt(dt): the gap
//! between consecutive halvings must shrink.

use exitlab::models::{Classification, Domain};
use exitlab::trajectory::{em_step, ControlPolicy, RngStream};
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

#[test]
fn exit_time_bias_decays_under_halving() {
    let eps = 0.05f64;
    let sigma = (2.0 * eps).sqrt();
    let h: f64 = 1e-3;
    let sqrt_h = h.sqrt();
    let domain = Domain::interval(-1.0, 1.0).unwrap();
    let n_paths = 4_000u64;
    let budget = 200_000usize; // fine steps; exit beyond this is ~e^{-25}

    let mut mean_fine = 0.0;
    let mut mean_mid = 0.0;
    let mut mean_coarse = 0.0;

    for i in 0..n_paths {
        let mut rng = RngStream::new(555, 0, i).rng();
        let mut x = 0.0f64;
        let mut tau_fine: Option<f64> = None;
        let mut tau_mid: Option<f64> = None;
        let mut tau_coarse: Option<f64> = None;
        for k in 1..=budget {
            let z: f64 = StandardNormal.sample(&mut rng);
            x += sigma * sqrt_h * z;
            let outside = !domain.classify(&[x]).is_interior();
            if tau_fine.is_none() && outside {
                tau_fine = Some(k as f64 * h);
            }
            if tau_mid.is_none() && k % 2 == 0 && outside {
                tau_mid = Some(k as f64 * h);
            }
            if tau_coarse.is_none() && k % 4 == 0 && outside {
                tau_coarse = Some(k as f64 * h);
            }
            if tau_fine.is_some() && tau_mid.is_some() && tau_coarse.is_some() {
                break;
            }
        }
        let cap = budget as f64 * h;
        mean_fine += tau_fine.unwrap_or(cap);
        mean_mid += tau_mid.unwrap_or(cap);
        mean_coarse += tau_coarse.unwrap_or(cap);
    }
    mean_fine /= n_paths as f64;
    mean_mid /= n_paths as f64;
    mean_coarse /= n_paths as f64;

    // Coarser checking can only delay detection.
    assert!(mean_coarse > mean_mid && mean_mid > mean_fine);
    let d1 = mean_coarse - mean_mid; // 4h vs 2h
    let d2 = mean_mid - mean_fine; // 2h vs h
    assert!(
        d1 > d2,
        "halving gap must shrink: d(4h,2h) = {d1}, d(2h,h) = {d2}"
    );
    // Exit-time estimates stay near the analytic value 10.
    assert!((9.5..10.7).contains(&mean_fine), "fine mean {mean_fine}");
}

#[test]
fn em_step_driftless_is_pure_noise_accumulation() {
    // The hand-rolled accumulation above matches the public stepper.
    let model = exitlab::models::SdeModel::brownian(1, 0.05).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
    let mut x = vec![0.0f64];
    let mut acc = 0.0f64;
    let sigma = (0.1f64).sqrt();
    let sqrt_h = (1e-3f64).sqrt();
    for k in 0..1000 {
        let z: f64 = StandardNormal.sample(&mut rng);
        let dw = sqrt_h * z;
        x = em_step(&x, k as f64 * 1e-3, &model, &ControlPolicy::None, 1e-3, &[dw]).unwrap();
        acc += sigma * dw;
        assert!((x[0] - acc).abs() < 1e-12);
    }
    assert!(matches!(
        Domain::interval(-1.0, 1.0).unwrap().classify(&x),
        Classification::Interior | Classification::Exited(_)
    ));
}
