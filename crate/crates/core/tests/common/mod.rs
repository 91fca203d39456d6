#![allow(dead_code)]

use covad::estimators::EstimatorKind;
use covad::linalg::hpd_inverse_logdet;
use covad::model::{generate_pilots, true_covariance, PilotMatrix, SampleCovariance, Scenario, ScenarioConfig};
use covad::rng::SeedStreams;
use covad::{CMatrix, CVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn config(pilot_len: usize, users: usize, active_users: usize, antennas: usize) -> ScenarioConfig {
    ScenarioConfig {
        pilot_len,
        users,
        active_users,
        antennas,
        ..ScenarioConfig::default()
    }
}

pub fn pilots(pilot_len: usize, users: usize, seed: u64) -> PilotMatrix {
    generate_pilots(&config(pilot_len, users, 0, 1), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

/// Scenario drawn from `seed` together with its sample covariance.
pub fn instance(cfg: &ScenarioConfig, seed: u64) -> (Scenario, SampleCovariance) {
    let cfg = ScenarioConfig {
        rng_seed: seed,
        ..cfg.clone()
    };
    let sc = Scenario::generate(&cfg).unwrap();
    let cov = sc.sample_covariance().unwrap();
    (sc, cov)
}

pub fn instance_with_pilots(cfg: &ScenarioConfig, pilots: &PilotMatrix, seed: u64) -> (Scenario, SampleCovariance) {
    let sc = Scenario::generate_with_pilots(cfg, pilots.clone(), &SeedStreams::new(seed)).unwrap();
    let cov = sc.sample_covariance().unwrap();
    (sc, cov)
}

/// Derivative of the dense objective of `kind` along coordinate `k`,
/// computed from a fresh inverse (no rank-one bookkeeping).
pub fn coordinate_derivative(
    kind: EstimatorKind,
    gamma: &[f64],
    pilots: &PilotMatrix,
    base: f64,
    sigma_hat: &SampleCovariance,
    k: usize,
) -> f64 {
    let sigma = true_covariance(pilots, gamma, base).unwrap();
    let a: CVector = pilots.column(k);
    match kind {
        EstimatorKind::Nnls => {
            let r: CMatrix = sigma_hat.matrix() - sigma.matrix();
            -2.0 * a.dotc(&(&r * &a)).re
        }
        _ => {
            let (inv, _) = hpd_inverse_logdet(sigma.matrix()).unwrap();
            let u = &inv * &a;
            let q = u.dotc(&(sigma_hat.matrix() * &u)).re;
            let first = if kind == EstimatorKind::Ml { a.dotc(&u).re } else { 1.0 };
            first - q
        }
    }
}

/// Minimizer over `d >= -gamma[k]` of the objective restricted to
/// coordinate `k`, found by bisection on the sign of its derivative.
/// Each restricted objective has a single stationary point.
pub fn numeric_coordinate_minimizer(
    kind: EstimatorKind,
    gamma: &[f64],
    pilots: &PilotMatrix,
    base: f64,
    sigma_hat: &SampleCovariance,
    k: usize,
) -> f64 {
    let slope = |d: f64| {
        let mut g = gamma.to_vec();
        g[k] = (gamma[k] + d).max(0.0);
        coordinate_derivative(kind, &g, pilots, base, sigma_hat, k)
    };
    let lo_end = -gamma[k];
    if slope(lo_end) >= 0.0 {
        return lo_end;
    }
    let mut hi = 1.0;
    while slope(hi) < 0.0 {
        hi *= 2.0;
        assert!(hi < 1e12, "objective unbounded below along coordinate {k}");
    }
    let mut lo = lo_end;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if slope(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
