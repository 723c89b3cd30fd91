#![allow(dead_code)]

use std::f64::consts::{PI, TAU};

use rand::Rng;
use smd::model::{Geometry, ProblemParams, SeriesCoefficients, Transport};

pub fn params(radius: f64, d1: f64, d2: f64, lambda: f64, a: f64, eps: f64, center: f64) -> ProblemParams {
    ProblemParams::new(
        Geometry::new(radius, center, eps).unwrap(),
        Transport::new(d1, d2, lambda, a),
    )
    .unwrap()
}

/// R = D1 = D2 = λ = 1, a = 0.1, ε = 0.3, target at θ = 0.
pub fn reference() -> ProblemParams {
    params(1.0, 1.0, 1.0, 1.0, 0.1, 0.3, 0.0)
}

/// Closed form of the surface time when no bulk excursions happen.
pub fn no_excursion_t1(sigma: f64, eps: f64, rel: f64) -> f64 {
    if rel < eps || rel > TAU - eps {
        0.0
    } else {
        sigma * (TAU - eps - rel) * (rel - eps) / 2.0
    }
}

/// Valid, non-degenerate parameters with moderate stiffness `σλ ≤ 40`.
pub fn random_params<R: Rng>(rng: &mut R) -> ProblemParams {
    let radius: f64 = rng.gen_range(0.5..2.0);
    let d1: f64 = rng.gen_range(0.5..4.0);
    let d2 = rng.gen_range(0.2..5.0);
    let sigma = radius * radius / d1;
    let lambda = rng.gen_range(0.05..(40.0 / sigma).min(10.0));
    let a = radius * rng.gen_range(0.05..0.95);
    let eps = rng.gen_range(0.05..1.0);
    let center = rng.gen_range(0.0..TAU);
    params(radius, d1, d2, lambda, a, eps, center)
}

pub fn random_coefficients<R: Rng>(rng: &mut R, order: usize, gamma: bool) -> SeriesCoefficients {
    let mut c = SeriesCoefficients::zeros(order);
    c.alpha0 = rng.gen_range(-2.0..2.0);
    if gamma {
        c.gamma = rng.gen_range(-0.5..0.5);
    }
    for n in 0..order {
        c.alpha[n] = rng.gen_range(-1.0..1.0);
        c.beta[n] = rng.gen_range(-1.0..1.0);
    }
    c.c1 = rng.gen_range(-2.0..2.0);
    c.c2 = rng.gen_range(-2.0..2.0);
    c
}

/// Absolute angle on the free arc at least `margin` away from both target
/// edges and from the antipode of the target center.
pub fn random_free_angle<R: Rng>(rng: &mut R, p: &ProblemParams, margin: f64) -> f64 {
    let eps = p.geometry.target_half_width;
    loop {
        let rel: f64 = rng.gen_range((eps + margin)..(TAU - eps - margin));
        if (rel - PI).abs() > margin {
            return p.geometry.absolute_angle(rel);
        }
    }
}
