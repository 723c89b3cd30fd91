//! Problem parameters and closed-form evaluators for the surface/bulk
//! first-passage system in a disk.
//!
//! The bulk time `t2(r, θ)` is represented by the regular harmonic series
//!
//! ```text
//! t2(r, θ) = α0 (1 + γ φ) − r² / (4 D2) + Σ_{n=1..N} (r/R)ⁿ [ᾱn cos nθ + β̄n sin nθ]
//! ```
//!
//! and the surface time `t1(θ)` on the off-target arc by the exact solution of
//! the surface equation driven by `t2(R − a, θ)`:
//!
//! ```text
//! t1(θ) = c1 H₊(θ') + c2 H₋(θ') + α0 (1 + γ φ) − (R − a)² / (4 D2) + 1/λ
//!       + Σ ρⁿ / (n² / (σλ) + 1) [ᾱn cos nθ + β̄n sin nθ],     ρ = (R − a)/R
//! ```
//!
//! Harmonics use the absolute angle θ. The homogeneous pair uses
//! θ' = θ − θ_c wrapped to `[0, 2π)`, the frame in which the off-target arc is
//! `[ε, 2π − ε]`. The linear γ term uses φ, the same offset wrapped to
//! `[−π, π)`, so its branch cut sits opposite the target and the term is odd
//! about the target center.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("radius {r} outside [0, {radius}]")]
    RadiusOutOfRange { r: f64, radius: f64 },
    #[error("non-finite input")]
    NonFinite,
    #[error("degenerate configuration (lambda = 0 or a = R): use eval_t1_special")]
    Degenerate,
    #[error("non-degenerate configuration (lambda > 0 and a < R): closed form does not apply")]
    NotDegenerate,
    #[error("angle {0} lies inside the target arc")]
    OnTarget(f64),
    #[error("PDE residual undefined at the origin")]
    AtOrigin,
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let w = theta.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Disk radius and the absorbing arc `{θ : dist(θ, θ_c) ≤ ε}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    #[serde(rename = "R")]
    pub radius: f64,
    pub target_center: f64,
    pub target_half_width: f64,
}

impl Geometry {
    pub fn new(radius: f64, target_center: f64, target_half_width: f64) -> Result<Self, ModelError> {
        let g = Geometry {
            radius,
            target_center: wrap_angle(target_center),
            target_half_width,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(ModelError::InvalidParameter(format!(
                "R must be > 0, got {}",
                self.radius
            )));
        }
        let eps = self.target_half_width;
        if !(eps.is_finite() && eps > 0.0 && eps < PI) {
            return Err(ModelError::InvalidParameter(format!(
                "eps must lie in (0, pi), got {eps}"
            )));
        }
        if !self.target_center.is_finite() || !(0.0..TAU).contains(&self.target_center) {
            return Err(ModelError::InvalidParameter(format!(
                "target_center must lie in [0, 2pi), got {}",
                self.target_center
            )));
        }
        Ok(())
    }

    /// Angle measured from the target center, in `[0, 2π)`.
    pub fn relative_angle(&self, theta: f64) -> f64 {
        wrap_angle(theta - self.target_center)
    }

    /// Inverse of [`Geometry::relative_angle`].
    pub fn absolute_angle(&self, relative: f64) -> f64 {
        wrap_angle(relative + self.target_center)
    }

    /// True when θ lies strictly inside the absorbing arc. The arc edges
    /// belong to both sides: `t1` vanishes there.
    pub fn on_target(&self, theta: f64) -> bool {
        let rel = self.relative_angle(theta);
        rel < self.target_half_width || rel > TAU - self.target_half_width
    }

    /// Length (in radians) of the off-target arc, `2π − 2ε`.
    pub fn free_arc(&self) -> f64 {
        TAU - 2.0 * self.target_half_width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transport {
    /// Surface diffusion coefficient.
    #[serde(rename = "D1")]
    pub d1: f64,
    /// Bulk diffusion coefficient.
    #[serde(rename = "D2")]
    pub d2: f64,
    /// Desorption rate.
    pub lambda: f64,
    /// Ejection distance below the boundary after desorption.
    pub a: f64,
}

impl Transport {
    pub fn new(d1: f64, d2: f64, lambda: f64, a: f64) -> Self {
        Transport { d1, d2, lambda, a }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemParams {
    pub geometry: Geometry,
    pub transport: Transport,
}

impl ProblemParams {
    pub fn new(geometry: Geometry, transport: Transport) -> Result<Self, ModelError> {
        let p = ProblemParams { geometry, transport };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.geometry.validate()?;
        let t = &self.transport;
        let bad = |what: &str, v: f64| Err(ModelError::InvalidParameter(format!("{what}, got {v}")));
        if !(t.d1.is_finite() && t.d1 > 0.0) {
            return bad("D1 must be > 0", t.d1);
        }
        if !(t.d2.is_finite() && t.d2 > 0.0) {
            return bad("D2 must be > 0", t.d2);
        }
        if !(t.lambda.is_finite() && t.lambda >= 0.0) {
            return bad("lambda must be >= 0", t.lambda);
        }
        if !(t.a.is_finite() && t.a >= 0.0 && t.a <= self.geometry.radius) {
            return bad("a must lie in [0, R]", t.a);
        }
        let s = sigma(self);
        if !(s.is_finite() && s > 0.0) {
            return bad("sigma = R^2/D1 must be finite and positive", s);
        }
        Ok(())
    }

    /// λ = 0 or a = R: the surface equation collapses to `t1'' = −σ`.
    pub fn is_degenerate(&self) -> bool {
        self.transport.lambda == 0.0 || self.transport.a == self.geometry.radius
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        let mut p = *self;
        p.transport.lambda = lambda;
        p
    }

    pub fn with_target_center(&self, center: f64) -> Self {
        let mut p = *self;
        p.geometry.target_center = wrap_angle(center);
        p
    }
}

/// `σ = R² / D1`.
pub fn sigma(params: &ProblemParams) -> f64 {
    params.geometry.radius * params.geometry.radius / params.transport.d1
}

/// Unknowns of the series representation at truncation order `N`.
///
/// `alpha[n-1]` and `beta[n-1]` hold the pre-scaled coefficients
/// `ᾱn = αn Rⁿ`, `β̄n = βn Rⁿ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesCoefficients {
    pub order: usize,
    pub alpha0: f64,
    pub gamma: f64,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub c1: f64,
    pub c2: f64,
}

impl SeriesCoefficients {
    pub fn zeros(order: usize) -> Self {
        SeriesCoefficients {
            order,
            alpha0: 0.0,
            gamma: 0.0,
            alpha: vec![0.0; order],
            beta: vec![0.0; order],
            c1: 0.0,
            c2: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.alpha0, self.gamma, self.c1, self.c2]
            .iter()
            .chain(&self.alpha)
            .chain(&self.beta)
            .all(|v| v.is_finite())
    }

    /// Unscaled coefficients `(αn, βn) = (ᾱn, β̄n) / Rⁿ`.
    pub fn raw_harmonics(&self, radius: f64) -> (Vec<f64>, Vec<f64>) {
        let unscale = |v: &[f64]| {
            v.iter()
                .enumerate()
                .map(|(i, c)| c / radius.powi(i as i32 + 1))
                .collect()
        };
        (unscale(&self.alpha), unscale(&self.beta))
    }

    fn harmonic(&self, n: usize, theta: f64) -> f64 {
        let (s, c) = (n as f64 * theta).sin_cos();
        self.alpha[n - 1] * c + self.beta[n - 1] * s
    }

    fn check(&self) -> Result<(), ModelError> {
        if self.alpha.len() != self.order || self.beta.len() != self.order {
            return Err(ModelError::InvalidParameter(format!(
                "coefficient lists must have {} entries",
                self.order
            )));
        }
        if !self.is_finite() {
            return Err(ModelError::NonFinite);
        }
        Ok(())
    }
}

/// Angle multiplying γ: the relative angle wrapped to `[−π, π)`.
pub(crate) fn gamma_angle(rel: f64) -> f64 {
    if rel >= PI {
        rel - TAU
    } else {
        rel
    }
}

/// Overflow-safe `sinh(x) / sinh(y)` for `y > 0`.
pub(crate) fn sinh_ratio(x: f64, y: f64) -> f64 {
    if y < 1e-8 {
        return x / y;
    }
    (x - y).exp() * (-(-2.0 * x).exp_m1()) / (-(-2.0 * y).exp_m1())
}

/// Homogeneous pair `(H₊, H₋)` at relative angle θ', normalised so that
/// `H₊(ε) = 0, H₊(2π−ε) = 1` and `H₋(ε) = 1, H₋(2π−ε) = 0`.
pub(crate) fn homogeneous_pair(params: &ProblemParams, rel: f64) -> (f64, f64) {
    let q = (sigma(params) * params.transport.lambda).sqrt();
    let eps = params.geometry.target_half_width;
    let span = params.geometry.free_arc();
    (
        sinh_ratio(q * (rel - eps), q * span),
        sinh_ratio(q * (TAU - eps - rel), q * span),
    )
}

/// Per-harmonic factor `ρⁿ / (n²/(σλ) + 1)` of the surface particular solution.
pub(crate) fn surface_factor(params: &ProblemParams, n: usize) -> f64 {
    let rho = (params.geometry.radius - params.transport.a) / params.geometry.radius;
    let sl = sigma(params) * params.transport.lambda;
    rho.powi(n as i32) / ((n * n) as f64 / sl + 1.0)
}

/// Constant part of `t1`: `1/λ − (R − a)² / (4 D2)`.
pub(crate) fn surface_constant(params: &ProblemParams) -> f64 {
    let t = &params.transport;
    let ra = params.geometry.radius - t.a;
    1.0 / t.lambda - ra * ra / (4.0 * t.d2)
}

fn check_angle(theta: f64) -> Result<(), ModelError> {
    if theta.is_finite() {
        Ok(())
    } else {
        Err(ModelError::NonFinite)
    }
}

/// Bulk mean first-passage time at `(r, θ)`.
pub fn eval_t2(coeffs: &SeriesCoefficients, params: &ProblemParams, r: f64, theta: f64) -> Result<f64, ModelError> {
    coeffs.check()?;
    check_angle(theta)?;
    let radius = params.geometry.radius;
    if !r.is_finite() {
        return Err(ModelError::NonFinite);
    }
    if r < 0.0 || r > radius {
        return Err(ModelError::RadiusOutOfRange { r, radius });
    }
    let theta = wrap_angle(theta);
    let rel = params.geometry.relative_angle(theta);
    let x = r / radius;
    let mut sum = 0.0;
    let mut xn = 1.0;
    for n in 1..=coeffs.order {
        xn *= x;
        sum += xn * coeffs.harmonic(n, theta);
    }
    Ok(coeffs.alpha0 * (1.0 + coeffs.gamma * gamma_angle(rel)) - r * r / (4.0 * params.transport.d2) + sum)
}

fn require_regular(params: &ProblemParams) -> Result<(), ModelError> {
    if params.is_degenerate() {
        Err(ModelError::Degenerate)
    } else {
        Ok(())
    }
}

fn require_off_target(params: &ProblemParams, theta: f64) -> Result<(), ModelError> {
    if params.geometry.on_target(theta) {
        Err(ModelError::OnTarget(theta))
    } else {
        Ok(())
    }
}

/// Surface mean first-passage time at absolute angle θ on the off-target arc.
pub fn eval_t1(coeffs: &SeriesCoefficients, params: &ProblemParams, theta: f64) -> Result<f64, ModelError> {
    coeffs.check()?;
    check_angle(theta)?;
    require_regular(params)?;
    let theta = wrap_angle(theta);
    require_off_target(params, theta)?;
    let rel = params.geometry.relative_angle(theta);
    let (hp, hm) = homogeneous_pair(params, rel);
    let series: f64 = (1..=coeffs.order)
        .map(|n| surface_factor(params, n) * coeffs.harmonic(n, theta))
        .sum();
    Ok(coeffs.c1 * hp
        + coeffs.c2 * hm
        + coeffs.alpha0 * (1.0 + coeffs.gamma * gamma_angle(rel))
        + surface_constant(params)
        + series)
}

/// Closed-form surface time `σ (2π − ε − θ')(θ' − ε) / 2` of the degenerate
/// branch, at absolute angle θ; zero on the target arc.
pub fn eval_t1_special(params: &ProblemParams, theta: f64) -> Result<f64, ModelError> {
    check_angle(theta)?;
    if !params.is_degenerate() {
        return Err(ModelError::NotDegenerate);
    }
    let theta = wrap_angle(theta);
    if params.geometry.on_target(theta) {
        return Ok(0.0);
    }
    let rel = params.geometry.relative_angle(theta);
    let eps = params.geometry.target_half_width;
    Ok(sigma(params) * (TAU - eps - rel) * (rel - eps) / 2.0)
}

/// A residual together with the magnitude of the terms that cancelled to
/// produce it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residual {
    pub value: f64,
    pub scale: f64,
}

impl Residual {
    pub fn relative(&self) -> f64 {
        if self.scale > 0.0 {
            self.value.abs() / self.scale
        } else {
            self.value.abs()
        }
    }
}

/// `t1'' − σλ t1 + σ (1 + λ t2(R − a, θ))` with `t1''` taken analytically.
pub fn t1_ode_residual(
    coeffs: &SeriesCoefficients,
    params: &ProblemParams,
    theta: f64,
) -> Result<Residual, ModelError> {
    let t1 = eval_t1(coeffs, params, theta)?;
    let theta = wrap_angle(theta);
    let rel = params.geometry.relative_angle(theta);
    let s = sigma(params);
    let lambda = params.transport.lambda;
    let q2 = s * lambda;
    let (hp, hm) = homogeneous_pair(params, rel);
    let mut d2t1 = q2 * (coeffs.c1 * hp + coeffs.c2 * hm);
    let mut d2_scale = d2t1.abs();
    for n in 1..=coeffs.order {
        let term = (n * n) as f64 * surface_factor(params, n) * coeffs.harmonic(n, theta);
        d2t1 -= term;
        d2_scale += term.abs();
    }
    let t2 = eval_t2(coeffs, params, params.geometry.radius - params.transport.a, theta)?;
    let value = d2t1 - q2 * t1 + s * (1.0 + lambda * t2);
    let scale = d2_scale + q2 * t1.abs() + s * (1.0 + lambda * t2.abs());
    Ok(Residual { value, scale })
}

/// `D2 Δt2 + 1`, evaluated term by term with analytic polar derivatives.
pub fn t2_pde_residual(
    coeffs: &SeriesCoefficients,
    params: &ProblemParams,
    r: f64,
    theta: f64,
) -> Result<Residual, ModelError> {
    coeffs.check()?;
    check_angle(theta)?;
    let radius = params.geometry.radius;
    if !r.is_finite() {
        return Err(ModelError::NonFinite);
    }
    if r == 0.0 {
        return Err(ModelError::AtOrigin);
    }
    if r < 0.0 || r >= radius {
        return Err(ModelError::RadiusOutOfRange { r, radius });
    }
    let theta = wrap_angle(theta);
    let d2 = params.transport.d2;
    let x = r / radius;
    let mut lap = 0.0;
    let mut scale = 0.0;
    // (r/R)^n h(θ): ∂rr + ∂r/r = n² rⁿ⁻² h / Rⁿ, ∂θθ/r² = −n² rⁿ⁻² h / Rⁿ
    for n in 1..=coeffs.order {
        let nf = n as f64;
        let base = x.powi(n as i32 - 2) / (radius * radius) * coeffs.harmonic(n, theta);
        let radial = (nf * (nf - 1.0) + nf) * base;
        let angular = -nf * nf * base;
        lap += radial + angular;
        scale += radial.abs() + angular.abs();
    }
    // α0 γ θ' is linear in θ': no radial part, zero second angular derivative.
    // −r²/(4 D2): (−2 − 2) / (4 D2) = −1/D2
    let quad = -4.0 / (4.0 * d2);
    lap += quad;
    scale += quad.abs();
    Ok(Residual {
        value: d2 * lap + 1.0,
        scale: d2 * scale + 1.0,
    })
}
