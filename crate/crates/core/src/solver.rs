//! Least-squares Fourier collocation for the series coefficients.
//!
//! The matching condition `t2(R, θ) = t1(θ)` off the target and `t2(R, θ) = 0`
//! on it is imposed at `M = oversampling × unknowns` equispaced angles,
//! together with the two absorbing endpoint rows `t1(ε) = t1(2π − ε) = 0`.
//! All rows are linear in the unknown vector
//!
//! ```text
//! [α0, (α0·γ), ᾱ1..ᾱN, (β̄1..β̄N), c1, c2]
//! ```
//!
//! The collocation grid is anchored at the target center so that a rotated
//! target produces an exactly rotated system, and its size depends only on
//! `N`, so cosine-only and full fits see the same points.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    eval_t1, eval_t1_special, eval_t2, gamma_angle, homogeneous_pair, surface_constant, surface_factor,
    t1_ode_residual, ModelError, ProblemParams, SeriesCoefficients,
};
use crate::quadrature::CompositeGauss;

/// Points of the verification grid used for the stored diagnostics.
pub const VERIFICATION_GRID: usize = 4096;

/// `boundary_residual_sup` above this fraction of `max |t1|` means the
/// truncation order is too small for the target width.
pub const RESIDUAL_FLOOR: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Cosine harmonics only.
    Symmetric,
    /// Cosine and sine harmonics.
    General,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Symmetric => "symmetric",
            Mode::General => "general",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "symmetric" => Ok(Mode::Symmetric),
            "general" => Ok(Mode::General),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

/// How the surface time is reduced to a single number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MeanConvention {
    /// `∫ t1 dθ` over the off-target arc.
    Integral,
    /// The integral divided by the arc length `2π − 2ε`.
    Average,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub order: usize,
    pub oversampling: usize,
    pub mode: Mode,
    pub gamma_enabled: bool,
    pub quadrature_points: usize,
    pub rank_tolerance: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            order: 32,
            oversampling: 4,
            mode: Mode::Symmetric,
            gamma_enabled: false,
            quadrature_points: 2048,
            rank_tolerance: 1e-12,
        }
    }
}

impl SolverConfig {
    pub fn with_order(mut self, order: usize) -> Self {
        self.order = order;
        self
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<(), SolveError> {
        let bad = |m: String| Err(SolveError::InvalidConfig(m));
        if self.order < 1 {
            return bad("order must be >= 1".into());
        }
        if self.oversampling < 2 {
            return bad("oversampling must be >= 2".into());
        }
        if self.quadrature_points < 64 {
            return bad("quadrature_points must be >= 64".into());
        }
        if !(self.rank_tolerance.is_finite() && self.rank_tolerance > 0.0 && self.rank_tolerance < 1.0) {
            return bad(format!(
                "rank_tolerance must lie in (0, 1), got {}",
                self.rank_tolerance
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Error)]
pub enum SolveError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("degenerate configuration (lambda = 0 or a = R): use the closed-form branch")]
    Degenerate,
    #[error("ill-conditioned beyond rank_tolerance (condition estimate {condition:.3e})")]
    IllConditioned { condition: f64 },
    #[error(
        "residual floor exceeded: boundary residual {sup:.3e} > {RESIDUAL_FLOOR} x {scale:.3e}; increase the order"
    )]
    ResidualFloor {
        sup: f64,
        scale: f64,
        solution: Box<SpectralSolution>,
    },
    #[error("diagnostic undefined for degenerate branch")]
    DegenerateDiagnostic,
}

/// Column positions of the unknowns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnknownLayout {
    pub order: usize,
    pub general: bool,
    pub gamma: bool,
}

impl UnknownLayout {
    pub fn new(order: usize, mode: Mode, gamma: bool) -> Self {
        UnknownLayout {
            order,
            general: mode == Mode::General,
            gamma,
        }
    }

    pub fn count(&self) -> usize {
        1 + usize::from(self.gamma) + self.order * if self.general { 2 } else { 1 } + 2
    }

    pub fn alpha0(&self) -> usize {
        0
    }

    /// Column of the product `α0·γ`, which is what enters linearly.
    pub fn gamma(&self) -> Option<usize> {
        self.gamma.then_some(1)
    }

    pub fn alpha(&self, n: usize) -> usize {
        usize::from(self.gamma) + n
    }

    pub fn beta(&self, n: usize) -> Option<usize> {
        self.general.then(|| usize::from(self.gamma) + self.order + n)
    }

    pub fn c1(&self) -> usize {
        self.count() - 2
    }

    pub fn c2(&self) -> usize {
        self.count() - 1
    }

    pub fn unpack(&self, x: &DVector<f64>) -> SeriesCoefficients {
        let alpha0 = x[self.alpha0()];
        let gamma = match self.gamma() {
            Some(i) if alpha0 != 0.0 => x[i] / alpha0,
            _ => 0.0,
        };
        SeriesCoefficients {
            order: self.order,
            alpha0,
            gamma,
            alpha: (1..=self.order).map(|n| x[self.alpha(n)]).collect(),
            beta: (1..=self.order).map(|n| self.beta(n).map_or(0.0, |i| x[i])).collect(),
            c1: x[self.c1()],
            c2: x[self.c2()],
        }
    }
}

/// Overdetermined linear system `A x ≈ b`.
#[derive(Debug, Clone)]
pub struct LeastSquaresSystem {
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub layout: UnknownLayout,
    /// Absolute collocation angles, one per leading row.
    pub collocation: Vec<f64>,
}

impl LeastSquaresSystem {
    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn unknowns(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Unknowns of the full (cosine and sine, γ off) layout, `2N + 3`; the
/// collocation grid has `oversampling` points per such unknown in every mode.
pub fn collocation_basis(order: usize) -> usize {
    2 * order + 3
}

/// Builds the collocation system; rows `0..M` are the matching rows, the last
/// two are the endpoint rows weighted by `√M`.
pub fn assemble_system(params: &ProblemParams, config: &SolverConfig) -> Result<LeastSquaresSystem, SolveError> {
    params.validate()?;
    config.validate()?;
    if params.is_degenerate() {
        return Err(SolveError::Degenerate);
    }
    let layout = UnknownLayout::new(config.order, config.mode, config.gamma_enabled);
    let cols = layout.count();
    let m = config.oversampling * collocation_basis(config.order);
    let geometry = &params.geometry;
    let eps = geometry.target_half_width;
    let radius = geometry.radius;
    let d2 = params.transport.d2;
    let factors: Vec<f64> = (1..=config.order).map(|n| surface_factor(params, n)).collect();
    let constant = surface_constant(params);
    let wall = radius * radius / (4.0 * d2);

    let mut a = DMatrix::<f64>::zeros(m + 2, cols);
    let mut b = DVector::<f64>::zeros(m + 2);
    let mut collocation = Vec::with_capacity(m);

    let put_harmonics = |a: &mut DMatrix<f64>, row: usize, theta: f64, weight: &dyn Fn(usize) -> f64| {
        for n in 1..=config.order {
            let (s, c) = (n as f64 * theta).sin_cos();
            let w = weight(n);
            a[(row, layout.alpha(n))] = w * c;
            if let Some(j) = layout.beta(n) {
                a[(row, j)] = w * s;
            }
        }
    };

    for j in 0..m {
        let rel = TAU * j as f64 / m as f64;
        let theta = geometry.absolute_angle(rel);
        collocation.push(theta);
        if geometry.on_target(theta) {
            // t2(R, θ) = 0
            a[(j, layout.alpha0())] = 1.0;
            if let Some(g) = layout.gamma() {
                a[(j, g)] = gamma_angle(rel);
            }
            put_harmonics(&mut a, j, theta, &|_| 1.0);
            b[j] = wall;
        } else {
            // t2(R, θ) − t1(θ) = 0; α0 and α0γθ' cancel.
            put_harmonics(&mut a, j, theta, &|n| 1.0 - factors[n - 1]);
            let (hp, hm) = homogeneous_pair(params, rel);
            a[(j, layout.c1())] = -hp;
            a[(j, layout.c2())] = -hm;
            b[j] = wall + constant;
        }
    }

    let weight = (m as f64).sqrt();
    for (k, rel) in [eps, TAU - eps].into_iter().enumerate() {
        let row = m + k;
        let theta = geometry.absolute_angle(rel);
        a[(row, layout.alpha0())] = weight;
        if let Some(g) = layout.gamma() {
            a[(row, g)] = weight * gamma_angle(rel);
        }
        put_harmonics(&mut a, row, theta, &|n| weight * factors[n - 1]);
        let (hp, hm) = homogeneous_pair(params, rel);
        a[(row, layout.c1())] = weight * hp;
        a[(row, layout.c2())] = weight * hm;
        b[row] = -weight * constant;
    }

    Ok(LeastSquaresSystem {
        matrix: a,
        rhs: b,
        layout,
        collocation,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralSolution {
    pub coeffs: SeriesCoefficients,
    pub params: ProblemParams,
    pub config: SolverConfig,
    pub mode: Mode,
    pub boundary_residual_sup: f64,
    pub boundary_residual_l2: f64,
    pub ode_residual_max: f64,
    pub condition_estimate: f64,
    pub degenerate: bool,
}

impl SpectralSolution {
    /// Surface time at absolute angle θ; zero on the target arc.
    pub fn t1(&self, theta: f64) -> Result<f64, ModelError> {
        if self.degenerate {
            return eval_t1_special(&self.params, theta);
        }
        if self.params.geometry.on_target(theta) {
            return Ok(0.0);
        }
        eval_t1(&self.coeffs, &self.params, theta)
    }

    /// Bulk time; undefined on the degenerate branch.
    pub fn t2(&self, r: f64, theta: f64) -> Result<f64, SolveError> {
        if self.degenerate {
            return Err(SolveError::DegenerateDiagnostic);
        }
        Ok(eval_t2(&self.coeffs, &self.params, r, theta)?)
    }

    pub fn mean(&self, convention: MeanConvention) -> f64 {
        mean_surface_mfpt(self, convention)
    }

    /// Samples `(θ, t1)` at `points` equispaced angles over the whole circle.
    pub fn profile(&self, points: usize) -> Result<Vec<(f64, f64)>, ModelError> {
        (0..points)
            .map(|k| {
                let theta = TAU * k as f64 / points as f64;
                self.t1(theta).map(|v| (theta, v))
            })
            .collect()
    }
}

/// Least squares over the matching rows with the two endpoint rows imposed
/// exactly. The endpoint block in the `(c1, c2)` columns is a weighted
/// permutation, so `c1, c2` are eliminated and the reduced problem is solved
/// by QR. Returns the solution and the condition estimate of the reduced
/// matrix.
fn constrained_least_squares(
    system: &LeastSquaresSystem,
    rank_tolerance: f64,
) -> Result<(DVector<f64>, f64), SolveError> {
    let layout = &system.layout;
    let m = system.collocation.len();
    let n = system.unknowns();
    let pivots = [layout.c1(), layout.c2()];
    let free: Vec<usize> = (0..n).filter(|j| !pivots.contains(j)).collect();

    let a = &system.matrix;
    let block = DMatrix::from_fn(2, 2, |i, k| a[(m + i, pivots[k])]);
    let coupling = DMatrix::from_fn(2, free.len(), |i, k| a[(m + i, free[k])]);
    let target = system.rhs.rows(m, 2).into_owned();
    let lu = block.lu();
    let elim_free = lu.solve(&coupling).ok_or(SolveError::IllConditioned {
        condition: f64::INFINITY,
    })?;
    let elim_rhs = lu.solve(&target).ok_or(SolveError::IllConditioned {
        condition: f64::INFINITY,
    })?;

    // x_B = elim_rhs − elim_free · x_N
    let top_pivot = DMatrix::from_fn(m, 2, |i, k| a[(i, pivots[k])]);
    let top_free = DMatrix::from_fn(m, free.len(), |i, k| a[(i, free[k])]);
    let reduced = top_free - &top_pivot * &elim_free;
    let reduced_rhs = system.rhs.rows(0, m) - &top_pivot * &elim_rhs;

    // The singular values only feed the condition estimate; the solve itself
    // goes through Householder QR, which is markedly more accurate here than
    // the SVD-based least-squares solve.
    let singular = reduced.singular_values();
    let smax = singular.max();
    let smin = singular.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(smin > rank_tolerance * smax) {
        return Err(SolveError::IllConditioned { condition });
    }
    let qr = reduced.qr();
    let x_free = qr
        .r()
        .solve_upper_triangular(&(qr.q().transpose() * reduced_rhs))
        .ok_or(SolveError::IllConditioned { condition })?;
    let x_pivot = elim_rhs - elim_free * &x_free;

    let mut x = DVector::zeros(n);
    for (k, &j) in free.iter().enumerate() {
        x[j] = x_free[k];
    }
    for (k, &j) in pivots.iter().enumerate() {
        x[j] = x_pivot[k];
    }
    Ok((x, condition))
}

/// Solution without the residual-floor check. Use this to inspect fits that
/// are expected to be poor (for instance cosine-only fits of a rotated target).
pub fn fit(params: &ProblemParams, config: &SolverConfig) -> Result<SpectralSolution, SolveError> {
    params.validate()?;
    config.validate()?;
    if params.is_degenerate() {
        return Ok(SpectralSolution {
            coeffs: SeriesCoefficients::zeros(config.order),
            params: *params,
            config: *config,
            mode: config.mode,
            boundary_residual_sup: 0.0,
            boundary_residual_l2: 0.0,
            ode_residual_max: 0.0,
            condition_estimate: 1.0,
            degenerate: true,
        });
    }
    let system = assemble_system(params, config)?;
    let (x, condition) = constrained_least_squares(&system, config.rank_tolerance)?;
    let coeffs = system.layout.unpack(&x);
    if !coeffs.is_finite() {
        return Err(SolveError::IllConditioned { condition });
    }
    let mut solution = SpectralSolution {
        coeffs,
        params: *params,
        config: *config,
        mode: config.mode,
        boundary_residual_sup: 0.0,
        boundary_residual_l2: 0.0,
        ode_residual_max: 0.0,
        condition_estimate: condition,
        degenerate: false,
    };
    let (sup, l2) = boundary_residual(&solution, VERIFICATION_GRID)?;
    solution.boundary_residual_sup = sup;
    solution.boundary_residual_l2 = l2;
    let mut ode_max = 0.0f64;
    for theta in verification_grid(params, VERIFICATION_GRID) {
        if !params.geometry.on_target(theta) {
            ode_max = ode_max.max(t1_ode_residual(&solution.coeffs, params, theta)?.relative());
        }
    }
    solution.ode_residual_max = ode_max;
    Ok(solution)
}

/// Solves for the series coefficients, rejecting fits whose boundary residual
/// exceeds [`RESIDUAL_FLOOR`] of the solution scale.
pub fn solve(params: &ProblemParams, config: &SolverConfig) -> Result<SpectralSolution, SolveError> {
    let solution = fit(params, config)?;
    if solution.degenerate {
        return Ok(solution);
    }
    let scale = verification_grid(params, VERIFICATION_GRID)
        .map(|theta| solution.t1(theta).map(f64::abs))
        .try_fold(0.0f64, |acc, v| v.map(|v| acc.max(v)))?;
    if solution.boundary_residual_sup > RESIDUAL_FLOOR * scale {
        return Err(SolveError::ResidualFloor {
            sup: solution.boundary_residual_sup,
            scale,
            solution: Box::new(solution),
        });
    }
    Ok(solution)
}

/// Equispaced grid anchored half a step past the target center.
fn verification_grid(params: &ProblemParams, size: usize) -> impl Iterator<Item = f64> + '_ {
    (0..size).map(move |k| params.geometry.absolute_angle(TAU * (k as f64 + 0.5) / size as f64))
}

/// Mean surface first-passage time by composite Gauss–Legendre quadrature
/// over the off-target arc.
pub fn mean_surface_mfpt(solution: &SpectralSolution, convention: MeanConvention) -> f64 {
    let geometry = &solution.params.geometry;
    let eps = geometry.target_half_width;
    let rule = CompositeGauss::new(eps, TAU - eps, solution.config.quadrature_points);
    let integral = rule
        .try_integrate(|rel| solution.t1(geometry.absolute_angle(rel)))
        .expect("quadrature nodes lie inside the off-target arc");
    match convention {
        MeanConvention::Integral => integral,
        MeanConvention::Average => integral / geometry.free_arc(),
    }
}

/// `(sup, rms)` of the matching defect on a grid of `grid_size` points offset
/// half a step from the collocation anchor.
pub fn boundary_residual(solution: &SpectralSolution, grid_size: usize) -> Result<(f64, f64), SolveError> {
    if solution.degenerate {
        return Err(SolveError::DegenerateDiagnostic);
    }
    let params = &solution.params;
    let radius = params.geometry.radius;
    let mut sup = 0.0f64;
    let mut sum_sq = 0.0;
    for theta in verification_grid(params, grid_size) {
        let wall = eval_t2(&solution.coeffs, params, radius, theta)?;
        let defect = if params.geometry.on_target(theta) {
            wall
        } else {
            wall - eval_t1(&solution.coeffs, params, theta)?
        };
        sup = sup.max(defect.abs());
        sum_sq += defect * defect;
    }
    Ok((sup, (sum_sq / grid_size as f64).sqrt()))
}

#[derive(Debug, Clone)]
pub struct ConvergenceRow {
    pub order: usize,
    pub outcome: Result<(f64, f64), SolveError>,
}

impl ConvergenceRow {
    pub fn mean(&self) -> Option<f64> {
        self.outcome.as_ref().ok().map(|o| o.0)
    }

    pub fn residual_l2(&self) -> Option<f64> {
        self.outcome.as_ref().ok().map(|o| o.1)
    }
}

/// One solve per truncation order; failed orders are kept as error rows.
/// Degenerate configurations report a zero residual for every order.
pub fn convergence_study(
    params: &ProblemParams,
    config: &SolverConfig,
    orders: &[usize],
    convention: MeanConvention,
) -> Result<Vec<ConvergenceRow>, SolveError> {
    if orders.is_empty() || orders.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SolveError::InvalidConfig(
            "orders must be non-empty and strictly increasing".into(),
        ));
    }
    Ok(orders
        .iter()
        .map(|&order| ConvergenceRow {
            order,
            outcome: solve(params, &config.with_order(order)).map(|s| (s.mean(convention), s.boundary_residual_l2)),
        })
        .collect())
}
