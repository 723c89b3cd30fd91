//! Stochastic simulation of the adsorb/desorb process, used as an independent
//! check on the spectral solver.
//!
//! A path alternates between angular diffusion on the circle and planar
//! diffusion in the disk:
//!
//! * surface: `θ += √(2 D1 dt / R²) ξ`; absorbed when the step lands on the
//!   target arc; desorbs at rate λ, jumping radially to `r = R − a`;
//! * bulk: `(x, y) += √(2 D2 dt) (ξ1, ξ2)`; on reaching `r ≥ R` the particle
//!   sticks at the endpoint's angle and is absorbed if that angle is on target.
//!
//! Every path draws from its own ChaCha stream keyed by the master seed and
//! the path index, so results do not depend on scheduling.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, ProblemParams};

/// Censoring above this fraction of paths invalidates an estimate.
pub const MAX_CENSORED_FRACTION: f64 = 1e-3;

/// Default master seed when none is given.
pub const DEFAULT_SEED: u64 = 0x5eed_2010;

#[derive(Debug, Clone, Error)]
pub enum McError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid Monte Carlo configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid start state: {0}")]
    InvalidStart(String),
    #[error("estimate invalid: censoring exceeded ({censored} of {paths} paths hit max_time)")]
    CensoringExceeded {
        censored: u64,
        paths: u64,
        estimate: Box<McEstimate>,
    },
    #[error("degenerate sample: standard error is zero")]
    DegenerateSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub paths: u64,
    pub dt_surface: f64,
    pub dt_bulk: f64,
    pub seed: u64,
    pub max_time: f64,
}

impl McConfig {
    /// Default time step `1e-4 R² / max(D1, D2)` in both phases, 5×10⁴ paths.
    pub fn for_params(params: &ProblemParams) -> Self {
        let dt = 1e-4 * Self::time_scale(params);
        let t = &params.transport;
        let r2 = params.geometry.radius * params.geometry.radius;
        McConfig {
            paths: 50_000,
            dt_surface: dt,
            dt_bulk: dt,
            seed: DEFAULT_SEED,
            max_time: 1e3 * r2 / t.d1.min(t.d2),
        }
    }

    /// `R² / max(D1, D2)`.
    pub fn time_scale(params: &ProblemParams) -> f64 {
        let t = &params.transport;
        params.geometry.radius * params.geometry.radius / t.d1.max(t.d2)
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt_surface = dt;
        self.dt_bulk = dt;
        self
    }

    pub fn with_paths(mut self, paths: u64) -> Self {
        self.paths = paths;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self, params: &ProblemParams) -> Result<(), McError> {
        let bad = |m: String| Err(McError::InvalidConfig(m));
        if self.paths < 1 {
            return bad("paths must be >= 1".into());
        }
        let dt_max = 1e-2 * Self::time_scale(params);
        for (name, dt) in [("dt_surface", self.dt_surface), ("dt_bulk", self.dt_bulk)] {
            if !(dt.is_finite() && dt > 0.0 && dt <= dt_max) {
                return bad(format!("{name} must lie in (0, {dt_max:e}], got {dt}"));
            }
        }
        if !(self.max_time.is_finite() && self.max_time > 0.0) {
            return bad(format!("max_time must be > 0, got {}", self.max_time));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "phase")]
pub enum StartState {
    /// Bound to the boundary at absolute angle `theta`.
    Surface { theta: f64 },
    /// Free at `(r, theta)` with `r < R`.
    Bulk { r: f64, theta: f64 },
    /// Surface starts stratified evenly over the off-target arc.
    UniformOffTargetSurface,
}

impl StartState {
    pub fn validate(&self, params: &ProblemParams) -> Result<(), McError> {
        match *self {
            StartState::Surface { theta } => {
                if !theta.is_finite() || params.geometry.on_target(theta) {
                    return Err(McError::InvalidStart(format!("surface start {theta} is on the target")));
                }
            }
            StartState::Bulk { r, theta } => {
                if !(r.is_finite() && theta.is_finite() && r >= 0.0 && r < params.geometry.radius) {
                    return Err(McError::InvalidStart(format!(
                        "bulk start needs 0 <= r < R, got r = {r}"
                    )));
                }
            }
            StartState::UniformOffTargetSurface => {}
        }
        Ok(())
    }

    /// Concrete start of path `index` out of `paths`.
    fn resolve(&self, params: &ProblemParams, index: u64, paths: u64) -> StartState {
        match *self {
            StartState::UniformOffTargetSurface => {
                let g = &params.geometry;
                let rel = g.target_half_width + g.free_arc() * (index as f64 + 0.5) / paths as f64;
                StartState::Surface {
                    theta: g.absolute_angle(rel),
                }
            }
            other => other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathOutcome {
    Absorbed { time: f64, desorptions: u64 },
    Censored { desorptions: u64 },
}

impl PathOutcome {
    pub fn time(&self) -> Option<f64> {
        match self {
            PathOutcome::Absorbed { time, .. } => Some(*time),
            PathOutcome::Censored { .. } => None,
        }
    }

    pub fn desorptions(&self) -> u64 {
        match self {
            PathOutcome::Absorbed { desorptions, .. } | PathOutcome::Censored { desorptions } => *desorptions,
        }
    }
}

/// SplitMix64 finaliser.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of path `index` under `master`.
pub fn path_seed(master: u64, index: u64) -> u64 {
    mix64(master ^ mix64(index))
}

/// Steps survived on the surface before desorbing. Per-step desorption with
/// probability `1 − e^{−λ dt}` gives `P(K ≥ k) = e^{−λ dt k}`, i.e.
/// `K = ⌊E / (λ dt)⌋` with `E ~ Exp(1)`.
fn surface_steps<R: Rng>(rng: &mut R, lambda: f64, dt: f64) -> u64 {
    if lambda == 0.0 {
        return u64::MAX;
    }
    let e: f64 = rng.sample(Exp1);
    let k = (e / (lambda * dt)).floor();
    if k >= u64::MAX as f64 {
        u64::MAX
    } else {
        k as u64
    }
}

/// First-passage time of one path.
pub fn fpt_single_path(params: &ProblemParams, start: StartState, config: &McConfig, seed: u64) -> PathOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = &params.geometry;
    let t = &params.transport;
    let eps = g.target_half_width;
    let upper = TAU - eps;
    let radius = g.radius;
    let r2 = radius * radius;
    let surface_step = (2.0 * t.d1 * config.dt_surface / r2).sqrt();
    let bulk_step = (2.0 * t.d2 * config.dt_bulk).sqrt();
    let eject = radius - t.a;

    enum Phase {
        Surface(f64),
        Bulk(f64, f64),
    }

    // Work in the frame centred on the target.
    let mut phase = match start {
        StartState::Surface { theta } => Phase::Surface(g.relative_angle(theta)),
        StartState::Bulk { r, theta } => {
            let rel = g.relative_angle(theta);
            Phase::Bulk(r * rel.cos(), r * rel.sin())
        }
        StartState::UniformOffTargetSurface => unreachable!("resolved by the caller"),
    };
    let mut time = 0.0;
    let mut desorptions = 0u64;

    loop {
        match phase {
            Phase::Surface(mut rel) => {
                let mut remaining = surface_steps(&mut rng, t.lambda, config.dt_surface);
                loop {
                    let xi: f64 = rng.sample(StandardNormal);
                    rel += surface_step * xi;
                    time += config.dt_surface;
                    if rel <= eps || rel >= upper {
                        return PathOutcome::Absorbed { time, desorptions };
                    }
                    if time > config.max_time {
                        return PathOutcome::Censored { desorptions };
                    }
                    if remaining == 0 {
                        break;
                    }
                    remaining -= 1;
                }
                desorptions += 1;
                phase = Phase::Bulk(eject * rel.cos(), eject * rel.sin());
            }
            Phase::Bulk(mut x, mut y) => {
                loop {
                    let dx: f64 = rng.sample(StandardNormal);
                    let dy: f64 = rng.sample(StandardNormal);
                    x += bulk_step * dx;
                    y += bulk_step * dy;
                    time += config.dt_bulk;
                    if x * x + y * y >= r2 {
                        break;
                    }
                    if time > config.max_time {
                        return PathOutcome::Censored { desorptions };
                    }
                }
                let rel = y.atan2(x).rem_euclid(TAU);
                if rel <= eps || rel >= upper {
                    return PathOutcome::Absorbed { time, desorptions };
                }
                phase = Phase::Surface(rel);
            }
        }
    }
}

/// Sample moments of a set of first-passage times.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    /// Paths simulated, censored ones included.
    pub paths_used: u64,
    pub censored: u64,
    /// Uncensored samples behind `mean`.
    pub samples: u64,
    pub sum: f64,
    pub sum_sq: f64,
    pub desorptions: u64,
}

impl McEstimate {
    pub fn from_outcomes(outcomes: &[PathOutcome]) -> Self {
        let mut acc = McEstimate::default();
        for o in outcomes {
            acc.paths_used += 1;
            acc.desorptions += o.desorptions();
            match o.time() {
                Some(t) => {
                    acc.samples += 1;
                    acc.sum += t;
                    acc.sum_sq += t * t;
                }
                None => acc.censored += 1,
            }
        }
        acc.finish()
    }

    /// Combines two estimates over disjoint path sets.
    pub fn merge(&self, other: &McEstimate) -> McEstimate {
        McEstimate {
            paths_used: self.paths_used + other.paths_used,
            censored: self.censored + other.censored,
            samples: self.samples + other.samples,
            sum: self.sum + other.sum,
            sum_sq: self.sum_sq + other.sum_sq,
            desorptions: self.desorptions + other.desorptions,
            ..McEstimate::default()
        }
        .finish()
    }

    fn finish(mut self) -> Self {
        let n = self.samples as f64;
        self.mean = if self.samples > 0 { self.sum / n } else { f64::NAN };
        self.stderr = if self.samples > 1 {
            let var = ((self.sum_sq - self.sum * self.sum / n) / (n - 1.0)).max(0.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        self
    }

    /// Fewer than two samples: the standard error carries no information.
    pub fn is_degenerate_sample(&self) -> bool {
        self.samples < 2
    }

    pub fn censored_fraction(&self) -> f64 {
        if self.paths_used == 0 {
            0.0
        } else {
            self.censored as f64 / self.paths_used as f64
        }
    }

    pub fn is_valid(&self) -> bool {
        self.samples > 0 && self.censored_fraction() <= MAX_CENSORED_FRACTION
    }
}

/// Runs path indices `range` and returns their outcomes in index order.
pub fn run_paths(
    params: &ProblemParams,
    start: StartState,
    config: &McConfig,
    range: std::ops::Range<u64>,
) -> Vec<PathOutcome> {
    range
        .into_par_iter()
        .map(|i| {
            let s = start.resolve(params, i, config.paths);
            fpt_single_path(params, s, config, path_seed(config.seed, i))
        })
        .collect()
}

/// Mean first-passage time from `config.paths` independent paths.
pub fn estimate_mfpt(params: &ProblemParams, start: StartState, config: &McConfig) -> Result<McEstimate, McError> {
    params.validate()?;
    config.validate(params)?;
    start.validate(params)?;
    let outcomes = run_paths(params, start, config, 0..config.paths);
    let estimate = McEstimate::from_outcomes(&outcomes);
    if !estimate.is_valid() {
        return Err(McError::CensoringExceeded {
            censored: estimate.censored,
            paths: estimate.paths_used,
            estimate: Box::new(estimate),
        });
    }
    Ok(estimate)
}

/// `(spectral − mean) / stderr`.
pub fn zscore(spectral: f64, mc: &McEstimate) -> Result<f64, McError> {
    if mc.stderr == 0.0 {
        return Err(McError::DegenerateSample);
    }
    Ok((spectral - mc.mean) / mc.stderr)
}

/// `|spectral − mean| ≤ sigmas·stderr + allowance·|spectral|`.
pub fn agrees(spectral: f64, mc: &McEstimate, sigmas: f64, allowance: f64) -> bool {
    (spectral - mc.mean).abs() <= sigmas * mc.stderr + allowance * spectral.abs()
}

/// Spectral-vs-simulation summary, serialised as the comparison report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub spectral_mean: f64,
    pub mc_mean: f64,
    pub mc_stderr: f64,
    pub zscore: f64,
    pub paths: u64,
    pub censored: u64,
}

impl Comparison {
    pub fn new(spectral: f64, mc: &McEstimate) -> Result<Self, McError> {
        Ok(Comparison {
            spectral_mean: spectral,
            mc_mean: mc.mean,
            mc_stderr: mc.stderr,
            zscore: zscore(spectral, mc)?,
            paths: mc.paths_used,
            censored: mc.censored,
        })
    }
}
