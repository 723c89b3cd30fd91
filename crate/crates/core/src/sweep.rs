//! λ sweeps and the optimal-desorption-rate search.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ProblemParams;
use crate::solver::{solve, MeanConvention, Mode, SolveError, SolverConfig};

/// Golden ratio conjugate, `(√5 − 1) / 2`.
const INV_PHI: f64 = 0.618_033_988_749_894_9;

pub const SWEEP_HEADER: &str = "lambda,mean_mfpt,boundary_residual_l2,mode";

#[derive(Debug, Clone, Error)]
pub enum SweepError {
    #[error("invalid sweep: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("no interior minimum in bracket: f({lo}) = {f_lo}, f({mid}) = {f_mid}, f({hi}) = {f_hi}")]
    NoInteriorMinimum {
        lo: f64,
        mid: f64,
        hi: f64,
        f_lo: f64,
        f_mid: f64,
        f_hi: f64,
    },
    #[error("malformed sweep CSV at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for SweepError {
    fn from(e: std::io::Error) -> Self {
        SweepError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub points: usize,
    pub scale: Scale,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), SweepError> {
        let bad = |m: &str| Err(SweepError::InvalidSpec(m.to_string()));
        if !(self.lambda_min.is_finite() && self.lambda_max.is_finite()) {
            return bad("lambda bounds must be finite");
        }
        if !(0.0 <= self.lambda_min && self.lambda_min < self.lambda_max) {
            return bad("need 0 <= lambda_min < lambda_max");
        }
        if self.points < 2 {
            return bad("points must be >= 2");
        }
        if self.scale == Scale::Log && self.lambda_min <= 0.0 {
            return bad("log scale requires lambda_min > 0");
        }
        Ok(())
    }

    /// Grid values in ascending order; both ends are hit exactly.
    pub fn grid(&self) -> Result<Vec<f64>, SweepError> {
        self.validate()?;
        let last = self.points - 1;
        Ok((0..self.points)
            .map(|i| {
                if i == 0 {
                    return self.lambda_min;
                }
                if i == last {
                    return self.lambda_max;
                }
                let f = i as f64 / last as f64;
                match self.scale {
                    Scale::Linear => self.lambda_min + f * (self.lambda_max - self.lambda_min),
                    Scale::Log => (self.lambda_min.ln() + f * (self.lambda_max / self.lambda_min).ln()).exp(),
                }
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub lambda: f64,
    pub mean_mfpt: f64,
    pub boundary_residual_l2: f64,
    pub mode: Mode,
}

/// One sweep point: the record, or the reason its solve failed.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub lambda: f64,
    pub outcome: Result<SweepRecord, SolveError>,
}

/// One solve per grid value of λ, in ascending order. A failed solve is kept
/// as an error row and the sweep continues.
pub fn sweep_lambda(
    params: &ProblemParams,
    spec: &SweepSpec,
    config: &SolverConfig,
    convention: MeanConvention,
) -> Result<Vec<SweepRow>, SweepError> {
    let grid = spec.grid()?;
    Ok(grid
        .into_iter()
        .map(|lambda| SweepRow {
            lambda,
            outcome: solve(&params.with_lambda(lambda), config).map(|s| SweepRecord {
                lambda,
                mean_mfpt: s.mean(convention),
                boundary_residual_l2: s.boundary_residual_l2,
                mode: config.mode,
            }),
        })
        .collect())
}

pub fn write_sweep_csv<W: Write>(mut out: W, records: &[SweepRecord]) -> std::io::Result<()> {
    writeln!(out, "{SWEEP_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{}",
            r.lambda, r.mean_mfpt, r.boundary_residual_l2, r.mode
        )?;
    }
    Ok(())
}

pub fn read_sweep_csv<R: BufRead>(input: R) -> Result<Vec<SweepRecord>, SweepError> {
    let mut lines = input.lines();
    match lines.next().transpose()? {
        Some(h) if h.trim_end() == SWEEP_HEADER => {}
        _ => {
            return Err(SweepError::Parse {
                line: 1,
                message: format!("expected header `{SWEEP_HEADER}`"),
            })
        }
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| SweepError::Parse { line: i + 2, message };
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        if fields.len() != 4 {
            return Err(err(format!("expected 4 fields, found {}", fields.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| err(format!("`{s}`: {e}")));
        records.push(SweepRecord {
            lambda: num(fields[0])?,
            mean_mfpt: num(fields[1])?,
            boundary_residual_l2: num(fields[2])?,
            mode: fields[3].parse().map_err(err)?,
        });
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Minimum {
    pub x: f64,
    pub value: f64,
    pub evaluations: usize,
}

/// Golden-section search for a minimum of `f` on `[lo, hi]`, carried out in
/// `ln x` so that brackets spanning decades are handled evenly. The bracket
/// is first checked at `{lo, √(lo·hi), hi}`; iteration stops once
/// `hi − lo < rel_tol · x` and the midpoint is returned.
pub fn minimize_bracketed<E, F>(mut f: F, lo: f64, hi: f64, rel_tol: f64) -> Result<Minimum, E>
where
    F: FnMut(f64) -> Result<f64, E>,
    E: From<SweepError>,
{
    if !(lo > 0.0 && lo < hi && hi.is_finite()) {
        return Err(SweepError::InvalidSpec(format!("bracket must satisfy 0 < lo < hi, got ({lo}, {hi})")).into());
    }
    if !(rel_tol > 0.0 && rel_tol.is_finite()) {
        return Err(SweepError::InvalidSpec(format!("tolerance must be > 0, got {rel_tol}")).into());
    }
    let mut evaluations = 0;
    let mut eval = |u: f64| {
        evaluations += 1;
        f(u.exp())
    };
    let (mut a, mut b) = (lo.ln(), hi.ln());
    let mid = 0.5 * (a + b);
    let (f_lo, f_mid, f_hi) = (eval(a)?, eval(mid)?, eval(b)?);
    if !(f_mid < f_lo && f_mid < f_hi) {
        return Err(SweepError::NoInteriorMinimum {
            lo,
            mid: mid.exp(),
            hi,
            f_lo,
            f_mid,
            f_hi,
        }
        .into());
    }

    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = eval(c)?;
    let mut fd = eval(d)?;
    // e^b − e^a < tol · e^{(a+b)/2}  ⇔  b − a < 2 asinh(tol / 2)
    let width = 2.0 * (0.5 * rel_tol).asinh();
    while b - a >= width {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = eval(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = eval(d)?;
        }
    }
    let x = 0.5 * (a + b);
    let value = eval(x)?;
    Ok(Minimum {
        x: x.exp(),
        value,
        evaluations,
    })
}

/// Desorption rate minimising the mean surface first-passage time.
pub fn optimize_lambda(
    params: &ProblemParams,
    bracket: (f64, f64),
    rel_tol: f64,
    config: &SolverConfig,
    convention: MeanConvention,
) -> Result<Minimum, SweepError> {
    minimize_bracketed(
        |lambda| {
            solve(&params.with_lambda(lambda), config)
                .map(|s| s.mean(convention))
                .map_err(SweepError::from)
        },
        bracket.0,
        bracket.1,
        rel_tol,
    )
}
