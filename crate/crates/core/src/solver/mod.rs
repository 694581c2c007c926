//! Periodic solutions of `-x'' = f(t, x, x')`.
//!
//! The primary mechanism is the fixed-point iteration on `T`; damped Newton
//! on a collocated system and ε-continuation through truncated problems are
//! fallbacks. [`solve`] applies the policy: fixed point with relaxation
//! `ω ∈ {1, 1/2, 1/4}`, then Newton warm-started from the best iterate, then
//! continuation when a bracket is known.

mod banded;
mod continuation;
mod fixed_point;
mod newton;
mod shift;

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

pub use banded::{BandLu, BandMatrix, CornerSystem};
pub use continuation::{clamp_activity, gamma_eps, truncated};
pub use shift::{default_shift_inputs, pick_shift, ShiftChoice, ShiftInputs, N_MIN};

use crate::conditions::{atol, build_envelope, Bracket};
use crate::error::{Error, Result};
use crate::funcspace::{GridFunction, DEFAULT_INTERVALS};
use crate::kernel::LinearParams;
use crate::operator::{residual, ProblemDef};
use crate::par::Execution;


#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SolveMode {
    #[default]
    Auto,
    FixedPoint,
    Newton,
    Continuation,
}

impl FromStr for SolveMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(SolveMode::Auto),
            "fp" | "fixed_point" => Ok(SolveMode::FixedPoint),
            "newton" => Ok(SolveMode::Newton),
            "continuation" => Ok(SolveMode::Continuation),
            _ => Err(Error::Domain(format!("unknown solve mode '{s}'"))),
        }
    }
}

impl fmt::Display for SolveMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolveMode::Auto => "auto",
            SolveMode::FixedPoint => "fp",
            SolveMode::Newton => "newton",
            SolveMode::Continuation => "continuation",
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveConfig {
    pub n: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// `ω` in `η ← (1-ω)η + ωT(η)`
    pub relaxation: f64,
    pub mode: SolveMode,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub eps_schedule: Vec<f64>,
    #[serde(skip)]
    pub exec: Execution,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            n: DEFAULT_INTERVALS,
            tol: 1e-8,
            max_iter: 500,
            relaxation: 1.0,
            mode: SolveMode::Auto,
            a: None,
            b: None,
            eps_schedule: vec![1e-1, 1e-2, 1e-3, 0.0],
            exec: Execution::default(),
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Domain(format!("tol must be positive, got {}", self.tol)));
        }
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return Err(Error::Domain(format!("relaxation must lie in (0, 1], got {}", self.relaxation)));
        }
        let s = &self.eps_schedule;
        let decreasing = s.windows(2).all(|w| w[0] > w[1]);
        if s.last() != Some(&0.0) || !decreasing || s[..s.len() - 1].iter().any(|e| !(*e > 0.0)) {
            return Err(Error::Domain(format!(
                "eps schedule must be strictly decreasing positives ending at 0, got {s:?}"
            )));
        }
        if self.a.is_some() != self.b.is_some() {
            return Err(Error::Domain("a and b must be given together".into()));
        }
        Ok(())
    }

    fn params(&self) -> Result<Option<LinearParams>> {
        match (self.a, self.b) {
            (Some(a), Some(b)) => LinearParams::new(a, b).map(Some),
            _ => Ok(None),
        }
    }
}

/// Location of a solution relative to the bracket and the slope envelope
/// `α' - N(x-α) ≤ x' ≤ β' + N(β-x)`.
#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct Membership {
    pub band: bool,
    pub band_margin: f64,
    pub slope: bool,
    pub slope_margin: f64,
    pub slope_rate: f64,
}

/// `None` when the bracket is not ordered; only residual acceptance applies then.
pub fn envelope_membership(x: &GridFunction, bracket: &Bracket, rate: f64) -> Result<Option<Membership>> {
    if !bracket.is_ordered() {
        return Ok(None);
    }
    bracket.alpha.same_grid(x)?;
    let d = x.derivative_or_err()?;
    let (da, db) = (bracket.alpha_prime(), bracket.beta_prime());
    let mut band: f64 = f64::INFINITY;
    let mut slope: f64 = f64::INFINITY;
    for i in 0..=x.n() {
        let (v, al, be) = (x.values()[i], bracket.alpha.values()[i], bracket.beta.values()[i]);
        band = band.min(v - al).min(be - v);
        slope = slope
            .min(d[i] - (da[i] - rate * (v - al)))
            .min(db[i] + rate * (be - v) - d[i]);
    }
    let tol = atol(bracket.scale().max(x.max_abs()) + rate * bracket.scale());
    Ok(Some(Membership {
        band: band >= -tol,
        band_margin: band,
        slope: slope >= -tol,
        slope_margin: slope,
        slope_rate: rate,
    }))
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveResult {
    #[serde(skip)]
    pub x: GridFunction,
    pub method: String,
    pub n: usize,
    pub residual: f64,
    pub iterations: usize,
    pub history: Vec<f64>,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub relaxation: Option<f64>,
    pub envelope_membership: Option<Membership>,
    pub clamp_activity: Option<f64>,
    pub warnings: Vec<String>,
}

impl SolveResult {
    pub(crate) fn finish(
        prob: &ProblemDef,
        x: GridFunction,
        method: &str,
        iterations: usize,
        history: Vec<f64>,
    ) -> Result<SolveResult> {
        let r = residual(prob, &x)?;
        Ok(SolveResult {
            n: x.n(),
            x,
            method: method.to_string(),
            residual: r,
            iterations,
            history,
            a: None,
            b: None,
            relaxation: None,
            envelope_membership: None,
            clamp_activity: None,
            warnings: Vec::new(),
        })
    }

    pub fn periodicity_defects(&self) -> (f64, f64) {
        let n = self.x.n();
        let v = self.x.values();
        let d = self.x.derivative().unwrap_or(v);
        ((v[n] - v[0]).abs(), (d[n] - d[0]).abs())
    }
}

/// Tags `g` periodic when its endpoints agree within the periodic tolerance.
pub(crate) fn tag_periodic(g: GridFunction) -> GridFunction {
    g.clone().into_periodic().unwrap_or(g)
}

/// Fixed-point iteration `η ← (1-ω)η + ωT(η)` with `ω = cfg.relaxation`.
pub fn solve_fixed_point(
    prob: &ProblemDef,
    p: &LinearParams,
    eta0: &GridFunction,
    cfg: &SolveConfig,
) -> Result<SolveResult> {
    cfg.validate()?;
    let mut r = fixed_point::run(prob, p, eta0, cfg).map_err(|f| f.error)?;
    r.a = Some(p.a);
    r.b = Some(p.b);
    r.relaxation = Some(cfg.relaxation);
    Ok(r)
}

/// Damped Newton from `eta0`; with a bracket, iterates are kept inside it.
pub fn solve_newton(
    prob: &ProblemDef,
    eta0: &GridFunction,
    bracket: Option<&Bracket>,
    cfg: &SolveConfig,
) -> Result<SolveResult> {
    cfg.validate()?;
    let bounds = newton_bounds(bracket);
    newton::run(prob, eta0, bounds.as_ref(), cfg)
}

fn newton_bounds(bracket: Option<&Bracket>) -> Option<newton::Bounds> {
    let br = bracket.filter(|b| b.is_ordered())?;
    let pad = atol(br.scale());
    Some(newton::Bounds {
        lo: br.alpha.values().iter().map(|v| v - pad).collect(),
        hi: br.beta.values().iter().map(|v| v + pad).collect(),
    })
}

pub fn solve_continuation(
    prob: &ProblemDef,
    bracket: &Bracket,
    eta0: &GridFunction,
    cfg: &SolveConfig,
) -> Result<SolveResult> {
    cfg.validate()?;
    continuation::run(prob, bracket, eta0, cfg)
}

/// Runs the configured mode, with the fallback policy in [`SolveMode::Auto`].
///
/// The shift comes from `cfg.a`/`cfg.b`, or from [`pick_shift`] when a
/// bracket is given. The starting candidate defaults to `β̄₁` of the
/// envelope at `Δ = 0`.
pub fn solve(
    prob: &ProblemDef,
    bracket: Option<&Bracket>,
    eta0: Option<&GridFunction>,
    cfg: &SolveConfig,
) -> Result<SolveResult> {
    cfg.validate()?;
    if let Some(br) = bracket {
        if br.n() != cfg.n {
            return Err(Error::Grid(format!("bracket has {} intervals, config asks for {}", br.n(), cfg.n)));
        }
    }
    let mut warnings = Vec::new();
    let mut rate = None;
    let params = match cfg.params()? {
        Some(p) => Some(p),
        None => match bracket.filter(|b| b.is_ordered()) {
            Some(br) if cfg.mode != SolveMode::Newton && cfg.mode != SolveMode::Continuation => {
                let inputs = default_shift_inputs(prob, br, cfg.exec)?;
                let ch = pick_shift(prob, br, &inputs, cfg.exec)?;
                rate = Some(ch.big_n);
                Some(LinearParams::new(ch.a, ch.b)?)
            }
            _ => None,
        },
    };
    let start = match (eta0, bracket) {
        (Some(e), _) => e.clone(),
        (None, Some(br)) => match &params {
            Some(p) => build_envelope(br, p, 0.0, 0.0)?.beta1bar,
            None => br.beta.clone(),
        },
        (None, None) => {
            return Err(Error::Domain("an initial candidate or a bracket is required".into()))
        }
    };
    if start.n() != cfg.n {
        return Err(Error::Grid(format!("initial candidate has {} intervals, config asks for {}", start.n(), cfg.n)));
    }

    let mut result = match cfg.mode {
        SolveMode::FixedPoint => fp_scan(prob, params.as_ref(), &start, cfg, &mut warnings).map_err(|f| f.error),
        SolveMode::Newton => solve_newton(prob, &start, bracket, cfg),
        SolveMode::Continuation => {
            let br = bracket.ok_or_else(|| Error::Domain("continuation needs a bracket".into()))?;
            continuation::run(prob, br, &start, cfg)
        }
        SolveMode::Auto => auto(prob, params.as_ref(), bracket, &start, cfg, &mut warnings),
    }?;
    if let Some(p) = &params {
        result.a.get_or_insert(p.a);
        result.b.get_or_insert(p.b);
    }
    if let Some(br) = bracket {
        let slope_rate = rate.or(params.map(|p| p.k0));
        if let Some(rate) = slope_rate {
            result.envelope_membership = envelope_membership(&result.x, br, rate)?;
        }
        if result.clamp_activity.is_none() && br.is_ordered() {
            result.clamp_activity = Some(clamp_activity(&result.x, br));
        }
    }
    warnings.append(&mut result.warnings);
    result.warnings = warnings;
    Ok(result)
}

const RELAXATIONS: [f64; 3] = [1.0, 0.5, 0.25];

fn fp_scan(
    prob: &ProblemDef,
    params: Option<&LinearParams>,
    start: &GridFunction,
    cfg: &SolveConfig,
    warnings: &mut Vec<String>,
) -> std::result::Result<SolveResult, fixed_point::Failure> {
    let p = params.ok_or_else(|| fixed_point::Failure {
        error: Error::Domain("fixed-point mode needs a and b, or a bracket to pick them".into()),
        best: start.clone(),
    })?;
    let mut last = None;
    let mut best = start.clone();
    for omega in RELAXATIONS.into_iter().filter(|w| *w <= cfg.relaxation) {
        let c = SolveConfig {
            relaxation: omega,
            ..cfg.clone()
        };
        match fixed_point::run(prob, p, start, &c) {
            Ok(mut r) => {
                r.relaxation = Some(omega);
                return Ok(r);
            }
            Err(f) => {
                let diverged = matches!(f.error, Error::Diverged { .. });
                warnings.push(format!("fixed point with relaxation {omega}: {}", f.error));
                best = f.best.clone();
                last = Some(f);
                if !diverged {
                    break;
                }
            }
        }
    }
    Err(last.unwrap_or(fixed_point::Failure {
        error: Error::Domain(format!("relaxation {} is below the scanned values", cfg.relaxation)),
        best,
    }))
}

fn auto(
    prob: &ProblemDef,
    params: Option<&LinearParams>,
    bracket: Option<&Bracket>,
    start: &GridFunction,
    cfg: &SolveConfig,
    warnings: &mut Vec<String>,
) -> Result<SolveResult> {
    let warm = match params {
        Some(_) => match fp_scan(prob, params, start, cfg, warnings) {
            Ok(r) => return Ok(r),
            Err(f) => f.best,
        },
        None => start.clone(),
    };
    let newton_err = match solve_newton(prob, &warm, bracket, cfg) {
        Ok(r) => return Ok(r),
        Err(e) => e,
    };
    warnings.push(format!("newton: {newton_err}"));
    match bracket {
        Some(br) if br.is_ordered() => continuation::run(prob, br, start, cfg),
        _ => Err(newton_err),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(SolveConfig::default().validate().is_ok());
        let bad = SolveConfig {
            eps_schedule: vec![0.1, 0.2, 0.0],
            ..SolveConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SolveConfig {
            eps_schedule: vec![0.1, 0.01],
            ..SolveConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SolveConfig {
            tol: 0.0,
            ..SolveConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn mode_round_trip() {
        for m in [SolveMode::Auto, SolveMode::FixedPoint, SolveMode::Newton, SolveMode::Continuation] {
            assert_eq!(m.to_string().parse::<SolveMode>().unwrap(), m);
        }
    }

    #[test]
    fn unordered_bracket_skips_membership() {
        let br = Bracket::constant(16, 2.0, 1.0).unwrap();
        let x = GridFunction::constant(16, 1.5).unwrap();
        assert!(envelope_membership(&x, &br, 1.0).unwrap().is_none());
    }
}
