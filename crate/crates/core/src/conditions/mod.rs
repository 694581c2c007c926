//! Numerical checks of the lower/upper-solution hypotheses.
//!
//! Every check returns a [`CheckRecord`] whose margin is the smallest slack
//! over the checked set; a record passes when that margin is at least
//! `-atol` with `atol = 1e-8·(1 + scale)`.

mod envelope;
mod hypotheses;

pub use envelope::{build_envelope, sample_envelope, verify_e1, verify_e1prime, Envelope};
pub use hypotheses::{
    check_growth_condition, default_mu, default_z_max, estimate_e2, growth_constants, k_hat,
    verify_e3, verify_e3prime, E2Estimate, E3Grid, E3Report, GrowthConstants, GrowthVariant,
};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::funcspace::{differentiate_values, GridFunction};
use crate::kernel::LinearParams;
use crate::operator::ProblemDef;

/// Absolute tolerance used for every margin.
pub fn atol(scale: f64) -> f64 {
    1e-8 * (1.0 + scale.abs())
}

/// A lower solution `α` and an upper solution `β` with second derivatives.
#[derive(Clone, Debug)]
pub struct Bracket {
    pub alpha: GridFunction,
    pub beta: GridFunction,
    pub alpha2: Vec<f64>,
    pub beta2: Vec<f64>,
    /// `α'(0) - α'(1)`
    pub r1: f64,
    /// `β'(1) - β'(0)`
    pub r2: f64,
}

fn with_first(g: GridFunction) -> Result<GridFunction> {
    if g.derivative().is_some() {
        return Ok(g);
    }
    let d = differentiate_values(g.values(), false);
    g.with_derivative(d)
}

impl Bracket {
    /// Missing first or second derivatives are filled in by differentiation.
    pub fn new(
        alpha: GridFunction,
        beta: GridFunction,
        alpha2: Option<Vec<f64>>,
        beta2: Option<Vec<f64>>,
    ) -> Result<Self> {
        alpha.same_grid(&beta)?;
        let alpha = with_first(alpha.untagged())?;
        let beta = with_first(beta.untagged())?;
        for (name, g) in [("alpha", &alpha), ("beta", &beta)] {
            let v = g.values();
            let gap = (v[0] - v[g.n()]).abs();
            if gap > atol(g.max_abs()) {
                return Err(Error::Grid(format!("{name}(0) and {name}(1) differ by {gap:e}")));
            }
        }
        let second = |g: &GridFunction, s: Option<Vec<f64>>| -> Result<Vec<f64>> {
            match s {
                Some(s) if s.len() == g.n() + 1 => Ok(s),
                Some(s) => Err(Error::Grid(format!(
                    "second derivative has {} samples, expected {}",
                    s.len(),
                    g.n() + 1
                ))),
                None => Ok(differentiate_values(g.derivative().expect("filled above"), false)),
            }
        };
        let alpha2 = second(&alpha, alpha2)?;
        let beta2 = second(&beta, beta2)?;
        let n = alpha.n();
        let da = alpha.derivative().expect("filled above");
        let db = beta.derivative().expect("filled above");
        let r1 = da[0] - da[n];
        let r2 = db[n] - db[0];
        Ok(Bracket {
            alpha,
            beta,
            alpha2,
            beta2,
            r1,
            r2,
        })
    }

    /// Constant lower and upper solutions.
    pub fn constant(n: usize, alpha: f64, beta: f64) -> Result<Self> {
        Bracket::new(
            GridFunction::constant(n, alpha)?,
            GridFunction::constant(n, beta)?,
            Some(vec![0.0; n + 1]),
            Some(vec![0.0; n + 1]),
        )
    }

    pub fn n(&self) -> usize {
        self.alpha.n()
    }

    pub fn scale(&self) -> f64 {
        self.alpha.max_abs().max(self.beta.max_abs())
    }

    pub fn alpha_prime(&self) -> &[f64] {
        self.alpha.derivative().expect("bracket always carries derivatives")
    }

    pub fn beta_prime(&self) -> &[f64] {
        self.beta.derivative().expect("bracket always carries derivatives")
    }

    /// True when `α ≤ β` at every node (within tolerance).
    pub fn is_ordered(&self) -> bool {
        let tol = atol(self.scale());
        self.alpha
            .values()
            .iter()
            .zip(self.beta.values())
            .all(|(a, b)| a <= &(b + tol))
    }

    /// `t ↦ (α(1-t), β(1-t))`; derivatives change sign, `r₁` and `r₂` are kept.
    pub fn reversed(&self) -> Bracket {
        let rev = |v: &[f64]| v.iter().rev().copied().collect::<Vec<_>>();
        Bracket {
            alpha: self.alpha.reversed(),
            beta: self.beta.reversed(),
            alpha2: rev(&self.alpha2),
            beta2: rev(&self.beta2),
            r1: self.r1,
            r2: self.r2,
        }
    }

    /// The same bracket restricted to a grid coarser by `stride`.
    pub fn restrict(&self, stride: usize) -> Result<Bracket> {
        let pick = |v: &[f64]| v.iter().step_by(stride).copied().collect::<Vec<_>>();
        Ok(Bracket {
            alpha: self.alpha.restrict(stride)?,
            beta: self.beta.restrict(stride)?,
            alpha2: pick(&self.alpha2),
            beta2: pick(&self.beta2),
            r1: self.r1,
            r2: self.r2,
        })
    }
}

/// Location of the smallest slack.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Witness {
    pub t: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_index: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckRecord {
    pub name: String,
    pub pass: bool,
    pub margin: f64,
    pub atol: f64,
    pub witness: Witness,
    /// The check covers a finite sample of an infinite set.
    pub sampled: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl CheckRecord {
    pub fn new(name: impl Into<String>, margin: f64, atol: f64, witness: Witness) -> Self {
        // infinite limits are stored as the largest finite value so records
        // always serialize
        let margin = margin.clamp(-f64::MAX, f64::MAX);
        CheckRecord {
            name: name.into(),
            pass: margin >= -atol,
            margin,
            atol,
            witness,
            sampled: false,
            note: None,
        }
    }

    pub fn sampled(mut self) -> Self {
        self.sampled = true;
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

/// Running minimum with its witness.
#[derive(Clone, Debug)]
pub(crate) struct MinTracker {
    pub margin: f64,
    pub witness: Witness,
}

impl MinTracker {
    pub fn new() -> Self {
        MinTracker {
            margin: f64::INFINITY,
            witness: Witness::default(),
        }
    }

    pub fn push(&mut self, v: f64, w: impl FnOnce() -> Witness) {
        if v < self.margin || (v.is_nan() && !self.margin.is_nan()) {
            self.margin = v;
            self.witness = w();
        }
    }

    pub fn merge(mut self, o: MinTracker) -> Self {
        if o.margin < self.margin {
            self.margin = o.margin;
            self.witness = o.witness;
        }
        self
    }

    pub fn record(self, name: &str, atol: f64) -> CheckRecord {
        CheckRecord::new(name, self.margin, atol, self.witness)
    }
}

/// Scalar parameters echoed in a certificate.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CertParams {
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub delta: Option<f64>,
    #[serde(rename = "Delta")]
    pub delta_cap: Option<f64>,
    pub k0: Option<f64>,
    pub mu: Option<f64>,
    pub ell: Option<f64>,
    pub c: Option<f64>,
    #[serde(rename = "L")]
    pub big_l: Option<f64>,
    #[serde(rename = "K")]
    pub big_k: Option<f64>,
    #[serde(rename = "K_hat")]
    pub k_hat: Option<f64>,
    #[serde(rename = "N")]
    pub big_n: Option<f64>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Certificate {
    pub label: String,
    pub pass: bool,
    pub checks: Vec<CheckRecord>,
    pub params: CertParams,
}

impl Certificate {
    pub fn new(label: impl Into<String>) -> Self {
        Certificate {
            label: label.into(),
            pass: true,
            ..Default::default()
        }
    }

    pub fn push(&mut self, r: CheckRecord) {
        self.pass &= r.pass;
        self.checks.push(r);
    }

    pub fn get(&self, name: &str) -> Option<&CheckRecord> {
        self.checks.iter().find(|r| r.name == name)
    }

    pub fn failing(&self) -> impl Iterator<Item = &CheckRecord> {
        self.checks.iter().filter(|r| !r.pass)
    }
}

fn periodic_gap(g: &GridFunction) -> f64 {
    (g.values()[0] - g.values()[g.n()]).abs()
}

fn side_check(
    name: &str,
    prob: &ProblemDef,
    g: &GridFunction,
    g2: &[f64],
    sign: f64,
) -> Result<CheckRecord> {
    let d = g.derivative_or_err()?;
    let mut tr = MinTracker::new();
    for i in 0..=g.n() {
        let t = g.t(i);
        let f = prob.eval(t, g.values()[i], d[i])?;
        // lower: f + α'' ≥ 0, upper: -β'' - f ≥ 0
        tr.push(sign * (f + g2[i]), || Witness {
            t,
            ..Default::default()
        });
    }
    let tol = atol(g.max_abs());
    let gap = periodic_gap(g);
    let mut rec = tr.record(name, tol);
    if gap > tol {
        rec = CheckRecord::new(name, rec.margin.min(-gap), tol, rec.witness)
            .with_note(format!("endpoint values differ by {gap:e}"));
    }
    Ok(rec)
}

/// `min_t f(t,α,α') + α''(t)`, plus the endpoint equality `α(0) = α(1)`.
pub fn check_lower(prob: &ProblemDef, alpha: &GridFunction, alpha2: &[f64]) -> Result<CheckRecord> {
    side_check("lower", prob, alpha, alpha2, 1.0)
}

/// `min_t -β''(t) - f(t,β,β')`, plus the endpoint equality `β(0) = β(1)`.
pub fn check_upper(prob: &ProblemDef, beta: &GridFunction, beta2: &[f64]) -> Result<CheckRecord> {
    side_check("upper", prob, beta, beta2, -1.0)
}

/// Half-Lipschitz lower bound between the bracket curves:
/// `f(t,β,β') - f(t,α,α') + a(β-α) - b(β'-α') + δ ≥ 0`.
pub fn verify_e0(
    prob: &ProblemDef,
    bracket: &Bracket,
    p: &LinearParams,
    delta: f64,
) -> Result<CheckRecord> {
    let (da, db) = (bracket.alpha_prime(), bracket.beta_prime());
    let mut tr = MinTracker::new();
    let mut scale: f64 = bracket.scale();
    for i in 0..=bracket.n() {
        let t = bracket.alpha.t(i);
        let (al, be) = (bracket.alpha.values()[i], bracket.beta.values()[i]);
        let fb = prob.eval(t, be, db[i])?;
        let fa = prob.eval(t, al, da[i])?;
        scale = scale.max(fb.abs()).max(fa.abs());
        let slack = fb - fa + p.a * (be - al) - p.b * (db[i] - da[i]) + delta;
        tr.push(slack, || Witness {
            t,
            ..Default::default()
        });
    }
    Ok(tr.record("E0", atol(scale)))
}

/// Minimum slacks of the two conclusions that follow from (E0):
/// `(β-α) - (r₁+r₂)h + δ/a ≥ 0` and
/// `(β'-α') + k₀(β-α) - (r₁+r₂)(k₀h+h') + k₀δ/a ≥ 0`.
pub fn lemma_slacks(bracket: &Bracket, p: &LinearParams, delta: f64) -> Result<(f64, f64)> {
    let (da, db) = (bracket.alpha_prime(), bracket.beta_prime());
    let r = bracket.r1 + bracket.r2;
    let (mut s1, mut s2) = (f64::INFINITY, f64::INFINITY);
    for i in 0..=bracket.n() {
        let t = bracket.alpha.t(i);
        let (h, hp) = (p.h(t)?, p.h_prime(t)?);
        let w = bracket.beta.values()[i] - bracket.alpha.values()[i];
        s1 = s1.min(w - r * h + delta / p.a);
        s2 = s2.min(db[i] - da[i] + p.k0 * w - r * (p.k0 * h + hp) + p.k0 * delta / p.a);
    }
    Ok((s1, s2))
}

/// Lower and upper solution records for a bracket.
pub fn check_bracket(prob: &ProblemDef, bracket: &Bracket) -> Result<(CheckRecord, CheckRecord)> {
    Ok((
        check_lower(prob, &bracket.alpha, &bracket.alpha2)?,
        check_upper(prob, &bracket.beta, &bracket.beta2)?,
    ))
}
