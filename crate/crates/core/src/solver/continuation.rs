//! ε-continuation through truncated, strictly bracketed problems.
//!
//! Each stage solves `-x'' = f(t, x̄, x') + γ_ε(t, x)` where
//! `x̄ = max{α, min{x, β}}` and `γ_ε` is affine in `x`, equal to `ε` on the
//! lowered curve `α - ε` and `-ε` on `β`. The last stage has `ε = 0`.

use std::sync::Arc;

use super::newton::{self, Bounds};
use super::{SolveConfig, SolveResult};
use crate::conditions::{atol, Bracket};
use crate::error::{Error, Result};
use crate::funcspace::GridFunction;
use crate::operator::{residual, ProblemDef};

/// `ε` at `x = lower`, `-ε` at `x = upper`, affine in between.
pub fn gamma_eps(lower: f64, upper: f64, eps: f64, x: f64) -> f64 {
    (1.0 - 2.0 * (x - lower) / (upper - lower)) * eps
}

/// `f(t, max{α, min{x, β}}, y)`.
pub fn truncated(prob: &ProblemDef, alpha: &GridFunction, beta: &GridFunction) -> ProblemDef {
    perturbed(prob, alpha, beta, 0.0)
}

fn curve(g: &GridFunction) -> impl Fn(f64) -> f64 + Send + Sync + 'static {
    let g = g.clone();
    move |t| g.interp(t).unwrap_or(f64::NAN)
}

fn perturbed(prob: &ProblemDef, alpha: &GridFunction, beta: &GridFunction, eps: f64) -> ProblemDef {
    let f = Arc::clone(&prob.f);
    let (al, be) = (curve(alpha), curve(beta));
    let label = format!("{} (truncated, eps = {eps})", prob.label);
    ProblemDef::new(label, move |t, x, y| {
        let (a, b) = (al(t), be(t));
        let v = f(t, x.clamp(a, b), y);
        if eps == 0.0 {
            v
        } else {
            v + gamma_eps(a - eps, b, eps, x)
        }
    })
}

/// Fraction of nodes where the truncation changes `x`.
pub fn clamp_activity(x: &GridFunction, bracket: &Bracket) -> f64 {
    let active = x
        .values()
        .iter()
        .zip(bracket.alpha.values().iter().zip(bracket.beta.values()))
        .filter(|(v, (a, b))| *v < a || *v > b)
        .count();
    active as f64 / x.values().len() as f64
}

pub(crate) fn run(
    prob: &ProblemDef,
    bracket: &Bracket,
    eta0: &GridFunction,
    cfg: &SolveConfig,
) -> Result<SolveResult> {
    if !bracket.is_ordered() {
        return Err(Error::Domain("continuation needs alpha <= beta".into()));
    }
    bracket.alpha.same_grid(eta0)?;
    let pad = atol(bracket.scale());
    let mut x = eta0.clone();
    let mut history = Vec::new();
    let mut iterations = 0;
    for &eps in &cfg.eps_schedule {
        let stage = perturbed(prob, &bracket.alpha, &bracket.beta, eps);
        let bounds = Bounds {
            lo: bracket.alpha.values().iter().map(|a| a - eps - pad).collect(),
            hi: bracket.beta.values().iter().map(|b| b + pad).collect(),
        };
        let r = newton::run(&stage, &x, Some(&bounds), cfg).map_err(|e| match e {
            Error::NoConvergence { residual, history, .. } => Error::NoConvergence {
                method: "continuation",
                residual,
                history,
            },
            e => e,
        })?;
        iterations += r.iterations;
        history.extend(r.history);
        x = r.x;
    }
    let activity = clamp_activity(&x, bracket);
    let res = residual(prob, &x)?;
    if res > cfg.tol {
        return Err(Error::NoConvergence {
            method: "continuation",
            residual: res,
            history,
        });
    }
    let mut out = SolveResult::finish(prob, x, "continuation", iterations, history)?;
    out.clamp_activity = Some(activity);
    if activity > 0.0 {
        out.warnings.push(format!(
            "truncation active at {:.3}% of nodes in the final solution",
            100.0 * activity
        ));
    }
    Ok(out)
}
