use super::{tag_periodic, SolveConfig, SolveResult};
use crate::error::{Error, Result};
use crate::funcspace::GridFunction;
use crate::kernel::LinearParams;
use crate::operator::{residual, ProblemDef, TOperator};

/// Iterations without a new best residual before the run is declared stalled.
const STALL: usize = 60;
const DIVERGENCE_FACTOR: f64 = 10.0;

/// Failed run together with the best iterate seen, for warm starts.
pub(crate) struct Failure {
    pub error: Error,
    pub best: GridFunction,
}

fn with_derivative(eta: &GridFunction) -> Result<GridFunction> {
    if eta.derivative().is_some() {
        return Ok(eta.clone());
    }
    let d = eta.clone().into_periodic()?.differentiate()?;
    eta.clone().with_derivative(d.values().to_vec())
}

pub(crate) fn run(
    prob: &ProblemDef,
    p: &LinearParams,
    eta0: &GridFunction,
    cfg: &SolveConfig,
) -> std::result::Result<SolveResult, Failure> {
    let fail = |error: Error, best: &GridFunction| Failure {
        error,
        best: best.clone(),
    };
    let mut eta = with_derivative(eta0).map_err(|e| fail(e, eta0))?;
    let op = TOperator::new(*p, eta.n(), cfg.exec).map_err(|e| fail(e, &eta))?;
    let omega = cfg.relaxation;
    let r0 = residual(prob, &eta).map_err(|e| fail(e, &eta))?;
    let mut history = vec![r0];
    let (mut best, mut best_r, mut best_k) = (eta.clone(), r0, 0);
    if r0 <= cfg.tol {
        return SolveResult::finish(prob, tag_periodic(eta), "fixed_point", 0, history)
            .map_err(|e| fail(e, &best));
    }
    for k in 1..=cfg.max_iter {
        let step = op
            .apply(prob, &eta)
            .and_then(|tx| if omega == 1.0 { Ok(tx) } else { eta.axpby(1.0 - omega, &tx, omega) })
            .and_then(|next| residual(prob, &next).map(|r| (next, r)));
        let (next, r) = match step {
            Ok(v) => v,
            Err(e) => return Err(fail(e, &best)),
        };
        history.push(r);
        eta = next;
        if r < best_r {
            best = eta.clone();
            best_r = r;
            best_k = k;
        }
        if r <= cfg.tol {
            return SolveResult::finish(prob, tag_periodic(eta), "fixed_point", k, history)
                .map_err(|e| fail(e, &best));
        }
        if !r.is_finite() || r > DIVERGENCE_FACTOR * best_r {
            return Err(fail(
                Error::Diverged {
                    method: "fixed_point",
                    best: best_r,
                    history,
                },
                &best,
            ));
        }
        if k - best_k > STALL {
            break;
        }
    }
    Err(fail(
        Error::NoConvergence {
            method: "fixed_point",
            residual: best_r,
            history,
        },
        &best,
    ))
}
