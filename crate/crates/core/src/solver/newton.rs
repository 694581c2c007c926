//! Damped Newton on the collocated system
//! `x'' + f(t, x, x') = 0` at interior nodes, `x(0) = x(1)`, `x'(0) = x'(1)`,
//! where `x' = D x` and `x'' = D(D x)` use the same fourth-order stencils as
//! [`crate::operator::residual`], so the converged residual is exactly the
//! one reported.

use super::banded::{BandMatrix, CornerSystem};
use super::{SolveConfig, SolveResult};
use crate::error::{Error, Result};
use crate::funcspace::GridFunction;
use crate::operator::ProblemDef;

const BAND: usize = 6;
const ARMIJO: f64 = 1e-4;
const MIN_STEP: f64 = 1.0 / 1024.0;
/// Diagonal shifts tried, relative to the Jacobian scale, when the plain
/// Newton step is singular or fails the line search.
const SHIFTS: [f64; 5] = [0.0, 1e-3, 1e-1, 1.0, 10.0];

type SparseRow = Vec<(usize, f64)>;

/// Rows of the non-periodic fourth-order derivative matrix.
fn derivative_rows(n: usize) -> Vec<SparseRow> {
    let inv = n as f64 / 12.0;
    let row = |start: usize, c: [f64; 5]| -> SparseRow {
        c.iter().enumerate().map(|(k, v)| (start + k, v * inv)).collect()
    };
    let mut rows = Vec::with_capacity(n + 1);
    rows.push(row(0, [-25.0, 48.0, -36.0, 16.0, -3.0]));
    rows.push(row(0, [-3.0, -10.0, 18.0, -6.0, 1.0]));
    for i in 2..n - 1 {
        rows.push(row(i - 2, [1.0, -8.0, 0.0, 8.0, -1.0]));
    }
    rows.push(row(n - 4, [-1.0, 6.0, -18.0, 10.0, 3.0]));
    rows.push(row(n - 4, [3.0, -16.0, 36.0, -48.0, 25.0]));
    rows
}

fn apply_row(row: &SparseRow, v: &[f64]) -> f64 {
    row.iter().map(|&(j, c)| c * v[j]).sum()
}

/// `D(D ·)` row `i`, with duplicate columns merged.
fn second_row(d: &[SparseRow], i: usize) -> SparseRow {
    let mut lo = usize::MAX;
    let mut hi = 0;
    for &(k, _) in &d[i] {
        for &(j, _) in &d[k] {
            lo = lo.min(j);
            hi = hi.max(j);
        }
    }
    let mut acc = vec![0.0; hi - lo + 1];
    for &(k, ck) in &d[i] {
        for &(j, cj) in &d[k] {
            acc[j - lo] += ck * cj;
        }
    }
    acc.into_iter().enumerate().map(|(o, v)| (lo + o, v)).collect()
}

/// The collocated residual map and its Jacobian.
pub(crate) struct Collocation<'a> {
    prob: &'a ProblemDef,
    n: usize,
    d: Vec<SparseRow>,
    dd: Vec<SparseRow>,
    exec: crate::par::Execution,
}

pub(crate) struct Eval {
    pub r: Vec<f64>,
    pub deriv: Vec<f64>,
}

impl Eval {
    pub fn max_norm(&self) -> f64 {
        self.r.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn sq_norm(&self) -> f64 {
        self.r.iter().map(|v| v * v).sum()
    }
}

impl<'a> Collocation<'a> {
    pub fn new(prob: &'a ProblemDef, n: usize, exec: crate::par::Execution) -> Self {
        let d = derivative_rows(n);
        let dd = (0..=n).map(|i| if i == 0 || i == n { Vec::new() } else { second_row(&d, i) }).collect();
        Collocation { prob, n, d, dd, exec }
    }

    fn t(&self, i: usize) -> f64 {
        i as f64 / self.n as f64
    }

    pub fn eval(&self, x: &[f64]) -> Result<Eval> {
        let n = self.n;
        let deriv: Vec<f64> = self.d.iter().map(|row| apply_row(row, x)).collect();
        let interior = self.exec.try_map(n - 1, |k| {
            let i = k + 1;
            Ok::<_, Error>(apply_row(&self.dd[i], x) + self.prob.eval(self.t(i), x[i], deriv[i])?)
        })?;
        let mut r = Vec::with_capacity(n + 1);
        r.push(x[0] - x[n]);
        r.extend(interior);
        r.push(deriv[0] - deriv[n]);
        Ok(Eval { r, deriv })
    }

    /// Jacobian at `x` with `-shift` added on interior diagonal entries.
    fn system(&self, x: &[f64], deriv: &[f64], shift: f64) -> Result<(CornerSystem, f64)> {
        let n = self.n;
        let partials = self.exec.try_map(n - 1, |k| {
            let i = k + 1;
            let t = self.t(i);
            Ok::<_, Error>((self.prob.dfdx(t, x[i], deriv[i])?, self.prob.dfdy(t, x[i], deriv[i])?))
        })?;
        let scale = partials
            .iter()
            .fold(1.0f64, |m, (fx, fy)| m.max(fx.abs() + fy.abs()));
        let mut band = BandMatrix::zeros(n + 1, BAND, BAND);
        band.add(0, 0, 1.0)?;
        for (k, &(fx, fy)) in partials.iter().enumerate() {
            let i = k + 1;
            for &(j, c) in &self.dd[i] {
                band.add(i, j, c)?;
            }
            for &(j, c) in &self.d[i] {
                band.add(i, j, fy * c)?;
            }
            band.add(i, i, fx - shift * scale)?;
        }
        for &(j, c) in &self.d[n] {
            band.add(n, j, -c)?;
        }
        let corr = vec![vec![(n, -1.0)], self.d[0].clone()];
        Ok((CornerSystem::new(band, vec![0, n], corr)?, scale))
    }
}

/// Pointwise bounds for projected steps.
pub(crate) struct Bounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Bounds {
    fn project(&self, x: &mut [f64]) {
        for ((v, lo), hi) in x.iter_mut().zip(&self.lo).zip(&self.hi) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

pub(crate) fn run(
    prob: &ProblemDef,
    eta0: &GridFunction,
    bounds: Option<&Bounds>,
    cfg: &SolveConfig,
) -> Result<SolveResult> {
    let n = eta0.n();
    let col = Collocation::new(prob, n, cfg.exec);
    let mut x = eta0.values().to_vec();
    if let Some(b) = bounds {
        b.project(&mut x);
    }
    let mut cur = col.eval(&x)?;
    let mut history = vec![cur.max_norm()];
    let mut iterations = 0;
    while iterations == 0 || cur.max_norm() > cfg.tol {
        if iterations >= cfg.max_iter {
            return Err(Error::NoConvergence {
                method: "newton",
                residual: cur.max_norm(),
                history,
            });
        }
        let (next_x, next) = step(&col, &x, &cur, bounds, cfg.tol)?;
        x = next_x;
        cur = next;
        iterations += 1;
        history.push(cur.max_norm());
    }
    let g = GridFunction::new(x)?.with_derivative(cur.deriv)?;
    SolveResult::finish(prob, super::tag_periodic(g), "newton", iterations, history)
}

fn step(
    col: &Collocation,
    x: &[f64],
    cur: &Eval,
    bounds: Option<&Bounds>,
    tol: f64,
) -> Result<(Vec<f64>, Eval)> {
    let phi0 = cur.sq_norm();
    let rhs: Vec<f64> = cur.r.iter().map(|v| -v).collect();
    let mut last_err = Error::LineSearch(cur.max_norm());
    for shift in SHIFTS {
        let dx = match col.system(x, &cur.deriv, shift).and_then(|(sys, _)| sys.solve(&rhs)) {
            Ok(dx) if dx.iter().all(|v| v.is_finite()) => dx,
            Ok(_) => {
                last_err = Error::Singular(x.len());
                continue;
            }
            Err(e @ Error::Singular(_)) => {
                last_err = e;
                continue;
            }
            Err(e) => return Err(e),
        };
        let mut s = 1.0;
        while s >= MIN_STEP {
            let mut trial: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + s * d).collect();
            if let Some(b) = bounds {
                b.project(&mut trial);
            }
            if let Ok(ev) = col.eval(&trial) {
                let phi = ev.sq_norm();
                // a converged trial is accepted even without strict decrease,
                // which covers polishing steps at the roundoff floor
                let converged = ev.max_norm() <= tol && ev.max_norm() <= cur.max_norm().max(1e-3 * tol);
                if phi <= (1.0 - 2.0 * ARMIJO * s) * phi0 || converged {
                    return Ok((trial, ev));
                }
            }
            s *= 0.5;
        }
        last_err = Error::LineSearch(cur.max_norm());
    }
    Err(last_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funcspace::differentiate_values;
    use std::f64::consts::PI;

    #[test]
    fn derivative_rows_match_differentiate() {
        let n = 32;
        let v: Vec<f64> = (0..=n).map(|i| (i as f64 * 0.3).sin() + 0.1 * i as f64).collect();
        let direct = differentiate_values(&v, false);
        for (i, row) in derivative_rows(n).iter().enumerate() {
            assert!((apply_row(row, &v) - direct[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn second_rows_compose() {
        let n = 32;
        let d = derivative_rows(n);
        let v: Vec<f64> = (0..=n).map(|i| (i as f64 * 0.2).cos()).collect();
        let dv = differentiate_values(&v, false);
        let ddv = differentiate_values(&dv, false);
        for i in 1..n {
            let r = second_row(&d, i);
            assert!(r.iter().all(|&(j, _)| j.abs_diff(i) <= BAND));
            assert!((apply_row(&r, &v) - ddv[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn linear_problem_one_step() {
        // -x'' = cos(2πt) - x  has x = cos(2πt)/(1 + 4π²) up to discretization
        let prob = ProblemDef::new("lin", |t, x, _| (2.0 * PI * t).cos() - x);
        let cfg = SolveConfig {
            n: 128,
            tol: 1e-10,
            ..SolveConfig::default()
        };
        let eta = GridFunction::constant(128, 0.0).unwrap();
        let r = run(&prob, &eta, None, &cfg).unwrap();
        assert!(r.iterations <= 2);
        let exact = |t: f64| (2.0 * PI * t).cos() / (1.0 + 4.0 * PI * PI);
        let err = (0..=128).map(|i| (r.x.values()[i] - exact(r.x.t(i))).abs()).fold(0.0, f64::max);
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn singular_jacobian_is_regularized() {
        // f = 2 sin x - 1 - 4y: the Jacobian at x = 3π/2 has a null constant mode
        let prob = ProblemDef::new("p", |_, x: f64, y| 2.0 * x.sin() - 1.0 - 4.0 * y);
        let cfg = SolveConfig {
            n: 64,
            ..SolveConfig::default()
        };
        let lo = vec![PI / 2.0; 65];
        let hi = vec![1.5 * PI; 65];
        let eta = GridFunction::constant(64, 1.5 * PI).unwrap();
        let r = run(&prob, &eta, Some(&Bounds { lo, hi }), &cfg).unwrap();
        assert!((r.x.values()[10] - 5.0 * PI / 6.0).abs() < 1e-9);
    }
}
