//! Independent reference computations: fixed-step RK4 shooting on the
//! periodicity map, the Green's function from a numerically integrated
//! fundamental system, and a dense periodic collocation solve.
//!
//! None of these routines share code with the quadrature, the operator `T`
//! or the banded Newton solver.

use nalgebra::{DMatrix, DVector, Matrix2 as NMatrix2, Vector2};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::funcspace::GridFunction;
use crate::kernel::LinearParams;
use crate::operator::ProblemDef;
use crate::solver::SolveResult;

/// RK4 substeps per grid interval.
pub const STEPS_PER_INTERVAL: usize = 16;

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub x1: f64,
    pub v1: f64,
    /// `(x, x')` at `t = k/steps`, `k = 0..=steps`.
    pub states: Vec<(f64, f64)>,
}

fn accel(prob: &ProblemDef, t: f64, x: f64, v: f64) -> Result<f64> {
    Ok(-prob.eval(t, x, v)?)
}

/// Classical RK4 for `x'' = -f(t, x, x')` on `[0, 1]` with `steps` equal steps.
pub fn integrate_ivp(prob: &ProblemDef, x0: f64, v0: f64, steps: usize) -> Result<Trajectory> {
    if steps == 0 {
        return Err(Error::Domain("integration needs at least one step".into()));
    }
    let h = 1.0 / steps as f64;
    let mut states = Vec::with_capacity(steps + 1);
    let (mut x, mut v) = (x0, v0);
    states.push((x, v));
    for k in 0..steps {
        let t = k as f64 * h;
        let (k1x, k1v) = (v, accel(prob, t, x, v)?);
        let (k2x, k2v) = (v + 0.5 * h * k1v, accel(prob, t + 0.5 * h, x + 0.5 * h * k1x, v + 0.5 * h * k1v)?);
        let (k3x, k3v) = (v + 0.5 * h * k2v, accel(prob, t + 0.5 * h, x + 0.5 * h * k2x, v + 0.5 * h * k2v)?);
        let (k4x, k4v) = (v + h * k3v, accel(prob, t + h, x + h * k3x, v + h * k3v)?);
        x += h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
        v += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
        if !(x.is_finite() && v.is_finite()) {
            return Err(Error::Evaluation {
                t: t + h,
                x: Some(x),
                y: Some(v),
            });
        }
        states.push((x, v));
    }
    Ok(Trajectory { x1: x, v1: v, states })
}

#[derive(Clone, Copy, Debug)]
pub struct ShootConfig {
    /// Grid intervals of the returned solution.
    pub n: usize,
    pub max_iter: usize,
    /// Target for `max(|x(1) - x0|, |x'(1) - v0|)`.
    pub tol: f64,
}

impl Default for ShootConfig {
    fn default() -> Self {
        ShootConfig {
            n: crate::funcspace::DEFAULT_INTERVALS,
            max_iter: 60,
            tol: 1e-12,
        }
    }
}

fn defect(prob: &ProblemDef, s: Vector2<f64>, steps: usize) -> Result<Vector2<f64>> {
    let tr = integrate_ivp(prob, s[0], s[1], steps)?;
    Ok(Vector2::new(tr.x1 - s[0], tr.v1 - s[1]))
}

/// Defect of a trial start, rejecting trajectories that leave the domain of
/// the original equation when `f` carries an artificial extension.
fn trial_defect(prob: &ProblemDef, s: Vector2<f64>, steps: usize) -> Option<Vector2<f64>> {
    let tr = integrate_ivp(prob, s[0], s[1], steps).ok()?;
    if let Some(c) = prob.domain_floor {
        let low = tr.states.iter().fold(f64::INFINITY, |m, st| m.min(st.0));
        if low < c - 1e-12 * (1.0 + c.abs()) {
            return None;
        }
    }
    Some(Vector2::new(tr.x1 - s[0], tr.v1 - s[1]))
}

/// Damped Newton with a finite-difference Jacobian on
/// `(x₀, v₀) ↦ (x(1) - x₀, x'(1) - v₀)`.
pub fn shoot_periodic(prob: &ProblemDef, guess: (f64, f64), cfg: &ShootConfig) -> Result<SolveResult> {
    let steps = STEPS_PER_INTERVAL * cfg.n;
    let mut s = Vector2::new(guess.0, guess.1);
    let mut g = defect(prob, s, steps)?;
    let mut history = vec![g.amax()];
    let mut iterations = 0;
    while g.amax() > cfg.tol * (1.0 + s.amax()) {
        if iterations == cfg.max_iter {
            return Err(Error::NoConvergence {
                method: "shooting",
                residual: g.amax(),
                history,
            });
        }
        iterations += 1;
        let mut jac = NMatrix2::zeros();
        for j in 0..2 {
            let hj = 1e-7 * (1.0 + s[j].abs());
            let mut sp = s;
            sp[j] += hj;
            let mut sm = s;
            sm[j] -= hj;
            let col = (defect(prob, sp, steps)? - defect(prob, sm, steps)?) / (2.0 * hj);
            jac.set_column(j, &col);
        }
        let step = jac.lu().solve(&(-g)).ok_or(Error::Singular(0))?;
        let mut lambda = 1.0;
        let accepted = loop {
            let trial = s + lambda * step;
            if let Some(gt) = trial_defect(prob, trial, steps) {
                if gt.amax() < g.amax() {
                    break Some((trial, gt));
                }
            }
            lambda *= 0.5;
            if lambda < 1e-6 {
                break None;
            }
        };
        match accepted {
            Some((trial, gt)) => {
                s = trial;
                g = gt;
                history.push(g.amax());
            }
            // no further decrease: accept if we are at rounding level
            None if g.amax() <= 1e-9 * (1.0 + s.amax()) => break,
            None => return Err(Error::LineSearch(g.amax())),
        }
    }
    let tr = integrate_ivp(prob, s[0], s[1], steps)?;
    let pick = |k: usize| tr.states[k * STEPS_PER_INTERVAL];
    let values = (0..=cfg.n).map(|i| pick(i).0).collect();
    let deriv = (0..=cfg.n).map(|i| pick(i).1).collect();
    let x = GridFunction::new(values)?.with_derivative(deriv)?;
    SolveResult::finish(prob, x, "shooting", iterations, history)
}

/// `h` and `h'` on a uniform grid, from a numerically integrated
/// fundamental system of `h'' = a h - b h'`.
#[derive(Clone, Debug, Serialize)]
pub struct GreenSamples {
    pub h: Vec<f64>,
    pub hp: Vec<f64>,
    /// `h'(1) - h'(0)`
    pub jump: f64,
}

pub fn green_by_ivp(p: &LinearParams, points: usize) -> Result<GreenSamples> {
    let scale = (p.a.abs().sqrt() + p.b.abs()).ceil() as usize;
    let per = 256 * (1 + scale);
    let steps = per * points;
    let h = 1.0 / steps as f64;
    let rhs = |x: f64, v: f64| p.a * x - p.b * v;
    let run = |x0: f64, v0: f64| -> Vec<(f64, f64)> {
        let (mut x, mut v) = (x0, v0);
        let mut out = Vec::with_capacity(points + 1);
        out.push((x, v));
        for k in 0..steps {
            let (k1x, k1v) = (v, rhs(x, v));
            let (k2x, k2v) = (v + 0.5 * h * k1v, rhs(x + 0.5 * h * k1x, v + 0.5 * h * k1v));
            let (k3x, k3v) = (v + 0.5 * h * k2v, rhs(x + 0.5 * h * k2x, v + 0.5 * h * k2v));
            let (k4x, k4v) = (v + h * k3v, rhs(x + h * k3x, v + h * k3v));
            x += h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
            v += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
            if (k + 1) % per == 0 {
                out.push((x, v));
            }
        }
        out
    };
    let (u, w) = (run(1.0, 0.0), run(0.0, 1.0));
    let (u1, w1) = (u[points], w[points]);
    // h = c₁u + c₂w with h(1) = h(0) and h'(1) - h'(0) = 1
    let m = NMatrix2::new(u1.0 - 1.0, w1.0, u1.1, w1.1 - 1.0);
    let c = m.lu().solve(&Vector2::new(0.0, 1.0)).ok_or(Error::Singular(0))?;
    let hv: Vec<f64> = (0..=points).map(|i| c[0] * u[i].0 + c[1] * w[i].0).collect();
    let hp: Vec<f64> = (0..=points).map(|i| c[0] * u[i].1 + c[1] * w[i].1).collect();
    Ok(GreenSamples {
        jump: hp[points] - hp[0],
        h: hv,
        hp,
    })
}

/// Largest `|h_numeric - h|` over 128 equal subintervals.
pub fn verify_h_by_ivp(p: &LinearParams) -> Result<f64> {
    let points = 128;
    let g = green_by_ivp(p, points)?;
    let mut worst: f64 = 0.0;
    for (i, v) in g.h.iter().enumerate() {
        worst = worst.max((v - p.h(i as f64 / points as f64)?).abs());
    }
    Ok(worst)
}

#[derive(Clone, Copy, Debug)]
pub struct DenseConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for DenseConfig {
    fn default() -> Self {
        DenseConfig {
            tol: 1e-10,
            max_iter: 50,
        }
    }
}

/// Periodic fourth-order differences on the `n` distinct nodes.
fn periodic_d(x: &[f64], i: usize, h: f64) -> (f64, f64) {
    let n = x.len();
    let at = |k: isize| x[((i as isize + k).rem_euclid(n as isize)) as usize];
    let d1 = (-at(2) + 8.0 * at(1) - 8.0 * at(-1) + at(-2)) / (12.0 * h);
    let d2 = (-at(2) + 16.0 * at(1) - 30.0 * at(0) + 16.0 * at(-1) - at(-2)) / (12.0 * h * h);
    (d1, d2)
}

/// Newton on `x''_i + f(t_i, x_i, x'_i) = 0` at the `n` distinct nodes of a
/// periodic grid, with wrap-around differences, a dense Jacobian assembled
/// from its own difference quotients of `f`, and a dense LU solve.
pub fn collocate_dense(prob: &ProblemDef, eta0: &GridFunction, cfg: &DenseConfig) -> Result<GridFunction> {
    let n = eta0.n();
    let h = 1.0 / n as f64;
    let mut x: Vec<f64> = eta0.values()[..n].to_vec();
    let w1 = [1.0, -8.0, 0.0, 8.0, -1.0].map(|c| c / (12.0 * h));
    let w2 = [-1.0, 16.0, -30.0, 16.0, -1.0].map(|c| c / (12.0 * h * h));
    let eval = |x: &[f64]| -> Result<Vec<f64>> {
        (0..n)
            .map(|i| {
                let (d1, d2) = periodic_d(x, i, h);
                Ok(d2 + prob.eval(i as f64 * h, x[i], d1)?)
            })
            .collect()
    };
    let mut r = eval(&x)?;
    let norm = |r: &[f64]| r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut it = 0;
    while norm(&r) > cfg.tol {
        if it == cfg.max_iter {
            return Err(Error::NoConvergence {
                method: "dense collocation",
                residual: norm(&r),
                history: vec![],
            });
        }
        it += 1;
        let mut jac = DMatrix::zeros(n, n);
        for i in 0..n {
            let (d1, _) = periodic_d(&x, i, h);
            let t = i as f64 * h;
            let (hx, hy) = (1e-7 * (1.0 + x[i].abs()), 1e-7 * (1.0 + d1.abs()));
            let fx = (prob.eval(t, x[i] + hx, d1)? - prob.eval(t, x[i] - hx, d1)?) / (2.0 * hx);
            let fy = (prob.eval(t, x[i], d1 + hy)? - prob.eval(t, x[i], d1 - hy)?) / (2.0 * hy);
            for (k, off) in (-2isize..=2).enumerate() {
                let j = (i as isize + off).rem_euclid(n as isize) as usize;
                jac[(i, j)] += w2[k] + fy * w1[k];
            }
            jac[(i, i)] += fx;
        }
        let step = jac
            .lu()
            .solve(&DVector::from_iterator(n, r.iter().map(|v| -v)))
            .ok_or(Error::Singular(0))?;
        let mut lambda = 1.0;
        loop {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a + lambda * s).collect();
            if let Ok(rt) = eval(&trial) {
                if norm(&rt) < norm(&r) {
                    x = trial;
                    r = rt;
                    break;
                }
            }
            lambda *= 0.5;
            if lambda < 1e-6 {
                return Err(Error::LineSearch(norm(&r)));
            }
        }
    }
    let d: Vec<f64> = (0..n).map(|i| periodic_d(&x, i, h).0).collect();
    let mut values = x.clone();
    values.push(x[0]);
    let mut deriv = d.clone();
    deriv.push(d[0]);
    GridFunction::new(values)?.with_derivative(deriv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn cosh_solution() {
        // f = -x gives x'' = x
        let prob = ProblemDef::new("grow", |_, x, _| -x);
        let tr = integrate_ivp(&prob, 1.0, 0.0, 1000).unwrap();
        assert!((tr.x1 - 1f64.cosh()).abs() < 1e-8);
        assert!((tr.v1 - 1f64.sinh()).abs() < 1e-8);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let prob = ProblemDef::new("grow", |_, x, _| -x);
        let err = |s| (integrate_ivp(&prob, 1.0, 0.0, s).unwrap().x1 - 1f64.cosh()).abs();
        let ratio = err(20) / err(40);
        assert!((ratio - 16.0).abs() <= 4.0, "{ratio}");
    }

    #[test]
    fn harmonic_orbit_closes() {
        let prob = ProblemDef::new("osc", |_, x, _| 4.0 * PI * PI * x);
        let tr = integrate_ivp(&prob, 1.0, 0.0, 4096).unwrap();
        assert!((tr.x1 - 1.0).abs() < 1e-6 && tr.v1.abs() < 1e-6);
    }

    #[test]
    fn pendulum_equilibrium_stays() {
        let prob = ProblemDef::new("pend", |_, x: f64, y: f64| (1.0 + y * y).powf(1.5) * (2.0 * x.sin() - 4.0 * y));
        let tr = integrate_ivp(&prob, PI, 0.0, 512).unwrap();
        assert!((tr.x1 - PI).abs() < 1e-12 && tr.v1.abs() < 1e-12);
    }

    #[test]
    fn shooting_finds_unit_solution() {
        let prob = ProblemDef::new("sing", |_, x: f64, _| x.max(1.0).recip() - 1.0).with_floor(1.0);
        let r = shoot_periodic(&prob, (1.2, 0.0), &ShootConfig { n: 64, ..Default::default() }).unwrap();
        let dev = r.x.values().iter().fold(0.0f64, |m, v| m.max((v - 1.0).abs()));
        assert!(dev < 1e-9, "{dev} {:?}", r.history);
    }

    #[test]
    fn green_by_ivp_matches_closed_form() {
        for (a, b) in [(1.0, 0.0), (2.0, 1.0), (30.0, -4.0)] {
            let p = LinearParams::new(a, b).unwrap();
            assert!(verify_h_by_ivp(&p).unwrap() <= 1e-8, "({a}, {b})");
            let g = green_by_ivp(&p, 64).unwrap();
            assert!((g.jump - 1.0).abs() <= 1e-8);
        }
    }

    #[test]
    fn dense_collocation_solves_linear_problem() {
        // -x'' = -x + cos(2πt) has x = cos(2πt)/(1 + 4π²)
        let prob = ProblemDef::new("lin", |t: f64, x, _| -x + (2.0 * PI * t).cos());
        let eta = GridFunction::constant(64, 0.0).unwrap();
        let x = collocate_dense(&prob, &eta, &DenseConfig::default()).unwrap();
        for i in 0..=64 {
            let exact = (2.0 * PI * x.t(i)).cos() / (1.0 + 4.0 * PI * PI);
            assert!((x.values()[i] - exact).abs() < 1e-7);
        }
    }
}
