//! Problem definitions, the fixed-point operator `T` and the residual of
//! `-x'' = f(t, x, x')`.
//!
//! `T` maps a periodic candidate `η` to the periodic solution of the shifted
//! linear problem `-x'' = f(t,η,η') - a(x-η) + b(x'-η')`, evaluated through
//! the Green's function convolution for both `x` and `x'`.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::conditions::Bracket;
use crate::error::{finite_at, Error, Result};
use crate::funcspace::{differentiate_values, GridFunction};
use crate::kernel::{GreenQuadrature, LinearParams};
use crate::par::Execution;

/// Thread-safe evaluator of `(t, x, y)`.
pub type Rhs = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct ProblemDef {
    pub label: String,
    pub f: Rhs,
    pub fx: Option<Rhs>,
    pub fy: Option<Rhs>,
    /// Smallest `x` at which the original (unextended) equation is defined.
    pub domain_floor: Option<f64>,
    /// Decomposition `f = f1 + f2` used by the growth-condition check.
    pub split: Option<(Rhs, Rhs)>,
}

impl fmt::Debug for ProblemDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemDef")
            .field("label", &self.label)
            .field("has_fx", &self.fx.is_some())
            .field("has_fy", &self.fy.is_some())
            .field("domain_floor", &self.domain_floor)
            .field("has_split", &self.split.is_some())
            .finish()
    }
}

fn fd_step(v: f64) -> f64 {
    1e-6 * (1.0 + v.abs())
}

impl ProblemDef {
    pub fn new(label: impl Into<String>, f: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        ProblemDef {
            label: label.into(),
            f: Arc::new(f),
            fx: None,
            fy: None,
            domain_floor: None,
            split: None,
        }
    }

    pub fn with_partials(
        mut self,
        fx: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        fy: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.fx = Some(Arc::new(fx));
        self.fy = Some(Arc::new(fy));
        self
    }

    pub fn with_floor(mut self, floor: f64) -> Self {
        self.domain_floor = Some(floor);
        self
    }

    pub fn with_split(mut self, f1: Rhs, f2: Rhs) -> Self {
        self.split = Some((f1, f2));
        self
    }

    pub fn eval(&self, t: f64, x: f64, y: f64) -> Result<f64> {
        finite_at((self.f)(t, x, y), t, x, y)
    }

    /// `∂f/∂x`, supplied or by central differences.
    pub fn dfdx(&self, t: f64, x: f64, y: f64) -> Result<f64> {
        match &self.fx {
            Some(fx) => finite_at(fx(t, x, y), t, x, y),
            None => {
                let hx = fd_step(x);
                Ok((self.eval(t, x + hx, y)? - self.eval(t, x - hx, y)?) / (2.0 * hx))
            }
        }
    }

    /// `∂f/∂y`, supplied or by central differences.
    pub fn dfdy(&self, t: f64, x: f64, y: f64) -> Result<f64> {
        match &self.fy {
            Some(fy) => finite_at(fy(t, x, y), t, x, y),
            None => {
                let hy = fd_step(y);
                Ok((self.eval(t, x, y + hy)? - self.eval(t, x, y - hy)?) / (2.0 * hy))
            }
        }
    }

    /// The time-reversed problem `F(t, y, y') = f(1 - t, y, -y')`.
    pub fn reversed(&self) -> ProblemDef {
        let f = self.f.clone();
        let rev = move |g: Rhs| -> Rhs { Arc::new(move |t, x, y| g(1.0 - t, x, -y)) };
        let fx = self.fx.clone().map(&rev);
        let fy = self.fy.clone().map(|g| -> Rhs {
            Arc::new(move |t: f64, x: f64, y: f64| -g(1.0 - t, x, -y))
        });
        let split = self
            .split
            .clone()
            .map(|(f1, f2)| (rev(f1), rev(f2)));
        ProblemDef {
            label: format!("{} (reversed)", self.label),
            f: rev(f),
            fx,
            fy,
            domain_floor: self.domain_floor,
            split,
        }
    }

    /// Samples `f(t_i, x_i, x'_i)` along a grid function.
    pub fn along(&self, x: &GridFunction) -> Result<Vec<f64>> {
        let dx = x.derivative_or_err()?;
        (0..=x.n())
            .map(|i| self.eval(x.t(i), x.values()[i], dx[i]))
            .collect()
    }
}

/// The operator `T` for fixed `(a, b)` and grid size.
#[derive(Clone, Debug)]
pub struct TOperator {
    params: LinearParams,
    quad: GreenQuadrature,
}

impl TOperator {
    pub fn new(params: LinearParams, n: usize, exec: Execution) -> Result<Self> {
        Ok(TOperator {
            params,
            quad: GreenQuadrature::new(&params, n, exec)?,
        })
    }

    pub fn params(&self) -> &LinearParams {
        &self.params
    }

    /// Periodic solution of `-x'' + a x - b x' = g` for node samples `g`.
    pub fn solve_linear(&self, forcing: &[f64]) -> Result<GridFunction> {
        let p = &self.params;
        let mut out = self.quad.apply(&[p.h_kernel(), p.h_prime_kernel()], forcing);
        let dx = out.pop().expect("two kernels");
        let x = out.pop().expect("two kernels");
        GridFunction::new(x)?.with_derivative(dx)?.into_periodic()
    }

    pub fn apply(&self, prob: &ProblemDef, eta: &GridFunction) -> Result<GridFunction> {
        if eta.n() != self.quad.n() {
            return Err(Error::Grid(format!(
                "candidate has {} intervals, operator built for {}",
                eta.n(),
                self.quad.n()
            )));
        }
        let d = eta.derivative_or_err()?;
        let (a, b) = (self.params.a, self.params.b);
        let forcing = (0..=eta.n())
            .map(|i| {
                let (x, y) = (eta.values()[i], d[i]);
                Ok(prob.eval(eta.t(i), x, y)? + a * x - b * y)
            })
            .collect::<Result<Vec<_>>>()?;
        self.solve_linear(&forcing)
    }
}

/// One application of `T` to `eta`.
pub fn apply_t(
    prob: &ProblemDef,
    p: &LinearParams,
    eta: &GridFunction,
    exec: Execution,
) -> Result<GridFunction> {
    TOperator::new(*p, eta.n(), exec)?.apply(prob, eta)
}

/// Max deviations of the four closed-form identities for `m, M, n, N`.
#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct IdentityReport {
    pub m: f64,
    pub big_m: f64,
    pub n: f64,
    pub big_n: f64,
}

impl IdentityReport {
    pub fn max(&self) -> f64 {
        self.m.max(self.big_m).max(self.n).max(self.big_n)
    }
}

/// Evaluates `m, M, n, N` by quadrature and compares each with its closed form.
pub fn mmnn_identity_check(
    bracket: &Bracket,
    p: &LinearParams,
    delta_cap: f64,
    exec: Execution,
) -> Result<IdentityReport> {
    let n = bracket.n();
    let quad = GreenQuadrature::new(p, n, exec)?;
    let (a, b, k0) = (p.a, p.b, p.k0);
    let kernels = [p.h_kernel(), p.h_shifted_kernel()];
    let side = |g: &GridFunction, g2: &[f64], shift: f64| -> Result<Vec<Vec<f64>>> {
        let d = g.derivative_or_err()?;
        let forcing: Vec<f64> = (0..=n)
            .map(|i| -g2[i] + a * g.values()[i] - b * d[i] + shift)
            .collect();
        Ok(quad.apply(&kernels, &forcing))
    };
    let lo = side(&bracket.alpha, &bracket.alpha2, -delta_cap)?;
    let hi = side(&bracket.beta, &bracket.beta2, delta_cap)?;
    let (r1, r2) = (bracket.r1, bracket.r2);
    let da = bracket.alpha.derivative_or_err()?;
    let db = bracket.beta.derivative_or_err()?;
    let mut rep = IdentityReport {
        m: 0.0,
        big_m: 0.0,
        n: 0.0,
        big_n: 0.0,
    };
    for i in 0..=n {
        let t = bracket.alpha.t(i);
        let (h, hp) = (p.h(t)?, p.h_prime(t)?);
        let (al, be) = (bracket.alpha.values()[i], bracket.beta.values()[i]);
        let m = al + r1 * h - delta_cap / a;
        let big_m = be - r2 * h + delta_cap / a;
        let nn = da[i] + k0 * al + r1 * (k0 * h + hp) - k0 * delta_cap / a;
        let big_n = db[i] + k0 * be - r2 * (k0 * h + hp) + k0 * delta_cap / a;
        rep.m = rep.m.max((lo[0][i] - m).abs());
        rep.big_m = rep.big_m.max((hi[0][i] - big_m).abs());
        rep.n = rep.n.max((lo[1][i] - nn).abs());
        rep.big_n = rep.big_n.max((hi[1][i] - big_n).abs());
    }
    Ok(rep)
}

/// Max of the interior defect `|x'' + f(t,x,x')|` (with `x''` from the
/// derivative samples) and the two periodicity defects.
pub fn residual(prob: &ProblemDef, x: &GridFunction) -> Result<f64> {
    let d = x.derivative_or_err()?;
    let n = x.n();
    let dd = differentiate_values(d, false);
    let mut r = (x.values()[n] - x.values()[0]).abs().max((d[n] - d[0]).abs());
    for i in 1..n {
        let f = prob.eval(x.t(i), x.values()[i], d[i])?;
        r = r.max((dd[i] + f).abs());
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine_eta(n: usize) -> GridFunction {
        GridFunction::sample_with_derivative(
            n,
            |t| 0.3 * (2.0 * PI * t).sin() + 1.0,
            |t| 0.6 * PI * (2.0 * PI * t).cos(),
        )
        .unwrap()
        .into_periodic()
        .unwrap()
    }

    #[test]
    fn constant_forcing_gives_constant() {
        let (a, b, c0) = (3.0, -1.5, 2.0);
        let prob = ProblemDef::new("lin", move |_, x, y| c0 - a * x + b * y);
        let p = LinearParams::new(a, b).unwrap();
        let x = apply_t(&prob, &p, &sine_eta(64), Execution::Sequential).unwrap();
        for v in x.values() {
            assert!((v - c0 / a).abs() < 1e-12);
        }
        assert!(x.is_periodic());
    }

    #[test]
    fn cosine_forcing_matches_analytic() {
        let p = LinearParams::new(1.0, 0.0).unwrap();
        let prob = ProblemDef::new("cos", |t, x, _| (2.0 * PI * t).cos() - x);
        let x = apply_t(&prob, &p, &sine_eta(256), Execution::Parallel).unwrap();
        let c = 1.0 + 4.0 * PI * PI;
        let d = x.derivative().unwrap();
        for i in 0..=256 {
            let t = x.t(i);
            assert!((x.values()[i] - (2.0 * PI * t).cos() / c).abs() < 1e-9);
            assert!((d[i] + 2.0 * PI * (2.0 * PI * t).sin() / c).abs() < 1e-8);
        }
    }

    #[test]
    fn fixed_point_of_exact_solution() {
        let prob = ProblemDef::new("pend0", |_, x: f64, y: f64| (1.0 + y * y).powf(1.5) * (2.0 * x.sin() - 4.0 * y));
        let eta = GridFunction::constant(64, PI).unwrap().into_periodic().unwrap();
        let p = LinearParams::new(12.0, -20.0).unwrap();
        let x = apply_t(&prob, &p, &eta, Execution::Sequential).unwrap();
        assert!(x.sup_distance(&eta).unwrap() < 1e-12);
        assert!(residual(&prob, &eta).unwrap() < 1e-10);
    }

    #[test]
    fn residual_of_perturbed_solution() {
        // x = 1 + ε sin(2πt) in x'' + 1/x = 1: defect ≈ ε(4π² + 1) at the crest
        let prob = ProblemDef::new("sing", |_, x: f64, _| x.recip() - 1.0);
        let eps = 0.01;
        let x = GridFunction::sample_with_derivative(
            256,
            |t| 1.0 + eps * (2.0 * PI * t).sin(),
            |t| 2.0 * PI * eps * (2.0 * PI * t).cos(),
        )
        .unwrap();
        let r = residual(&prob, &x).unwrap();
        let expect = (0..=256)
            .map(|i| {
                let t = i as f64 / 256.0;
                let s = eps * (2.0 * PI * t).sin();
                (-4.0 * PI * PI * s + 1.0 / (1.0 + s) - 1.0).abs()
            })
            .fold(0.0, f64::max);
        assert!((r - expect).abs() < 1e-6 * expect, "{r} vs {expect}");
        let exact = GridFunction::constant(64, 1.0).unwrap();
        assert!(residual(&prob, &exact).unwrap() < 1e-12);
    }

    #[test]
    fn output_solves_linear_problem() {
        let prob = ProblemDef::new("nl", |t, x: f64, y: f64| (2.0 * PI * t).sin() + 0.3 * x.cos() - 0.1 * y * y);
        let p = LinearParams::new(4.0, 1.0).unwrap();
        let eta = sine_eta(256);
        let x = apply_t(&prob, &p, &eta, Execution::Sequential).unwrap();
        let dx = x.derivative().unwrap();
        let deta = eta.derivative().unwrap();
        let ddx = differentiate_values(dx, false);
        let mut worst: f64 = 0.0;
        for i in 1..256 {
            let t = x.t(i);
            let rhs = -prob.eval(t, eta.values()[i], deta[i]).unwrap()
                + p.a * (x.values()[i] - eta.values()[i])
                - p.b * (dx[i] - deta[i]);
            worst = worst.max((ddx[i] - rhs).abs());
        }
        assert!(worst < 1e-6, "{worst}");
        let num = x.differentiate().unwrap();
        assert!(num.sup_distance(&GridFunction::new(dx.to_vec()).unwrap()).unwrap() < 1e-5);
    }

    #[test]
    fn reversal_maps_arguments() {
        let prob = ProblemDef::new("r", |t, x, y| t + 10.0 * x + 100.0 * y);
        let r = prob.reversed();
        assert_eq!(r.eval(0.25, 1.0, 2.0).unwrap(), 0.75 + 10.0 - 200.0);
        assert!((r.dfdy(0.3, 0.0, 0.0).unwrap() + 100.0).abs() < 1e-6);
    }
}
