use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Coefficient, Curve, Family, Field, Instance, Route};
use crate::conditions::Bracket;
use crate::error::{Error, Result};
use crate::funcspace::{cumulative_integral, GridFunction};
use crate::operator::{ProblemDef, Rhs};

/// Points in `t` used by invariant checks.
const CHECK_T: usize = 512;
/// Points in `x` (or `y`) used by invariant checks.
const CHECK_X: usize = 65;
const INVARIANT_TOL: f64 = 1e-12;

fn grid_t() -> impl Iterator<Item = f64> {
    (0..=CHECK_T).map(|i| i as f64 / CHECK_T as f64)
}

fn invariant(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Infeasible(msg()))
    }
}

/// Smallest pointwise slack of `lhs(t) >= rhs(t)`, with its location.
fn min_slack(f: impl Fn(f64) -> f64) -> (f64, f64) {
    grid_t().map(|t| (f(t), t)).fold((f64::INFINITY, 0.0), |m, v| if v.0 < m.0 { v } else { m })
}

/// `x'' + μ sin x - ℓ(t,x) x' = e` with the curvature operator on `x'`.
#[derive(Clone, Debug)]
pub struct PendulumSpec {
    pub mu: Coefficient,
    pub ell: Field,
    pub e: Coefficient,
    pub r: f64,
    pub d: f64,
}

impl PendulumSpec {
    /// `d` defaults to `(1 + π²r²)^{3/2} ℓ_max`.
    pub fn new(mu: Coefficient, ell: Field, e: Coefficient, r: f64, d: Option<f64>) -> Result<Self> {
        invariant(r > 0.0 && r.is_finite(), || format!("r must be positive, got {r}"))?;
        let (s, t) = min_slack(|t| mu.eval(t) - e.eval(t).abs());
        invariant(s >= -INVARIANT_TOL, || format!("mu(t) < |e(t)| at t = {t} (by {:e})", -s))?;
        let xs: Vec<f64> = (0..CHECK_X)
            .map(|j| PI / 2.0 + PI * j as f64 / (CHECK_X - 1) as f64)
            .collect();
        let mut ell_max = f64::NEG_INFINITY;
        for t in grid_t() {
            let vals = xs.iter().map(|&x| ell.eval(t, x));
            let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            invariant(lo.is_finite() && hi.is_finite(), || format!("ell is not finite at t = {t}"))?;
            let slack = r * lo - mu.eval(t);
            invariant(slack >= -INVARIANT_TOL, || {
                format!("r*ell0(t) < mu(t) at t = {t} (by {:e})", -slack)
            })?;
            ell_max = ell_max.max(hi);
        }
        let bound = (1.0 + PI * PI * r * r).powf(1.5) * ell_max;
        let d = d.unwrap_or(bound);
        invariant(d >= bound * (1.0 - INVARIANT_TOL) && d > 0.0, || {
            format!("d = {d} is below (1 + pi^2 r^2)^(3/2) ell_max = {bound}")
        })?;
        Ok(PendulumSpec { mu, ell, e, r, d })
    }

    /// `(a, b) = (r d, -d)`
    pub fn reference_shift(&self) -> (f64, f64) {
        (self.r * self.d, -self.d)
    }

    pub fn instance(&self, label: &str) -> Result<Instance> {
        let ratio = (self.e.mean() / self.mu.mean()).clamp(-1.0, 1.0);
        Ok(Instance {
            label: label.to_string(),
            family: Family::Pendulum,
            prob: pendulum_to_standard(self),
            bracket: Some(Arc::new(|n| Bracket::constant(n, PI / 2.0, 1.5 * PI))),
            shift: Some(self.reference_shift()),
            delta: 0.0,
            delta_cap: 0.0,
            route: Route::Envelope,
            growth_c: None,
            guess: (PI - ratio.asin(), 0.0),
            slope_bound: Some(PI * self.r),
            exact: None,
        })
    }
}

/// `f(t,x,y) = (1+y²)^{3/2} [μ(t) sin x - ℓ(t,x) y - e(t)]`
pub fn pendulum_to_standard(spec: &PendulumSpec) -> ProblemDef {
    let (mu, e) = (spec.mu.func(), spec.e.func());
    let ell = spec.ell.clone();
    let (mu1, ell1) = (mu.clone(), ell.clone());
    let (mu2, e2, ell2) = (mu.clone(), e.clone(), ell.clone());
    ProblemDef::new("pendulum", move |t, x: f64, y: f64| {
        (1.0 + y * y).powf(1.5) * (mu(t) * x.sin() - ell.eval(t, x) * y - e(t))
    })
    .with_partials(
        move |t, x: f64, y: f64| (1.0 + y * y).powf(1.5) * (mu1(t) * x.cos() - ell1.dx(t, x) * y),
        move |t, x: f64, y: f64| {
            let w = 1.0 + y * y;
            let inner = mu2(t) * x.sin() - ell2.eval(t, x) * y - e2(t);
            3.0 * y * w.sqrt() * inner - w.powf(1.5) * ell2.eval(t, x)
        },
    )
}

/// `x'' + p(t) x^{-λ} = e(t)`
#[derive(Clone, Debug)]
pub struct SingularSpec {
    pub p: Coefficient,
    pub e: Coefficient,
    pub lambda: f64,
    pub big_c: f64,
    /// `c = C^{-1/λ}`, the constant lower solution.
    pub c: f64,
}

impl SingularSpec {
    /// `C` defaults to the least constant with `C p(t) ≥ e(t)`.
    pub fn new(p: Coefficient, e: Coefficient, lambda: f64) -> Result<Self> {
        let big_c = grid_t()
            .filter(|&t| p.eval(t) > 0.0)
            .map(|t| e.eval(t) / p.eval(t))
            .fold(f64::NEG_INFINITY, f64::max);
        invariant(big_c.is_finite(), || "p(t) is never positive".into())?;
        Self::with_big_c(p, e, lambda, big_c)
    }

    pub fn with_big_c(p: Coefficient, e: Coefficient, lambda: f64, big_c: f64) -> Result<Self> {
        invariant(lambda > 0.0 && lambda.is_finite(), || format!("lambda must be positive, got {lambda}"))?;
        invariant(e.mean() > 0.0, || format!("mean of e is {} <= 0", e.mean()))?;
        invariant(big_c > 0.0, || format!("C must be positive, got {big_c}"))?;
        let (s, t) = min_slack(|t| big_c * p.eval(t) - e.eval(t));
        invariant(s >= -INVARIANT_TOL * (1.0 + big_c), || {
            format!("C p(t) < e(t) at t = {t} (by {:e})", -s)
        })?;
        Ok(SingularSpec {
            c: big_c.powf(-1.0 / lambda),
            p,
            e,
            lambda,
            big_c,
        })
    }

    fn p_max(&self) -> f64 {
        self.p.max().abs().max(self.p.min().abs())
    }

    /// `(a, b) = (λ p_max / c^{λ+1}, 0)`
    pub fn reference_shift(&self) -> (f64, f64) {
        (self.lambda * self.p_max() / self.c.powf(self.lambda + 1.0), 0.0)
    }

    pub fn bracket(&self, n: usize) -> Result<Bracket> {
        let m = choose_m_example1(self, n)?;
        let (beta, beta2) = build_beta_example1(&self.e, m, n)?;
        Bracket::new(
            GridFunction::constant(n, self.c)?,
            beta,
            Some(vec![0.0; n + 1]),
            Some(beta2),
        )
    }

    pub fn instance(&self, label: &str) -> Result<Instance> {
        let spec = self.clone();
        let guess = (self.p.mean().max(0.0) / self.e.mean()).powf(-1.0 / self.lambda).max(self.c);
        Ok(Instance {
            label: label.to_string(),
            family: Family::Singular,
            prob: singular_to_standard(self),
            bracket: Some(Arc::new(move |n| spec.bracket(n))),
            shift: Some(self.reference_shift()),
            delta: 0.0,
            delta_cap: 0.0,
            route: Route::EnvelopeDifference,
            growth_c: None,
            guess: (guess, 0.0),
            slope_bound: None,
            exact: None,
        })
    }
}

/// `f = p x^{-λ} - e` for `x ≥ c`, continued by `p c^{-λ} - e` below `c`.
pub fn singular_to_standard(spec: &SingularSpec) -> ProblemDef {
    let (p, e) = (spec.p.func(), spec.e.func());
    let (p1, lambda, c) = (p.clone(), spec.lambda, spec.c);
    ProblemDef::new("singular", move |t, x: f64, _| p(t) * x.max(c).powf(-lambda) - e(t))
        .with_partials(
            move |t, x: f64, _| {
                if x >= c {
                    -lambda * p1(t) * x.powf(-lambda - 1.0)
                } else {
                    0.0
                }
            },
            |_, _, _| 0.0,
        )
        .with_floor(c)
}

/// `(1-t)∫₀ᵗ s k + t∫ₜ¹ (1-s) k` and its derivative `∫ₜ¹(1-s)k - ∫₀ᵗ s k`.
fn weighted_integrals(k: &[f64]) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let n = k.len() - 1;
    let t = |i: usize| i as f64 / n as f64;
    let sk: Vec<f64> = (0..=n).map(|i| t(i) * k[i]).collect();
    let rk: Vec<f64> = (0..=n).map(|i| (1.0 - t(i)) * k[i]).collect();
    let a = cumulative_integral(&sk)?;
    let c = cumulative_integral(&rk)?;
    let b: Vec<f64> = c.iter().map(|v| c[n] - v).collect();
    let value = (0..=n).map(|i| (1.0 - t(i)) * a[i] + t(i) * b[i]).collect();
    let slope = (0..=n).map(|i| b[i] - a[i]).collect();
    Ok((value, slope, a[n] + b[0]))
}

/// `β = m + n t(1-t) - [(1-t)∫₀ᵗ s e + t∫ₜ¹ (1-s) e]` with `n = ½∫e`,
/// returned with exact `β'` and `β'' = -2n + e`.
pub fn build_beta_example1(e: &Coefficient, m: f64, n: usize) -> Result<(GridFunction, Vec<f64>)> {
    let ev = e.sample(n)?;
    let (v, s, total) = weighted_integrals(ev.values())?;
    let half = total / 2.0;
    let t = |i: usize| i as f64 / n as f64;
    let values = (0..=n).map(|i| m + half * t(i) * (1.0 - t(i)) - v[i]).collect();
    let deriv = (0..=n).map(|i| half * (1.0 - 2.0 * t(i)) - s[i]).collect();
    let second = ev.values().iter().map(|e| -2.0 * half + e).collect();
    Ok((GridFunction::new(values)?.with_derivative(deriv)?, second))
}

/// `d = max{c, (p_max/2n)^{1/λ}}` and the least `m ≥ d` with `min β ≥ d`.
pub fn choose_m_example1(spec: &SingularSpec, n: usize) -> Result<f64> {
    let (shape, _) = build_beta_example1(&spec.e, 0.0, n)?;
    let two_n = spec.e.mean();
    let p_max = spec.p.max().max(0.0);
    let d = spec.c.max((p_max / two_n).powf(1.0 / spec.lambda));
    Ok(d + (-shape.min_value()).max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DuffingVariant {
    Example2,
    Example3,
}

/// `x'' + p(t) g(x) - q(t) h(x') = e(t)`
#[derive(Clone, Debug)]
pub struct DuffingSpec {
    pub p: Coefficient,
    pub q: Coefficient,
    pub e: Coefficient,
    pub g: Curve,
    pub h: Curve,
    pub variant: DuffingVariant,
    /// Constant lower solution, `g(c) p(t) ≥ e(t)`.
    pub c: f64,
    pub n1: Option<f64>,
    pub m: Option<f64>,
}

/// Range of `y` scanned when checking the sign of `h` for the second example.
const H_SCAN: f64 = 100.0;

impl DuffingSpec {
    pub fn new(
        p: Coefficient,
        q: Coefficient,
        e: Coefficient,
        g: Curve,
        h: Curve,
        variant: DuffingVariant,
        c: f64,
    ) -> Result<Self> {
        invariant(c > 0.0 && c.is_finite(), || format!("c must be positive, got {c}"))?;
        invariant(q.min() >= -INVARIANT_TOL, || format!("q has negative values (min {})", q.min()))?;
        invariant(e.mean() > 0.0, || format!("mean of e is {} <= 0", e.mean()))?;
        invariant(h.eval(0.0).abs() <= INVARIANT_TOL, || format!("h(0) = {} != 0", h.eval(0.0)))?;
        let gc = g.eval(c);
        let (s, t) = min_slack(|t| gc * p.eval(t) - e.eval(t));
        invariant(s >= -INVARIANT_TOL, || format!("g(c) p(t) < e(t) at t = {t} (by {:e})", -s))?;
        match variant {
            DuffingVariant::Example2 => {
                let worst = (0..=2 * CHECK_X)
                    .map(|j| -H_SCAN + 2.0 * H_SCAN * j as f64 / (2 * CHECK_X) as f64)
                    .map(|y| h.eval(y))
                    .fold(f64::INFINITY, f64::min);
                invariant(worst >= -INVARIANT_TOL, || format!("h takes the negative value {worst}"))?;
            }
            DuffingVariant::Example3 => {
                for (name, k) in [("p", &p), ("e", &e)] {
                    invariant(k.min() >= -INVARIANT_TOL, || format!("{name} has negative values (min {})", k.min()))?;
                }
                invariant(q.mean() > 0.0, || "mean of q must be positive".into())?;
                invariant(p.mean() > 0.0, || "mean of p must be positive".into())?;
                let floor = -e.mean() / q.mean();
                let worst = h_min(&h, 2.0 * e.mean());
                invariant(worst > floor, || {
                    format!("h reaches {worst} <= -mean(e)/mean(q) = {floor} on |y| <= 2 mean(e)")
                })?;
            }
        }
        Ok(DuffingSpec {
            p,
            q,
            e,
            g,
            h,
            variant,
            c,
            n1: None,
            m: None,
        })
    }

    pub fn with_n1(mut self, n1: f64) -> Self {
        self.n1 = Some(n1);
        self
    }

    pub fn with_m(mut self, m: f64) -> Self {
        self.m = Some(m);
        self
    }

    /// `sup_t p(t) g(x)`
    fn pg_max(&self, x: f64) -> f64 {
        let g = self.g.eval(x);
        (self.p.max() * g).max(self.p.min() * g)
    }

    pub fn bracket(&self, n: usize) -> Result<Bracket> {
        let (beta, beta2) = match self.variant {
            DuffingVariant::Example2 => {
                let level = self.e.mean();
                let (shape, _) = build_beta_example1(&self.e, 0.0, n)?;
                let m = match self.m {
                    Some(m) => m,
                    None => tail_threshold(self.c, |x| self.pg_max(x) <= level)? + (-shape.min_value()).max(0.0),
                };
                build_beta_example1(&self.e, m, n)?
            }
            DuffingVariant::Example3 => {
                let n1 = match self.n1 {
                    Some(v) => v,
                    None => default_n1(self)?,
                };
                let m = match self.m {
                    Some(m) => m,
                    None => {
                        let (shape, _) = build_beta_example3(self, n1, 0.0, n)?;
                        let n2 = self.n2(n1)?;
                        tail_threshold(self.c, |x| self.g.eval(x) <= n2)? + (-shape.min_value()).max(0.0)
                    }
                };
                build_beta_example3(self, n1, m, n)?
            }
        };
        Bracket::new(GridFunction::constant(n, self.c)?, beta, Some(vec![0.0; n + 1]), Some(beta2))
    }

    fn n2(&self, n1: f64) -> Result<f64> {
        let pbar = self.p.mean();
        if pbar <= 0.0 {
            return Err(Error::Infeasible(format!("mean of p is {pbar}, need > 0")));
        }
        Ok((self.e.mean() - self.q.mean() * n1) / pbar)
    }

    /// Starting point for shooting: the constant balancing `p̄ g(x) = ē`.
    fn guess(&self) -> f64 {
        let target = self.e.mean();
        let pbar = self.p.mean();
        let (mut lo, mut hi) = (self.c, self.c);
        while pbar * self.g.eval(hi) > target && hi < 1e6 * self.c {
            hi *= 2.0;
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if pbar * self.g.eval(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    pub fn instance(&self, label: &str) -> Result<Instance> {
        let spec = self.clone();
        // fail early on an infeasible construction
        spec.bracket(crate::funcspace::MIN_INTERVALS)?;
        Ok(Instance {
            label: label.to_string(),
            family: Family::Duffing,
            prob: duffing_to_standard(self),
            bracket: Some(Arc::new(move |n| spec.bracket(n))),
            shift: None,
            delta: 0.0,
            delta_cap: 0.0,
            route: Route::Growth,
            growth_c: Some(Coefficient::constant(0.0)?),
            guess: (self.guess(), 0.0),
            slope_bound: None,
            exact: None,
        })
    }
}

fn h_min(h: &Curve, ymax: f64) -> f64 {
    let k = 8 * CHECK_X;
    (0..=k)
        .map(|j| -ymax + 2.0 * ymax * j as f64 / k as f64)
        .map(|y| h.eval(y))
        .fold(f64::INFINITY, f64::min)
}

/// Least `d ≥ start` (on a 10% geometric ladder) such that `ok` holds on
/// samples of `[d, 1000 d]`.
fn tail_threshold(start: f64, ok: impl Fn(f64) -> bool) -> Result<f64> {
    let mut d = start;
    for _ in 0..400 {
        if (0..=64).all(|j| ok(d * 1000f64.powf(j as f64 / 64.0))) {
            return Ok(d);
        }
        d *= 1.1;
    }
    Err(Error::Infeasible(format!(
        "no threshold found up to {d:e}; g does not decay far enough"
    )))
}

/// Midpoint of the admissible interval `max{0, max_{|y|≤2ē} -h(y)} ≤ n₁ < ē/q̄`.
pub fn default_n1(spec: &DuffingSpec) -> Result<f64> {
    let ebar = spec.e.mean();
    let lo = (-h_min(&spec.h, 2.0 * ebar)).max(0.0);
    let hi = ebar / spec.q.mean();
    if lo >= hi {
        return Err(Error::Infeasible(format!(
            "no admissible n1: need max(-h) = {lo} < mean(e)/mean(q) = {hi}"
        )));
    }
    Ok(0.5 * (lo + hi))
}

/// `β = m + (1-t)∫₀ᵗ s k + t∫ₜ¹ (1-s) k` with `k = n₁q + n₂p - e` and
/// `n₂ = (ē - q̄n₁)/p̄`, returned with exact `β'` and `β'' = -k`.
pub fn build_beta_example3(spec: &DuffingSpec, n1: f64, m: f64, n: usize) -> Result<(GridFunction, Vec<f64>)> {
    let ebar = spec.e.mean();
    let qbar = spec.q.mean();
    if !(n1 > 0.0 && n1 < ebar / qbar) {
        return Err(Error::Infeasible(format!("n1 = {n1} is outside (0, {})", ebar / qbar)));
    }
    let worst = h_min(&spec.h, 2.0 * ebar);
    if -worst > n1 {
        return Err(Error::Infeasible(format!("-h reaches {} > n1 = {n1} on |y| <= 2 mean(e)", -worst)));
    }
    let (p, q, e) = (spec.p.sample(n)?, spec.q.sample(n)?, spec.e.sample(n)?);
    // grid-consistent means so that β'(1) = β'(0) to rounding
    let mean = |g: &GridFunction| -> Result<f64> { Ok(cumulative_integral(g.values())?[n]) };
    let (pg, qg, eg) = (mean(&p)?, mean(&q)?, mean(&e)?);
    if pg <= 0.0 {
        return Err(Error::Infeasible(format!("mean of p is {pg}, need > 0")));
    }
    let n2 = (eg - qg * n1) / pg;
    let k: Vec<f64> = (0..=n)
        .map(|i| n1 * q.values()[i] + n2 * p.values()[i] - e.values()[i])
        .collect();
    let (v, s, _) = weighted_integrals(&k)?;
    let bound = 2.0 * eg;
    if let Some(i) = s.iter().position(|d| d.abs() > bound * (1.0 + 1e-12)) {
        return Err(Error::Infeasible(format!(
            "|beta'| = {} exceeds 2 mean(e) = {bound} at t = {}",
            s[i].abs(),
            i as f64 / n as f64
        )));
    }
    let values = v.iter().map(|v| m + v).collect();
    let second = k.iter().map(|k| -k).collect();
    Ok((GridFunction::new(values)?.with_derivative(s)?, second))
}

/// `f = f₁ + f₂` with `f₁ = -q h(y)` and `f₂ = p g(max{x, c}) - e`.
pub fn duffing_to_standard(spec: &DuffingSpec) -> ProblemDef {
    let (p, q, e) = (spec.p.func(), spec.q.func(), spec.e.func());
    let (g, h, c) = (spec.g.clone(), spec.h.clone(), spec.c);
    let f1: Rhs = {
        let (q, h) = (q.clone(), h.clone());
        Arc::new(move |t, _, y| -q(t) * h.eval(y))
    };
    let f2: Rhs = {
        let (p, e, g) = (p.clone(), e.clone(), g.clone());
        Arc::new(move |t, x: f64, _| p(t) * g.eval(x.max(c)) - e(t))
    };
    let (a1, a2) = (f1.clone(), f2.clone());
    let (pq, qq) = (p.clone(), q.clone());
    ProblemDef::new("duffing", move |t, x, y| a1(t, x, y) + a2(t, x, y))
        .with_partials(
            move |t, x: f64, _| if x >= c { pq(t) * g.deriv(x) } else { 0.0 },
            move |t, _, y| -qq(t) * h.deriv(y),
        )
        .with_floor(c)
        .with_split(f1, f2)
}
