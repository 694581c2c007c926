//! Built-in problem families: the forced pendulum with curvature operator,
//! singular nonlinearities `x'' + p x^{-λ} = e`, and the Duffing-type
//! `x'' + p g(x) - q h(x') = e`, plus custom problems from expressions.

mod expr;
mod families;
mod file;

use std::fmt;
use std::sync::Arc;

pub use expr::{Expr, Var};
pub use families::{
    build_beta_example1, build_beta_example3, choose_m_example1, default_n1, duffing_to_standard,
    pendulum_to_standard, singular_to_standard, DuffingSpec, DuffingVariant, PendulumSpec,
    SingularSpec,
};
pub use file::{load_problem, parse_problem, ProblemFile};

use crate::conditions::Bracket;
use crate::error::{Error, Result};
use crate::funcspace::{simpson, GridFunction};
use crate::operator::ProblemDef;

type Fn1 = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type Fn2 = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Intervals of the grid on which coefficient statistics are taken.
const STATS_INTERVALS: usize = 2048;

/// A continuous periodic coefficient `t ↦ c(t)` on `[0,1]`.
#[derive(Clone)]
pub struct Coefficient {
    label: String,
    f: Fn1,
    constant: Option<f64>,
    mean: f64,
    min: f64,
    max: f64,
}

impl fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}

impl Coefficient {
    pub fn constant(c: f64) -> Result<Self> {
        if !c.is_finite() {
            return Err(Error::Domain(format!("coefficient {c} is not finite")));
        }
        Ok(Coefficient {
            label: c.to_string(),
            f: Arc::new(move |_| c),
            constant: Some(c),
            mean: c,
            min: c,
            max: c,
        })
    }

    /// Parses an expression in `t`.
    pub fn expr(src: &str) -> Result<Self> {
        let e = Expr::parse(src, &[Var::T])?;
        if let Some(c) = e.as_constant() {
            return Self::constant(c);
        }
        Self::from_fn(src, move |t| e.eval(t, 0.0, 0.0))
    }

    /// Interpolates grid samples.
    pub fn samples(g: GridFunction) -> Result<Self> {
        let mean = g.integrate();
        let (min, max) = (g.min_value(), g.max_value());
        let label = format!("samples[{}]", g.n() + 1);
        let mut c = Self::from_fn(&label, move |t| g.interp(t.clamp(0.0, 1.0)).unwrap_or(f64::NAN))?;
        // the interpolant can overshoot the node extrema slightly; keep the wider range
        c.mean = mean;
        c.min = c.min.min(min);
        c.max = c.max.max(max);
        Ok(c)
    }

    pub fn from_fn(label: &str, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Result<Self> {
        let vals: Vec<f64> = (0..=STATS_INTERVALS)
            .map(|i| f(i as f64 / STATS_INTERVALS as f64))
            .collect();
        if let Some(i) = vals.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "coefficient '{label}' is not finite at t = {}",
                i as f64 / STATS_INTERVALS as f64
            )));
        }
        Ok(Coefficient {
            label: label.to_string(),
            mean: simpson(&vals)?,
            min: vals.iter().copied().fold(f64::INFINITY, f64::min),
            max: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            f: Arc::new(f),
            constant: None,
        })
    }

    pub fn eval(&self, t: f64) -> f64 {
        (self.f)(t)
    }

    pub fn as_constant(&self) -> Option<f64> {
        self.constant
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn min(&self) -> f64 {
        self.min
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn sample(&self, n: usize) -> Result<GridFunction> {
        GridFunction::sample(n, |t| self.eval(t))
    }

    pub(crate) fn func(&self) -> Fn1 {
        Arc::clone(&self.f)
    }
}

/// A scalar function of one variable with an optional exact derivative.
#[derive(Clone)]
pub struct Curve {
    label: String,
    f: Fn1,
    df: Option<Fn1>,
}

impl fmt::Debug for Curve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}

impl Curve {
    pub fn new(label: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Curve {
            label: label.into(),
            f: Arc::new(f),
            df: None,
        }
    }

    pub fn with_derivative(mut self, df: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.df = Some(Arc::new(df));
        self
    }

    /// `g(x) = x^{-λ}`
    pub fn power(lambda: f64) -> Self {
        Curve::new(format!("x^-{lambda}"), move |x: f64| x.powf(-lambda))
            .with_derivative(move |x: f64| -lambda * x.powf(-lambda - 1.0))
    }

    /// `h(y) = |y|^{λ₁}` for `y < 0`, `y^{λ₂}` for `y ≥ 0`.
    pub fn two_branch(l1: f64, l2: f64) -> Self {
        Curve::new(format!("two_branch({l1}, {l2})"), move |y: f64| {
            if y < 0.0 {
                (-y).powf(l1)
            } else {
                y.powf(l2)
            }
        })
        .with_derivative(move |y: f64| {
            if y < 0.0 {
                -l1 * (-y).powf(l1 - 1.0)
            } else if y > 0.0 {
                l2 * y.powf(l2 - 1.0)
            } else {
                0.0
            }
        })
    }

    /// `h(y) = μ y^{2k+1} - ν y`
    pub fn odd_power(mu: f64, nu: f64, k: u32) -> Self {
        let p = 2 * k as i32 + 1;
        Curve::new(format!("{mu}*y^{p} - {nu}*y"), move |y: f64| mu * y.powi(p) - nu * y)
            .with_derivative(move |y: f64| mu * p as f64 * y.powi(p - 1) - nu)
    }

    /// Parses an expression in `var`.
    pub fn expr(src: &str, var: Var) -> Result<Self> {
        let e = Expr::parse(src, &[var])?;
        Ok(match var {
            Var::X => Curve::new(src, move |x| e.eval(0.0, x, 0.0)),
            Var::Y => Curve::new(src, move |y| e.eval(0.0, 0.0, y)),
            Var::T => Curve::new(src, move |t| e.eval(t, 0.0, 0.0)),
        })
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    pub fn deriv(&self, x: f64) -> f64 {
        match &self.df {
            Some(df) => df(x),
            None => {
                let h = 1e-6 * (1.0 + x.abs());
                ((self.f)(x + h) - (self.f)(x - h)) / (2.0 * h)
            }
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

/// A function of `(t, x)`, used for the damping coefficient of the pendulum.
#[derive(Clone)]
pub struct Field {
    label: String,
    f: Fn2,
    constant: Option<f64>,
}

impl fmt::Debug for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}

impl Field {
    pub fn constant(c: f64) -> Self {
        Field {
            label: c.to_string(),
            f: Arc::new(move |_, _| c),
            constant: Some(c),
        }
    }

    pub fn new(label: impl Into<String>, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Field {
            label: label.into(),
            f: Arc::new(f),
            constant: None,
        }
    }

    /// Parses an expression in `t` and `x`.
    pub fn expr(src: &str) -> Result<Self> {
        let e = Expr::parse(src, &[Var::T, Var::X])?;
        if let Some(c) = e.as_constant() {
            return Ok(Field::constant(c));
        }
        Ok(Field::new(src, move |t, x| e.eval(t, x, 0.0)))
    }

    pub fn eval(&self, t: f64, x: f64) -> f64 {
        (self.f)(t, x)
    }

    pub fn dx(&self, t: f64, x: f64) -> f64 {
        if self.constant.is_some() {
            return 0.0;
        }
        let h = 1e-6 * (1.0 + x.abs());
        ((self.f)(t, x + h) - (self.f)(t, x - h)) / (2.0 * h)
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

/// Problem family of an [`Instance`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Pendulum,
    Singular,
    Duffing,
    Custom,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Pendulum => "pendulum",
            Family::Singular => "singular",
            Family::Duffing => "duffing",
            Family::Custom => "custom",
        })
    }
}

/// Which set of hypotheses certifies an instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    /// (E0) and sampled (E1).
    Envelope,
    /// (E0) and sampled (E1′).
    EnvelopeDifference,
    /// (E2), the split growth condition and (E3) or (E3′).
    Growth,
}

pub type BracketBuilder = Arc<dyn Fn(usize) -> Result<Bracket> + Send + Sync>;

/// A fully specified problem: right side, bracket constructor, the shift
/// prescribed for it, and a starting point for the shooting cross-check.
#[derive(Clone)]
pub struct Instance {
    pub label: String,
    pub family: Family,
    pub prob: ProblemDef,
    pub bracket: Option<BracketBuilder>,
    pub shift: Option<(f64, f64)>,
    pub delta: f64,
    pub delta_cap: f64,
    pub route: Route,
    /// `c(t)` of the growth condition.
    pub growth_c: Option<Coefficient>,
    /// Initial `(x(0), x'(0))` for shooting.
    pub guess: (f64, f64),
    /// Admissible `max |x'|` of a solution, when the family restricts it.
    pub slope_bound: Option<f64>,
    /// Known exact solution value, for constant-solution instances.
    pub exact: Option<f64>,
}

impl fmt::Debug for Instance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Instance")
            .field("label", &self.label)
            .field("family", &self.family)
            .field("shift", &self.shift)
            .field("route", &self.route)
            .field("guess", &self.guess)
            .finish()
    }
}

impl Instance {
    pub fn bracket(&self, n: usize) -> Result<Option<Bracket>> {
        self.bracket.as_ref().map(|b| b(n)).transpose()
    }
}

/// The built-in instances used by the gallery.
pub fn gallery() -> Result<Vec<Instance>> {
    let one = Coefficient::constant(1.0)?;
    let singular_constant = SingularSpec::new(one.clone(), one.clone(), 1.0)?;
    let lazer = SingularSpec::new(one.clone(), Coefficient::expr("1 + 0.5*sin(2*pi*t)")?, 1.0)?;
    let pendulum = PendulumSpec::new(
        Coefficient::constant(2.0)?,
        Field::constant(4.0),
        one.clone(),
        0.5,
        None,
    )?;
    let duffing = DuffingSpec::new(
        one.clone(),
        one.clone(),
        Coefficient::expr("1 + 0.5*sin(2*pi*t)")?,
        Curve::power(1.0),
        Curve::odd_power(0.1, 0.4, 1),
        DuffingVariant::Example3,
        2.0 / 3.0,
    )?;
    let mut out = vec![
        singular_constant.instance("singular_constant")?,
        lazer.instance("lazer_solimini")?,
        pendulum.instance("pendulum")?,
        duffing.instance("duffing_example3")?,
    ];
    out[0].exact = Some(1.0);
    Ok(out)
}
