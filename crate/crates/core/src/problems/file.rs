//! JSON problem files.
//!
//! ```json
//! {
//!   "family": "singular",
//!   "coefficients": { "p": 1, "e": "1 + 0.5*sin(2*pi*t)" },
//!   "lambda": 1
//! }
//! ```
//!
//! A coefficient is a number, an expression in `t`, or an array of `n + 1`
//! samples on the uniform grid. `g` and `h` of the Duffing family are named
//! presets (`{"preset": "power", "lambda": 1}`,
//! `{"preset": "two_branch", "lambda1": 1.5, "lambda2": 2}`,
//! `{"preset": "odd_power", "mu": 0.1, "nu": 0.4, "k": 1}`) or
//! `{"expr": "..."}`. The custom family takes `f` as an expression in
//! `t, x, y` and optional constant or expression curves `alpha`, `beta`.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;

use super::{
    Coefficient, Curve, DuffingSpec, DuffingVariant, Expr, Family, Field, Instance, PendulumSpec,
    Route, SingularSpec, Var,
};
use crate::conditions::Bracket;
use crate::error::{Error, Result};
use crate::funcspace::GridFunction;
use crate::operator::ProblemDef;

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum CoefValue {
    Number(f64),
    Expr(String),
    Samples(Vec<f64>),
}

impl CoefValue {
    fn coefficient(&self) -> Result<Coefficient> {
        match self {
            CoefValue::Number(c) => Coefficient::constant(*c),
            CoefValue::Expr(s) => Coefficient::expr(s),
            CoefValue::Samples(v) => Coefficient::samples(GridFunction::new(v.clone())?),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum CurvePreset {
    Power { lambda: f64 },
    TwoBranch { lambda1: f64, lambda2: f64 },
    OddPower { mu: f64, nu: f64, k: u32 },
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum CurveSpec {
    Preset(CurvePreset),
    Expr { expr: String },
}

impl CurveSpec {
    fn curve(&self, var: Var) -> Result<Curve> {
        Ok(match self {
            CurveSpec::Preset(CurvePreset::Power { lambda }) => Curve::power(*lambda),
            CurveSpec::Preset(CurvePreset::TwoBranch { lambda1, lambda2 }) => Curve::two_branch(*lambda1, *lambda2),
            CurveSpec::Preset(CurvePreset::OddPower { mu, nu, k }) => Curve::odd_power(*mu, *nu, *k),
            CurveSpec::Expr { expr } => Curve::expr(expr, var)?,
        })
    }
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftSpec {
    pub a: f64,
    pub b: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub family: Family,
    #[serde(default)]
    pub label: Option<String>,
    /// Default grid size for this problem.
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub coefficients: BTreeMap<String, CoefValue>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub r: Option<f64>,
    #[serde(default)]
    pub d: Option<f64>,
    #[serde(default, rename = "C")]
    pub big_c: Option<f64>,
    #[serde(default)]
    pub c: Option<f64>,
    #[serde(default)]
    pub n1: Option<f64>,
    #[serde(default)]
    pub m: Option<f64>,
    #[serde(default)]
    pub variant: Option<DuffingVariant>,
    #[serde(default)]
    pub g: Option<CurveSpec>,
    #[serde(default)]
    pub h: Option<CurveSpec>,
    #[serde(default)]
    pub f: Option<String>,
    #[serde(default)]
    pub alpha: Option<CoefValue>,
    #[serde(default)]
    pub beta: Option<CoefValue>,
    #[serde(default)]
    pub shift: Option<ShiftSpec>,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default, rename = "Delta")]
    pub delta_cap: Option<f64>,
    #[serde(default)]
    pub route: Option<Route>,
    #[serde(default)]
    pub guess: Option<[f64; 2]>,
}

pub fn parse_problem(text: &str) -> Result<ProblemFile> {
    Ok(serde_json::from_str(text)?)
}

pub fn load_problem(path: impl AsRef<Path>) -> Result<ProblemFile> {
    parse_problem(&std::fs::read_to_string(path)?)
}

fn required<T: Copy>(v: Option<T>, name: &str, family: Family) -> Result<T> {
    v.ok_or_else(|| Error::Domain(format!("{family} problems need '{name}'")))
}

impl ProblemFile {
    fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for k in self.coefficients.keys() {
            if !allowed.contains(&k.as_str()) {
                return Err(Error::Domain(format!(
                    "unknown coefficient '{k}' for {} problems (expected one of {})",
                    self.family,
                    allowed.join(", ")
                )));
            }
        }
        Ok(())
    }

    fn coef(&self, name: &str) -> Result<Coefficient> {
        self.coefficients
            .get(name)
            .ok_or_else(|| Error::Domain(format!("{} problems need coefficient '{name}'", self.family)))?
            .coefficient()
    }

    fn ell(&self) -> Result<Field> {
        match self.coefficients.get("ell") {
            Some(CoefValue::Number(c)) => Ok(Field::constant(*c)),
            Some(CoefValue::Expr(s)) => Field::expr(s),
            Some(CoefValue::Samples(_)) => Err(Error::Domain("'ell' must be a number or an expression in t, x".into())),
            None => Err(Error::Domain("pendulum problems need coefficient 'ell'".into())),
        }
    }

    /// Builds the instance described by the file.
    pub fn build(&self) -> Result<Instance> {
        let label = self.label.clone().unwrap_or_else(|| self.family.to_string());
        let mut inst = match self.family {
            Family::Pendulum => {
                self.check_keys(&["mu", "ell", "e"])?;
                let r = required(self.r, "r", self.family)?;
                PendulumSpec::new(self.coef("mu")?, self.ell()?, self.coef("e")?, r, self.d)?.instance(&label)?
            }
            Family::Singular => {
                self.check_keys(&["p", "e"])?;
                let lambda = required(self.lambda, "lambda", self.family)?;
                let (p, e) = (self.coef("p")?, self.coef("e")?);
                let spec = match self.big_c {
                    Some(c) => SingularSpec::with_big_c(p, e, lambda, c)?,
                    None => SingularSpec::new(p, e, lambda)?,
                };
                spec.instance(&label)?
            }
            Family::Duffing => {
                self.check_keys(&["p", "q", "e"])?;
                let g = self.g.as_ref().ok_or_else(|| Error::Domain("duffing problems need 'g'".into()))?;
                let h = self.h.as_ref().ok_or_else(|| Error::Domain("duffing problems need 'h'".into()))?;
                let mut spec = DuffingSpec::new(
                    self.coef("p")?,
                    self.coef("q")?,
                    self.coef("e")?,
                    g.curve(Var::X)?,
                    h.curve(Var::Y)?,
                    required(self.variant, "variant", self.family)?,
                    required(self.c, "c", self.family)?,
                )?;
                if let Some(n1) = self.n1 {
                    spec = spec.with_n1(n1);
                }
                if let Some(m) = self.m {
                    spec = spec.with_m(m);
                }
                spec.instance(&label)?
            }
            Family::Custom => self.custom(&label)?,
        };
        if let Some(s) = self.shift {
            inst.shift = Some((s.a, s.b));
        }
        if let Some(d) = self.delta {
            inst.delta = d;
        }
        if let Some(d) = self.delta_cap {
            inst.delta_cap = d;
        }
        if let Some(r) = self.route {
            inst.route = r;
        }
        if let Some([x0, v0]) = self.guess {
            inst.guess = (x0, v0);
        }
        Ok(inst)
    }

    fn custom(&self, label: &str) -> Result<Instance> {
        self.check_keys(&[])?;
        let src = self.f.as_deref().ok_or_else(|| Error::Domain("custom problems need 'f'".into()))?;
        let e = Expr::parse(src, &[Var::T, Var::X, Var::Y])?;
        let prob = ProblemDef::new(label, move |t, x, y| e.eval(t, x, y));
        let bracket = match (&self.alpha, &self.beta) {
            (Some(a), Some(b)) => {
                let (a, b) = (a.coefficient()?, b.coefficient()?);
                let mid = 0.5 * (a.eval(0.0) + b.eval(0.0));
                let build: super::BracketBuilder = Arc::new(move |n| {
                    Bracket::new(curve_on_grid(&a, n)?, curve_on_grid(&b, n)?, None, None)
                });
                Some((build, mid))
            }
            (None, None) => None,
            _ => return Err(Error::Domain("give both 'alpha' and 'beta', or neither".into())),
        };
        Ok(Instance {
            label: label.to_string(),
            family: Family::Custom,
            prob,
            guess: (bracket.as_ref().map_or(0.0, |b| b.1), 0.0),
            bracket: bracket.map(|b| b.0),
            shift: None,
            delta: 0.0,
            delta_cap: 0.0,
            route: Route::Envelope,
            growth_c: None,
            slope_bound: None,
            exact: None,
        })
    }
}

/// Constant curves keep exact zero derivatives.
fn curve_on_grid(c: &Coefficient, n: usize) -> Result<GridFunction> {
    match c.as_constant() {
        Some(v) => GridFunction::constant(n, v),
        None => c.sample(n),
    }
}
