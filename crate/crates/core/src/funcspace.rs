//! Uniform-grid representation of C¹ functions on [0,1].
//!
//! A [`GridFunction`] stores samples at `t_i = i/n`, `i = 0..=n`, optionally
//! with derivative samples. Differentiation is fourth order (central in the
//! interior, one-sided at the ends, or a wrap-around compact scheme when
//! tagged periodic) and
//! quadrature is composite Simpson, so both components share an `O(n⁻⁴)`
//! error model.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const MIN_INTERVALS: usize = 16;
pub const DEFAULT_INTERVALS: usize = 256;

/// Relative tolerance for the endpoint equalities of periodic data.
const PERIODIC_RTOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    n: usize,
    values: Vec<f64>,
    derivative: Option<Vec<f64>>,
    periodic: bool,
}

fn check_intervals(n: usize) -> Result<()> {
    if n < MIN_INTERVALS {
        return Err(Error::Grid(format!("need at least {MIN_INTERVALS} intervals, got {n}")));
    }
    if !n.is_multiple_of(2) {
        return Err(Error::Grid(format!("interval count must be even, got {n}")));
    }
    Ok(())
}

fn check_finite(v: &[f64], what: &str) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::Grid(format!("{what} not finite at node {i}"))),
        None => Ok(()),
    }
}

impl GridFunction {
    /// Wraps `n + 1` node values; `n` must be even and at least 16.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let n = values.len().saturating_sub(1);
        check_intervals(n)?;
        check_finite(&values, "values")?;
        Ok(GridFunction {
            n,
            values,
            derivative: None,
            periodic: false,
        })
    }

    pub fn constant(n: usize, c: f64) -> Result<Self> {
        Self::new(vec![c; n + 1])?.with_derivative(vec![0.0; n + 1])
    }

    /// Samples `f` at the grid nodes; a non-finite value is reported with its `t`.
    pub fn sample(n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::try_sample(n, |t| {
            let v = f(t);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Evaluation { t, x: None, y: None })
            }
        })
    }

    pub fn try_sample(n: usize, f: impl Fn(f64) -> Result<f64>) -> Result<Self> {
        check_intervals(n)?;
        let values = (0..=n).map(|i| f(node(i, n))).collect::<Result<Vec<_>>>()?;
        Self::new(values)
    }

    /// Samples a function together with its analytic derivative.
    pub fn sample_with_derivative(
        n: usize,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        let g = Self::sample(n, f)?;
        let d = Self::sample(n, df)?;
        g.with_derivative(d.values)
    }

    pub fn with_derivative(mut self, derivative: Vec<f64>) -> Result<Self> {
        if derivative.len() != self.n + 1 {
            return Err(Error::Grid(format!(
                "derivative has {} samples, expected {}",
                derivative.len(),
                self.n + 1
            )));
        }
        check_finite(&derivative, "derivative")?;
        self.derivative = Some(derivative);
        if self.periodic {
            self.check_periodic()?;
        }
        Ok(self)
    }

    /// Tags the function as periodic after checking the endpoint equalities.
    pub fn into_periodic(mut self) -> Result<Self> {
        self.check_periodic()?;
        self.periodic = true;
        Ok(self)
    }

    pub fn untagged(mut self) -> Self {
        self.periodic = false;
        self
    }

    pub fn periodic_atol(&self) -> f64 {
        PERIODIC_RTOL * (1.0 + self.max_abs())
    }

    fn check_periodic(&self) -> Result<()> {
        let atol = self.periodic_atol();
        let dv = (self.values[0] - self.values[self.n]).abs();
        if dv > atol {
            return Err(Error::Grid(format!("|x(1) - x(0)| = {dv:e} exceeds {atol:e}")));
        }
        if let Some(d) = &self.derivative {
            let dd = (d[0] - d[self.n]).abs();
            if dd > atol {
                return Err(Error::Grid(format!("|x'(1) - x'(0)| = {dd:e} exceeds {atol:e}")));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn t(&self, i: usize) -> f64 {
        node(i, self.n)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn derivative(&self) -> Option<&[f64]> {
        self.derivative.as_deref()
    }

    pub fn derivative_or_err(&self) -> Result<&[f64]> {
        self.derivative()
            .ok_or_else(|| Error::Grid("derivative values required".into()))
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Sup-norm distance between the node values of two functions on the same grid.
    pub fn sup_distance(&self, other: &GridFunction) -> Result<f64> {
        self.same_grid(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    pub fn same_grid(&self, other: &GridFunction) -> Result<()> {
        if self.n != other.n {
            return Err(Error::Grid(format!("grid mismatch: {} vs {}", self.n, other.n)));
        }
        Ok(())
    }

    /// `t ↦ f(1 - t)`; the derivative changes sign.
    pub fn reversed(&self) -> GridFunction {
        let values = self.values.iter().rev().copied().collect();
        let derivative = self
            .derivative
            .as_ref()
            .map(|d| d.iter().rev().map(|v| -v).collect());
        GridFunction {
            n: self.n,
            values,
            derivative,
            periodic: self.periodic,
        }
    }

    /// Values taken on the coarser grid `n / stride`.
    pub fn restrict(&self, stride: usize) -> Result<GridFunction> {
        if stride == 0 || !self.n.is_multiple_of(stride) {
            return Err(Error::Grid(format!("stride {stride} does not divide {}", self.n)));
        }
        let pick = |v: &Vec<f64>| v.iter().step_by(stride).copied().collect::<Vec<_>>();
        let mut g = GridFunction::new(pick(&self.values))?;
        if let Some(d) = &self.derivative {
            g = g.with_derivative(pick(d))?;
        }
        g.periodic = self.periodic;
        Ok(g)
    }

    /// Fourth-order derivative of the node values.
    pub fn differentiate(&self) -> Result<GridFunction> {
        check_intervals(self.n)?;
        let d = differentiate_values(&self.values, self.periodic);
        let mut g = GridFunction::new(d)?;
        g.periodic = self.periodic;
        Ok(g)
    }

    /// Composite Simpson quadrature over [0,1].
    pub fn integrate(&self) -> f64 {
        simpson(&self.values).expect("GridFunction always has an even interval count")
    }

    /// Cubic Hermite interpolation when derivative samples exist, otherwise
    /// cubic Lagrange through the four nearest nodes. Nodes return their
    /// stored values exactly.
    pub fn interp(&self, t: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Domain(format!("interpolation point {t} outside [0,1]")));
        }
        let n = self.n;
        let s = t * n as f64;
        let k = s.round();
        if (k / n as f64 - t).abs() <= 1e-15 {
            return Ok(self.values[k as usize]);
        }
        let j = (s.floor() as usize).min(n - 1);
        match &self.derivative {
            Some(d) => {
                let u = s - j as f64;
                let h = self.h();
                let (u2, u3) = (u * u, u * u * u);
                let h00 = 2.0 * u3 - 3.0 * u2 + 1.0;
                let h10 = u3 - 2.0 * u2 + u;
                let h01 = -2.0 * u3 + 3.0 * u2;
                let h11 = u3 - u2;
                Ok(h00 * self.values[j]
                    + h10 * h * d[j]
                    + h01 * self.values[j + 1]
                    + h11 * h * d[j + 1])
            }
            None => {
                let start = cell_stencil_start(j, n);
                let u = s - start as f64;
                let mut acc = 0.0;
                for i in 0..4 {
                    let mut w = 1.0;
                    for k in 0..4 {
                        if k != i {
                            w *= (u - k as f64) / (i as f64 - k as f64);
                        }
                    }
                    acc += w * self.values[start + i];
                }
                Ok(acc)
            }
        }
    }

    /// Pointwise `alpha·self + beta·other`, derivatives combined when both exist.
    pub fn axpby(&self, alpha: f64, other: &GridFunction, beta: f64) -> Result<GridFunction> {
        self.same_grid(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| alpha * a + beta * b)
            .collect();
        let mut g = GridFunction::new(values)?;
        if let (Some(da), Some(db)) = (&self.derivative, &other.derivative) {
            g = g.with_derivative(da.iter().zip(db).map(|(a, b)| alpha * a + beta * b).collect())?;
        }
        Ok(g)
    }

    /// Writes `t,value[,derivative]` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        match &self.derivative {
            Some(_) => out.write_record(["t", "value", "derivative"])?,
            None => out.write_record(["t", "value"])?,
        }
        for i in 0..=self.n {
            let mut row = vec![fmt17(self.t(i)), fmt17(self.values[i])];
            if let Some(d) = &self.derivative {
                row.push(fmt17(d[i]));
            }
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads the format produced by [`GridFunction::write_csv`]; node times
    /// must match the uniform grid.
    pub fn read_csv<R: Read>(r: R) -> Result<GridFunction> {
        let mut rdr = csv::Reader::from_reader(r);
        let has_derivative = rdr.headers()?.len() >= 3;
        let (mut ts, mut vs, mut ds) = (Vec::new(), Vec::new(), Vec::new());
        for rec in rdr.records() {
            let rec = rec?;
            let field = |k: usize| -> Result<f64> {
                rec.get(k)
                    .ok_or_else(|| Error::Grid(format!("missing column {k}")))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Grid(format!("bad number in column {k}: {e}")))
            };
            ts.push(field(0)?);
            vs.push(field(1)?);
            if has_derivative {
                ds.push(field(2)?);
            }
        }
        let mut g = GridFunction::new(vs)?;
        for (i, t) in ts.iter().enumerate() {
            if (t - g.t(i)).abs() > 1e-12 {
                return Err(Error::Grid(format!("row {i}: t = {t} is not the grid node {}", g.t(i))));
            }
        }
        if has_derivative {
            g = g.with_derivative(ds)?;
        }
        Ok(g)
    }
}

/// Formats a float with 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn node(i: usize, n: usize) -> f64 {
    i as f64 / n as f64
}

/// First node of the four-node stencil used for cell `[t_j, t_{j+1}]`.
pub(crate) fn cell_stencil_start(j: usize, n: usize) -> usize {
    if j == 0 {
        0
    } else if j + 1 >= n {
        n - 3
    } else {
        j - 1
    }
}

/// Monomial coefficients (ascending powers) of the four Lagrange basis
/// polynomials through `nodes`.
pub(crate) fn lagrange_coeffs(nodes: [f64; 4]) -> [[f64; 4]; 4] {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        let mut poly = [1.0, 0.0, 0.0, 0.0];
        let mut denom = 1.0;
        let mut deg = 0;
        for k in 0..4 {
            if k == i {
                continue;
            }
            // poly *= (v - nodes[k])
            let mut next = [0.0; 4];
            for p in 0..=deg {
                next[p + 1] += poly[p];
                next[p] -= nodes[k] * poly[p];
            }
            poly = next;
            deg += 1;
            denom *= nodes[i] - nodes[k];
        }
        for p in 0..4 {
            out[i][p] = poly[p] / denom;
        }
    }
    out
}

/// Fourth-order first derivative of node samples on [0,1]: explicit
/// five-point stencils, or the compact scheme when `periodic`.
pub fn differentiate_values(v: &[f64], periodic: bool) -> Vec<f64> {
    let n = v.len() - 1;
    let inv = n as f64 / 12.0;
    let mut d = vec![0.0; n + 1];
    if periodic {
        return compact_periodic(v);
    }
    d[0] = (-25.0 * v[0] + 48.0 * v[1] - 36.0 * v[2] + 16.0 * v[3] - 3.0 * v[4]) * inv;
    d[1] = (-3.0 * v[0] - 10.0 * v[1] + 18.0 * v[2] - 6.0 * v[3] + v[4]) * inv;
    for i in 2..n - 1 {
        d[i] = (v[i - 2] - 8.0 * v[i - 1] + 8.0 * v[i + 1] - v[i + 2]) * inv;
    }
    d[n - 1] = (-v[n - 4] + 6.0 * v[n - 3] - 18.0 * v[n - 2] + 10.0 * v[n - 1] + 3.0 * v[n]) * inv;
    d[n] = (3.0 * v[n - 4] - 16.0 * v[n - 3] + 36.0 * v[n - 2] - 48.0 * v[n - 1] + 25.0 * v[n]) * inv;
    d
}

/// Fourth-order compact central scheme on periodic data:
/// `d_{i-1}/4 + d_i + d_{i+1}/4 = 3(v_{i+1} - v_{i-1})/(4h)`, solved as a
/// cyclic tridiagonal system.
fn compact_periodic(v: &[f64]) -> Vec<f64> {
    let n = v.len() - 1;
    let scale = 0.75 * n as f64;
    let rhs: Vec<f64> = (0..n)
        .map(|i| (v[(i + 1) % n] - v[(i + n - 1) % n]) * scale)
        .collect();
    let mut d = cyclic_tridiagonal(0.25, 1.0, 0.25, &rhs);
    d.push(d[0]);
    d
}

/// Solves the constant-coefficient cyclic tridiagonal system with
/// sub-diagonal `a`, diagonal `b`, super-diagonal `c` (Sherman–Morrison).
fn cyclic_tridiagonal(a: f64, b: f64, c: f64, r: &[f64]) -> Vec<f64> {
    let n = r.len();
    let gamma = -b;
    let mut diag = vec![b; n];
    diag[0] = b - gamma;
    diag[n - 1] = b - a * c / gamma;
    let solve = |rhs: &[f64]| -> Vec<f64> {
        let mut cp = vec![0.0; n];
        let mut x = vec![0.0; n];
        cp[0] = c / diag[0];
        x[0] = rhs[0] / diag[0];
        for i in 1..n {
            let m = diag[i] - a * cp[i - 1];
            cp[i] = c / m;
            x[i] = (rhs[i] - a * x[i - 1]) / m;
        }
        for i in (0..n - 1).rev() {
            x[i] -= cp[i] * x[i + 1];
        }
        x
    };
    let x = solve(r);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = a;
    let z = solve(&u);
    let fact = (x[0] + c * x[n - 1] / gamma) / (1.0 + z[0] + c * z[n - 1] / gamma);
    x.iter().zip(&z).map(|(xi, zi)| xi - fact * zi).collect()
}

/// Composite Simpson rule for samples on a uniform grid over [0,1].
pub fn simpson(v: &[f64]) -> Result<f64> {
    let n = v.len().saturating_sub(1);
    if n == 0 || !n.is_multiple_of(2) {
        return Err(Error::Grid(format!("Simpson needs an even interval count, got {n}")));
    }
    let h = 1.0 / n as f64;
    let mut acc = v[0] + v[n];
    for (i, x) in v.iter().enumerate().take(n).skip(1) {
        acc += if i % 2 == 1 { 4.0 * x } else { 2.0 * x };
    }
    Ok(acc * h / 3.0)
}

/// `∫_0^{t_k}` of the piecewise-cubic interpolant, for every node `k`.
pub fn cumulative_integral(v: &[f64]) -> Result<Vec<f64>> {
    let n = v.len().saturating_sub(1);
    check_intervals(n)?;
    let h = 1.0 / n as f64;
    let mut out = vec![0.0; n + 1];
    for j in 0..n {
        let start = cell_stencil_start(j, n);
        let off = start as f64 - j as f64;
        let coeffs = lagrange_coeffs([off, off + 1.0, off + 2.0, off + 3.0]);
        let mut cell = 0.0;
        for (i, c) in coeffs.iter().enumerate() {
            let w: f64 = c.iter().enumerate().map(|(p, cp)| cp / (p as f64 + 1.0)).sum();
            cell += w * v[start + i];
        }
        out[j + 1] = out[j] + h * cell;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{E, PI};

    #[test]
    fn rejects_small_or_odd_grids() {
        assert!(GridFunction::new(vec![0.0; 9]).is_err());
        assert!(GridFunction::new(vec![0.0; 18]).is_err());
        assert!(GridFunction::new(vec![0.0; 17]).is_ok());
    }

    #[test]
    fn constant_has_zero_derivative() {
        let g = GridFunction::sample(32, |_| 3.5).unwrap();
        let d = g.differentiate().unwrap();
        assert!(d.values().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn periodic_sine_derivative() {
        let g = GridFunction::sample(64, |t| (2.0 * PI * t).sin())
            .unwrap()
            .into_periodic()
            .unwrap();
        let d = g.differentiate().unwrap();
        let err = (0..=64)
            .map(|i| (d.values()[i] - 2.0 * PI * (2.0 * PI * g.t(i)).cos()).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-5, "err = {err}");
    }

    #[test]
    fn quadratic_derivative_is_exact() {
        let g = GridFunction::sample(32, |t| t * t).unwrap();
        let d = g.differentiate().unwrap();
        for i in 0..=32 {
            assert!((d.values()[i] - 2.0 * g.t(i)).abs() <= 1e-8);
        }
    }

    #[test]
    fn simpson_values() {
        let one = GridFunction::sample(16, |_| 1.0).unwrap();
        assert!((one.integrate() - 1.0).abs() < 1e-14);
        let s = GridFunction::sample(64, |t| (2.0 * PI * t).sin()).unwrap();
        assert!(s.integrate().abs() < 1e-10);
        let ex = GridFunction::sample(64, f64::exp).unwrap();
        assert!((ex.integrate() - (E - 1.0)).abs() < 1e-9);
    }

    #[test]
    fn simpson_order_is_four() {
        let f = |t: f64| (2.0 * PI * t).sin().exp();
        let fine = GridFunction::sample(4096, f).unwrap().integrate();
        let e1 = (GridFunction::sample(16, f).unwrap().integrate() - fine).abs();
        let e2 = (GridFunction::sample(32, f).unwrap().integrate() - fine).abs();
        // exp(sin) is periodic and Simpson converges spectrally on it; check a
        // non-periodic integrand for the algebraic order instead.
        assert!(e2 <= e1);
        let g = |t: f64| (3.0 * t).sin().exp();
        let exact = GridFunction::sample(8192, g).unwrap().integrate();
        let r = (GridFunction::sample(32, g).unwrap().integrate() - exact).abs()
            / (GridFunction::sample(64, g).unwrap().integrate() - exact).abs();
        assert!((12.0..=20.0).contains(&r), "ratio {r}");
    }

    #[test]
    fn sample_reports_failing_t() {
        let err = GridFunction::sample(16, |t| if t == 0.5 { f64::NAN } else { t }).unwrap_err();
        match err {
            Error::Evaluation { t, .. } => assert_eq!(t, 0.5),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn sample_identity() {
        let g = GridFunction::sample(16, |t| t).unwrap();
        for i in 0..=16 {
            assert_eq!(g.values()[i], i as f64 / 16.0);
        }
    }

    #[test]
    fn interp_reproduces_nodes_and_cubics() {
        let g = GridFunction::sample(16, |t| t * t * t).unwrap();
        for i in 0..=16 {
            assert_eq!(g.interp(g.t(i)).unwrap(), g.values()[i]);
        }
        let v = g.interp(1.0 / 3.0).unwrap();
        assert!((v - 1.0 / 27.0).abs() < 1e-12);
        let gh = GridFunction::sample_with_derivative(16, |t| t * t * t, |t| 3.0 * t * t).unwrap();
        assert!((gh.interp(1.0 / 3.0).unwrap() - 1.0 / 27.0).abs() < 1e-12);
        assert!(g.interp(1.5).is_err());
    }

    #[test]
    fn interp_sine() {
        let g = GridFunction::sample(64, |t| (2.0 * PI * t).sin()).unwrap();
        let v = g.interp(0.123).unwrap();
        assert!((v - (2.0 * PI * 0.123).sin()).abs() <= 1e-6);
    }

    #[test]
    fn integral_of_derivative() {
        let f = |t: f64| (t * 2.0).cos() + t.powi(3);
        let g = GridFunction::sample(64, f).unwrap();
        let int = g.differentiate().unwrap().integrate();
        assert!((int - (f(1.0) - f(0.0))).abs() < 1e-6);
    }

    #[test]
    fn cumulative_matches_antiderivative() {
        let g = GridFunction::sample(64, |t| (3.0 * t).cos()).unwrap();
        let c = cumulative_integral(g.values()).unwrap();
        for (i, ci) in c.iter().enumerate() {
            let t = g.t(i);
            let err = (ci - (3.0 * t).sin() / 3.0).abs();
            assert!(err < 5e-8, "{i}: {err}");
        }
    }

    #[test]
    fn csv_round_trip() {
        let g = GridFunction::sample_with_derivative(16, |t| t.exp(), |t| t.exp()).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,value,derivative\n"));
        let back = GridFunction::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.values(), g.values());
        assert_eq!(back.derivative(), g.derivative());
    }

    #[test]
    fn periodic_tag_validates_endpoints() {
        let g = GridFunction::sample(16, |t| t).unwrap();
        assert!(g.into_periodic().is_err());
    }
}
