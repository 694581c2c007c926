//! Local Lipschitz estimate (E2), one-sided quadratic growth (E3)/(E3′),
//! the constant `K̂`, and the asymptotic growth test on a split `f = f1 + f2`.

use serde::Serialize;

use super::{atol, Bracket, CheckRecord, MinTracker, Witness};
use crate::error::{Error, Result};
use crate::operator::{ProblemDef, Rhs};
use crate::par::Execution;

/// Tube points per side in x and y (odd, so the curve itself is sampled).
const TUBE_POINTS: usize = 9;
const KINK_RTOL: f64 = 1e-2;

#[derive(Clone, Debug, Serialize)]
pub struct E2Estimate {
    pub ell: f64,
    pub mu: f64,
    /// One-sided slopes disagree somewhere in the tube.
    pub nonsmooth: bool,
    pub record: CheckRecord,
}

/// Default tube radius: a tenth of the narrowest bracket gap, kept off the
/// declared domain floor. A degenerate bracket (`α = β`) falls back to a
/// size-relative radius.
pub fn default_mu(prob: &ProblemDef, bracket: &Bracket) -> f64 {
    let gap = bracket
        .beta
        .values()
        .iter()
        .zip(bracket.alpha.values())
        .map(|(b, a)| b - a)
        .fold(f64::INFINITY, f64::min);
    let mut mu = if gap > atol(bracket.scale()) {
        0.1 * gap
    } else {
        0.01 * (1.0 + bracket.scale())
    };
    if let Some(floor) = prob.domain_floor {
        let room = bracket.alpha.min_value() - floor;
        if room > 0.0 {
            mu = mu.min(0.5 * room);
        }
    }
    mu
}

fn one_sided(
    g: impl Fn(f64) -> Result<f64>,
    v: f64,
    f0: f64,
) -> Result<(f64, f64)> {
    let h = 1e-6 * (1.0 + v.abs());
    let fwd = (g(v + h)? - f0) / h;
    let bwd = (f0 - g(v - h)?) / h;
    Ok((fwd, bwd))
}

/// Estimates `ℓ = max (|∂f/∂x| + |∂f/∂y|)` over the tubes of radius `mu`
/// around `(t, α, α')` and `(t, β, β')`, and checks `r₁, r₂ ≥ 0`, `α ≤ β`.
/// Without supplied partials both one-sided differences are taken and the
/// larger magnitude kept, so kinks are bounded from above and flagged.
pub fn estimate_e2(
    prob: &ProblemDef,
    bracket: &Bracket,
    mu: f64,
    exec: Execution,
) -> Result<E2Estimate> {
    if !(mu > 0.0) {
        return Err(Error::Domain(format!("tube radius must be positive, got {mu}")));
    }
    let n = bracket.n();
    let curves = [
        (bracket.alpha.values(), bracket.alpha_prime()),
        (bracket.beta.values(), bracket.beta_prime()),
    ];
    let rows = exec.try_map(2 * (n + 1), |k| {
        let (vals, ders) = curves[k / (n + 1)];
        let i = k % (n + 1);
        let t = bracket.alpha.t(i);
        let mut ell: f64 = 0.0;
        let mut kink = false;
        for jx in 0..TUBE_POINTS {
            let x = vals[i] - mu + 2.0 * mu * jx as f64 / (TUBE_POINTS - 1) as f64;
            for jy in 0..TUBE_POINTS {
                let y = ders[i] - mu + 2.0 * mu * jy as f64 / (TUBE_POINTS - 1) as f64;
                let f0 = prob.eval(t, x, y).map_err(|e| tube_error(e, mu))?;
                let sx = match &prob.fx {
                    Some(_) => prob.dfdx(t, x, y)?.abs(),
                    None => {
                        let (fw, bw) = one_sided(|v| prob.eval(t, v, y), x, f0)
                            .map_err(|e| tube_error(e, mu))?;
                        kink |= (fw - bw).abs() > KINK_RTOL * (1.0 + fw.abs() + bw.abs());
                        fw.abs().max(bw.abs())
                    }
                };
                let sy = match &prob.fy {
                    Some(_) => prob.dfdy(t, x, y)?.abs(),
                    None => {
                        let (fw, bw) = one_sided(|v| prob.eval(t, x, v), y, f0)
                            .map_err(|e| tube_error(e, mu))?;
                        kink |= (fw - bw).abs() > KINK_RTOL * (1.0 + fw.abs() + bw.abs());
                        fw.abs().max(bw.abs())
                    }
                };
                ell = ell.max(sx + sy);
            }
        }
        Ok::<_, Error>((ell, kink))
    })?;
    let ell = rows.iter().fold(0.0f64, |m, r| m.max(r.0));
    let nonsmooth = rows.iter().any(|r| r.1);

    let mut tr = MinTracker::new();
    tr.push(bracket.r1, Witness::default);
    tr.push(bracket.r2, || Witness { t: 1.0, ..Default::default() });
    for i in 0..=n {
        let gap = bracket.beta.values()[i] - bracket.alpha.values()[i];
        tr.push(gap, || Witness {
            t: bracket.alpha.t(i),
            ..Default::default()
        });
    }
    let mut record = tr.record("E2", atol(bracket.scale()));
    if nonsmooth {
        record = record.with_note("nonsmooth f inside the tube; one-sided slopes used");
    }
    Ok(E2Estimate {
        ell,
        mu,
        nonsmooth,
        record,
    })
}

fn tube_error(e: Error, mu: f64) -> Error {
    match e {
        Error::Evaluation { t, x, y } => Error::Domain(format!(
            "f is not finite at t = {t}, x = {:?}, y = {:?} inside the tube of radius {mu}; shrink mu",
            x, y
        )),
        e => e,
    }
}

/// Sampling grid for (E3)/(E3′): node stride in t and point counts in x and z.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct E3Grid {
    pub nt: usize,
    pub nx: usize,
    pub nz: usize,
}

impl Default for E3Grid {
    fn default() -> Self {
        E3Grid {
            nt: 64,
            nx: 64,
            nz: 64,
        }
    }
}

impl E3Grid {
    /// Largest node stride giving at most `nt` sampled intervals.
    fn stride(&self, n: usize) -> usize {
        let mut s = (n / self.nt.max(1)).max(1);
        while !n.is_multiple_of(s) {
            s -= 1;
        }
        s
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct E3Report {
    pub record: CheckRecord,
    pub band: CheckRecord,
    /// `max_t c(t)(β - α)`
    pub c_attained: f64,
}

/// `10·(1 + max|α'| + max|β'| + L/(1 - c))`
pub fn default_z_max(bracket: &Bracket, big_l: f64, c: f64) -> f64 {
    let ma = bracket.alpha_prime().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mb = bracket.beta_prime().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let frac = if c < 1.0 { big_l / (1.0 - c) } else { big_l };
    10.0 * (1.0 + ma + mb + frac)
}

fn band_record(bracket: &Bracket, c_fun: &[f64]) -> (CheckRecord, f64) {
    let mut c_att = 0.0f64;
    let mut at = 0.0;
    for (i, c) in c_fun.iter().enumerate() {
        let v = c * (bracket.beta.values()[i] - bracket.alpha.values()[i]);
        if v > c_att {
            c_att = v;
            at = bracket.alpha.t(i);
        }
    }
    let neg = c_fun.iter().fold(0.0f64, |m, c| m.min(*c));
    let rec = CheckRecord::new(
        "E3 band",
        (1.0 - c_att).min(neg),
        1e-12,
        Witness {
            t: at,
            ..Default::default()
        },
    )
    .sampled();
    (rec, c_att)
}

/// Which one-sided bound to check.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Side {
    Forward,
    Reverse,
}

#[allow(clippy::too_many_arguments)]
fn e3_scan(
    name: &str,
    side: Side,
    prob: &ProblemDef,
    bracket: &Bracket,
    c_fun: &[f64],
    big_l: f64,
    big_k: f64,
    z_max: f64,
    grid: E3Grid,
    exec: Execution,
) -> Result<E3Report> {
    let n = bracket.n();
    if c_fun.len() != n + 1 {
        return Err(Error::Grid(format!("c has {} samples, expected {}", c_fun.len(), n + 1)));
    }
    if !(z_max > 0.0) {
        return Err(Error::Domain(format!("z_max must be positive, got {z_max}")));
    }
    let stride = grid.stride(n);
    let nodes: Vec<usize> = (0..=n).step_by(stride).collect();
    let (nx, nz) = (grid.nx.max(2), grid.nz.max(2));
    let (da, db) = (bracket.alpha_prime(), bracket.beta_prime());
    let parts = exec.try_map(nodes.len(), |k| {
        let i = nodes[k];
        let t = bracket.alpha.t(i);
        let (al, be) = (bracket.alpha.values()[i], bracket.beta.values()[i]);
        let mut tr = MinTracker::new();
        let mut scale: f64 = 0.0;
        for jx in 0..nx {
            let x = al + (be - al) * jx as f64 / (nx - 1) as f64;
            let fa = prob.eval(t, x, da[i])?;
            let fb = prob.eval(t, x, db[i])?;
            scale = scale.max(fa.abs()).max(fb.abs());
            for jz in 0..nz {
                let z = z_max * jz as f64 / (nz - 1) as f64;
                let poly = c_fun[i] * z * z + big_l * z + big_k;
                // both sides share the evaluation order poly + (f(p) - f(q)),
                // which keeps the time-reversed comparison exact
                let (s1, s2) = match side {
                    Side::Forward => (
                        poly + (prob.eval(t, x, da[i] - z)? - fa),
                        poly + (fb - prob.eval(t, x, db[i] + z)?),
                    ),
                    Side::Reverse => (
                        poly + (prob.eval(t, x, da[i] + z)? - fa),
                        poly + (fb - prob.eval(t, x, db[i] - z)?),
                    ),
                };
                tr.push(s1.min(s2), || Witness {
                    t,
                    x: Some(x),
                    z: Some(z),
                    ..Default::default()
                });
            }
        }
        Ok::<_, Error>((tr, scale))
    })?;
    let mut tr = MinTracker::new();
    let mut scale = bracket.scale();
    for (p, s) in parts {
        tr = tr.merge(p);
        scale = scale.max(s);
    }
    let record = tr.record(name, atol(scale)).sampled();
    let (band, c_attained) = band_record(bracket, c_fun);
    Ok(E3Report {
        record,
        band,
        c_attained,
    })
}

/// (E3): `f(t,x,α'-z) - f(t,x,α') ≥ -c(t)z² - Lz - K` and
/// `f(t,x,β') - f(t,x,β'+z) ≥ -c(t)z² - Lz - K` on `α ≤ x ≤ β`, `0 ≤ z ≤ z_max`,
/// plus the band condition `c(t)(β - α) < 1`.
#[allow(clippy::too_many_arguments)]
pub fn verify_e3(
    prob: &ProblemDef,
    bracket: &Bracket,
    c_fun: &[f64],
    big_l: f64,
    big_k: f64,
    z_max: f64,
    grid: E3Grid,
    exec: Execution,
) -> Result<E3Report> {
    e3_scan("E3", Side::Forward, prob, bracket, c_fun, big_l, big_k, z_max, grid, exec)
}

/// (E3′): `f(t,x,α') - f(t,x,α'+z) ≤ c(t)z² + Lz + K` and
/// `f(t,x,β'-z) - f(t,x,β') ≤ c(t)z² + Lz + K`, plus the band condition.
#[allow(clippy::too_many_arguments)]
pub fn verify_e3prime(
    prob: &ProblemDef,
    bracket: &Bracket,
    c_fun: &[f64],
    big_l: f64,
    big_k: f64,
    z_max: f64,
    grid: E3Grid,
    exec: Execution,
) -> Result<E3Report> {
    e3_scan("E3'", Side::Reverse, prob, bracket, c_fun, big_l, big_k, z_max, grid, exec)
}

/// `K̂ = K + max_Γ (|f(t,x,α') - f(t,α,α')| + |f(t,x,β') - f(t,β,β')|)`.
pub fn k_hat(prob: &ProblemDef, bracket: &Bracket, big_k: f64, nx: usize) -> Result<f64> {
    let (da, db) = (bracket.alpha_prime(), bracket.beta_prime());
    let nx = nx.max(2);
    let mut best: f64 = 0.0;
    for i in 0..=bracket.n() {
        let t = bracket.alpha.t(i);
        let (al, be) = (bracket.alpha.values()[i], bracket.beta.values()[i]);
        let faa = prob.eval(t, al, da[i])?;
        let fbb = prob.eval(t, be, db[i])?;
        for j in 0..nx {
            let x = al + (be - al) * j as f64 / (nx - 1) as f64;
            let v = (prob.eval(t, x, da[i])? - faa).abs() + (prob.eval(t, x, db[i])? - fbb).abs();
            best = best.max(v);
        }
    }
    Ok(big_k + best)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum GrowthVariant {
    /// `limsup y f1/|y|³ ≤ c(t)` with `f2` nonincreasing in `y`
    Upper,
    /// `liminf y f1/|y|³ ≥ -c(t)` with `f2` nondecreasing in `y`
    Lower,
}

/// Constants `(L, K, y0)` that turn the growth condition into (E3).
#[derive(Clone, Copy, Debug, Serialize)]
pub struct GrowthConstants {
    pub big_l: f64,
    pub big_k: f64,
    pub y0: f64,
}

/// Finds `y0 > max(|α'| + |β'|)` with `sign(y) f1 ≤ c(t) y²` beyond it (sampled
/// up to `64·y0`), then `K = 2 max(|f1| + c(α'² + β'²))` over `Γ × [-y0, y0]`
/// and `L = 2 max(|α'| + |β'|)`.
pub fn growth_constants(f1: &Rhs, bracket: &Bracket, c_fun: &[f64]) -> Result<GrowthConstants> {
    let (da, db) = (bracket.alpha_prime(), bracket.beta_prime());
    let n = bracket.n();
    let slope_max = (0..=n).map(|i| da[i].abs() + db[i].abs()).fold(0.0, f64::max);
    let big_l = 2.0 * slope_max;
    let stride = (n / 32).max(1);
    let gamma: Vec<(usize, f64)> = (0..=n)
        .step_by(stride)
        .flat_map(|i| {
            let (al, be) = (bracket.alpha.values()[i], bracket.beta.values()[i]);
            (0..9).map(move |j| (i, al + (be - al) * j as f64 / 8.0))
        })
        .collect();
    let holds_beyond = |y0: f64| -> bool {
        gamma.iter().all(|&(i, x)| {
            let t = bracket.alpha.t(i);
            (0..=24).all(|k| {
                let y = y0 * 2f64.powf(k as f64 / 4.0);
                [y, -y].iter().all(|&yy| {
                    let v = f1(t, x, yy);
                    v.is_finite() && yy.signum() * v <= c_fun[i] * yy * yy
                })
            })
        })
    };
    let mut y0 = 1.0 + slope_max;
    let mut found = false;
    for _ in 0..60 {
        if holds_beyond(y0) {
            found = true;
            break;
        }
        y0 *= 2.0;
    }
    if !found {
        return Err(Error::Infeasible(
            "no threshold y0 found for the growth bound sign(y) f1 <= c(t) y^2".into(),
        ));
    }
    let mut big_k: f64 = 0.0;
    let ny = 65;
    for &(i, x) in &gamma {
        let t = bracket.alpha.t(i);
        let cterm = c_fun[i] * (da[i] * da[i] + db[i] * db[i]);
        for k in 0..ny {
            let y = -y0 + 2.0 * y0 * k as f64 / (ny - 1) as f64;
            let v = f1(t, x, y);
            if !v.is_finite() {
                return Err(Error::Evaluation {
                    t,
                    x: Some(x),
                    y: Some(y),
                });
            }
            big_k = big_k.max(v.abs() + cterm);
        }
    }
    Ok(GrowthConstants {
        big_l,
        big_k: 2.0 * big_k,
        y0,
    })
}

/// Aitken extrapolation of three ratios; a non-contracting sequence is
/// reported as its divergent limit.
fn extrapolate(r: [f64; 3]) -> f64 {
    let (d1, d2) = (r[1] - r[0], r[2] - r[1]);
    if d2.abs() >= d1.abs() && d2.abs() > 1e-12 * (1.0 + r[2].abs()) {
        return if d2 > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY };
    }
    let den = d2 - d1;
    if den.abs() <= f64::EPSILON * (r[2].abs() + 1.0) {
        r[2]
    } else {
        r[2] - d2 * d2 / den
    }
}

/// Sampled asymptotic check of `y f1/|y|³` at `|y| ∈ {y_probe, 2y_probe,
/// 4y_probe}` over `Γ`, combined with a sampled monotonicity check of `f2`.
pub fn check_growth_condition(
    prob: &ProblemDef,
    bracket: &Bracket,
    c_fun: &[f64],
    variant: GrowthVariant,
    y_probe: f64,
) -> Result<CheckRecord> {
    let (f1, f2) = prob
        .split
        .clone()
        .ok_or_else(|| Error::Domain(format!("problem '{}' has no f1 + f2 split", prob.label)))?;
    let n = bracket.n();
    let stride = (n / 32).max(1);
    let mut tr = MinTracker::new();
    let mut mono = MinTracker::new();
    for i in (0..=n).step_by(stride) {
        let t = bracket.alpha.t(i);
        let (al, be) = (bracket.alpha.values()[i], bracket.beta.values()[i]);
        for j in 0..9 {
            let x = al + (be - al) * j as f64 / 8.0;
            for s in [1.0, -1.0] {
                let mut r = [0.0; 3];
                for (k, rk) in r.iter_mut().enumerate() {
                    let y = s * y_probe * (1u32 << k) as f64;
                    let v = f1(t, x, y);
                    if !v.is_finite() {
                        return Err(Error::Evaluation { t, x: Some(x), y: Some(y) });
                    }
                    *rk = y * v / y.abs().powi(3);
                }
                let lim = extrapolate(r);
                let m = match variant {
                    GrowthVariant::Upper => c_fun[i] - lim,
                    GrowthVariant::Lower => lim + c_fun[i],
                };
                tr.push(m, || Witness {
                    t,
                    x: Some(x),
                    z: Some(s * y_probe),
                    ..Default::default()
                });
            }
            // f2 monotonicity on a symmetric y grid
            let ny = 41;
            let ymax = y_probe.min(1e3);
            let mut prev = f2(t, x, -ymax);
            for k in 1..ny {
                let y = -ymax + 2.0 * ymax * k as f64 / (ny - 1) as f64;
                let cur = f2(t, x, y);
                let step = match variant {
                    GrowthVariant::Upper => prev - cur,
                    GrowthVariant::Lower => cur - prev,
                };
                mono.push(step, || Witness {
                    t,
                    x: Some(x),
                    z: Some(y),
                    ..Default::default()
                });
                prev = cur;
            }
        }
    }
    let name = match variant {
        GrowthVariant::Upper => "growth (limsup)",
        GrowthVariant::Lower => "growth (liminf)",
    };
    let merged = tr.merge(mono);
    Ok(merged.record(name, atol(bracket.scale())).sampled())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn linear_lipschitz() {
        let prob = ProblemDef::new("lin", |_, x, _| -x);
        let br = Bracket::constant(32, 0.0, 1.0).unwrap();
        let e = estimate_e2(&prob, &br, 0.1, Execution::Sequential).unwrap();
        assert!((e.ell - 1.0).abs() < 1e-6);
        assert!(!e.nonsmooth && e.record.pass);
    }

    #[test]
    fn kink_is_flagged_and_bounded() {
        let prob = ProblemDef::new("abs", |_, _, y: f64| 3.0 * y.abs());
        let br = Bracket::constant(32, 0.0, 1.0).unwrap();
        let e = estimate_e2(&prob, &br, 0.1, Execution::Sequential).unwrap();
        assert!(e.nonsmooth);
        assert!((e.ell - 3.0).abs() < 1e-6);
    }

    #[test]
    fn y_independent_e3() {
        let prob = ProblemDef::new("noy", |t, x: f64, _| x.sin() + t);
        let br = Bracket::constant(32, 0.0, 1.0).unwrap();
        let c = vec![0.0; 33];
        let g = E3Grid { nt: 16, nx: 8, nz: 8 };
        let r = verify_e3(&prob, &br, &c, 0.0, 0.5, 10.0, g, Execution::Sequential).unwrap();
        assert_eq!(r.record.margin, 0.5);
        let r = verify_e3prime(&prob, &br, &c, 0.0, 0.5, 10.0, g, Execution::Sequential).unwrap();
        assert_eq!(r.record.margin, 0.5);
        assert!(r.band.pass);
    }

    #[test]
    fn superquadratic_wrong_sign_fails() {
        let prob = ProblemDef::new("y2", |_, _, y: f64| y * y * y.abs());
        let br = Bracket::constant(32, 0.0, 1.0).unwrap();
        let c = vec![0.9; 33];
        let r = verify_e3(&prob, &br, &c, 1.0, 1.0, 100.0, E3Grid::default(), Execution::Sequential).unwrap();
        assert!(!r.record.pass);
        assert!(r.band.pass);
    }

    #[test]
    fn growth_of_cubic_and_sublinear() {
        let f1: Rhs = Arc::new(|_, _, y: f64| -(0.1 * y * y * y - 0.4 * y));
        let f2: Rhs = Arc::new(|_, x: f64, _| x.recip() - 1.0);
        let prob = ProblemDef::new("d", |_, _, _| 0.0).with_split(f1.clone(), f2);
        let br = Bracket::constant(32, 1.0, 2.0).unwrap();
        let c = vec![0.0; 33];
        let up = check_growth_condition(&prob, &br, &c, GrowthVariant::Upper, 1e3).unwrap();
        assert!(up.pass);
        let lo = check_growth_condition(&prob, &br, &c, GrowthVariant::Lower, 1e3).unwrap();
        assert!(!lo.pass);
        let gc = growth_constants(&f1, &br, &c).unwrap();
        assert!(gc.y0 >= 2.0);
        let zero: Rhs = Arc::new(|_, _, _| 0.0);
        let flat = ProblemDef::new("z", |_, _, _| 0.0).with_split(zero.clone(), zero);
        assert!(check_growth_condition(&flat, &br, &c, GrowthVariant::Upper, 1e3).unwrap().pass);
        assert!(check_growth_condition(&flat, &br, &c, GrowthVariant::Lower, 1e3).unwrap().pass);
    }

    #[test]
    fn aitken_limits() {
        assert!((extrapolate([1.0, 0.5, 0.25]) - 0.0).abs() < 1e-15);
        assert_eq!(extrapolate([-1.0, -2.0, -4.0]), f64::NEG_INFINITY);
        assert_eq!(extrapolate([0.3, 0.3, 0.3]), 0.3);
    }
}
