//! The invariant set `A_Δ` and the sampled checks of (E1) and (E1′).
//!
//! With `θ = η - ᾱ₁`, `W = β̄₁ - ᾱ₁` and `g = W' + k₀W` membership reads
//! `0 ≤ θ ≤ W` and `-k₀θ ≤ θ' ≤ g - k₀θ`. Random members integrate a random
//! target slope clamped into that cone, so the slope bounds are active on
//! long stretches and the sampled checks probe the edges of the set.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{atol, Bracket, CheckRecord, MinTracker, Witness};
use crate::error::{Error, Result};
use crate::funcspace::GridFunction;
use crate::kernel::LinearParams;
use crate::operator::ProblemDef;
use crate::par::Execution;

const FOURIER_MODES: usize = 4;

#[derive(Clone, Debug)]
pub struct Envelope {
    pub alpha1bar: GridFunction,
    pub beta1bar: GridFunction,
    pub k0: f64,
    pub delta_cap: f64,
}

/// `ᾱ₁ = α + r₁h - Δ/a`, `β̄₁ = β - r₂h + Δ/a` with their derivatives.
pub fn build_envelope(
    bracket: &Bracket,
    p: &LinearParams,
    delta_cap: f64,
    delta: f64,
) -> Result<Envelope> {
    if delta_cap < delta / 2.0 {
        return Err(Error::Domain(format!(
            "Delta = {delta_cap} is below delta/2 = {}",
            delta / 2.0
        )));
    }
    let n = bracket.n();
    let mut av = Vec::with_capacity(n + 1);
    let mut ad = Vec::with_capacity(n + 1);
    let mut bv = Vec::with_capacity(n + 1);
    let mut bd = Vec::with_capacity(n + 1);
    let (da, db) = (bracket.alpha_prime(), bracket.beta_prime());
    for i in 0..=n {
        let t = bracket.alpha.t(i);
        let (h, hp) = (p.h(t)?, p.h_prime(t)?);
        av.push(bracket.alpha.values()[i] + bracket.r1 * h - delta_cap / p.a);
        ad.push(da[i] + bracket.r1 * hp);
        bv.push(bracket.beta.values()[i] - bracket.r2 * h + delta_cap / p.a);
        bd.push(db[i] - bracket.r2 * hp);
    }
    Ok(Envelope {
        alpha1bar: GridFunction::new(av)?.with_derivative(ad)?,
        beta1bar: GridFunction::new(bv)?.with_derivative(bd)?,
        k0: p.k0,
        delta_cap,
    })
}

impl Envelope {
    pub fn n(&self) -> usize {
        self.alpha1bar.n()
    }

    /// `ψ̄₁(η, t_i)`
    pub fn psi1(&self, i: usize, eta: f64) -> f64 {
        let a = &self.alpha1bar;
        a.derivative().expect("envelope carries derivatives")[i] - self.k0 * (eta - a.values()[i])
    }

    /// `ψ̄₂(η, t_i)`
    pub fn psi2(&self, i: usize, eta: f64) -> f64 {
        let b = &self.beta1bar;
        b.derivative().expect("envelope carries derivatives")[i] + self.k0 * (b.values()[i] - eta)
    }

    pub fn scale(&self) -> f64 {
        self.alpha1bar.max_abs().max(self.beta1bar.max_abs())
    }

    /// Smallest slack of the band and slope constraints, with its node.
    pub fn membership_slack(&self, eta: &GridFunction) -> Result<(f64, usize)> {
        eta.same_grid(&self.alpha1bar)?;
        let d = eta.derivative_or_err()?;
        let mut worst = (f64::INFINITY, 0);
        for i in 0..=self.n() {
            let v = eta.values()[i];
            let s = (v - self.alpha1bar.values()[i])
                .min(self.beta1bar.values()[i] - v)
                .min(d[i] - self.psi1(i, v))
                .min(self.psi2(i, v) - d[i]);
            if s < worst.0 {
                worst = (s, i);
            }
        }
        Ok(worst)
    }

    pub fn contains(&self, eta: &GridFunction) -> Result<bool> {
        Ok(self.membership_slack(eta)?.0 >= -atol(self.scale().max(eta.max_abs())))
    }

    fn width(&self) -> Vec<f64> {
        self.beta1bar
            .values()
            .iter()
            .zip(self.alpha1bar.values())
            .map(|(b, a)| b - a)
            .collect()
    }

    /// `W' + k₀W`, the width of the admissible slope interval at `θ = 0`.
    fn slope_room(&self) -> Vec<f64> {
        let w = self.width();
        let da = self.alpha1bar.derivative().expect("envelope carries derivatives");
        let db = self.beta1bar.derivative().expect("envelope carries derivatives");
        (0..=self.n())
            .map(|i| db[i] - da[i] + self.k0 * w[i])
            .collect()
    }

    fn combine(&self, lam: f64) -> Result<GridFunction> {
        self.beta1bar.axpby(lam, &self.alpha1bar, 1.0 - lam)
    }

    /// A member built from the random target slope `v`.
    fn clamped_member(&self, v: &[f64], w: &[f64], g: &[f64]) -> Result<GridFunction> {
        let n = self.n();
        let h = 1.0 / n as f64;
        let k0 = self.k0;
        let slope = |i: usize, th: f64| v[i].clamp(-k0 * th, (g[i] - k0 * th).max(-k0 * th));
        let run = |th0: f64, keep: bool| -> (f64, Vec<f64>) {
            let mut th = th0;
            let mut path = Vec::with_capacity(if keep { n + 1 } else { 0 });
            if keep {
                path.push(th);
            }
            for i in 0..n {
                let s0 = slope(i, th);
                let pred = (th + h * s0).clamp(0.0, w[i + 1].max(0.0));
                let s1 = slope(i + 1, pred);
                th = (th + 0.5 * h * (s0 + s1)).clamp(0.0, w[i + 1].max(0.0));
                if keep {
                    path.push(th);
                }
            }
            (th, path)
        };
        // the return map is monotone and maps [0, W(0)] into itself
        let (mut lo, mut hi) = (0.0, w[0].max(0.0));
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if run(mid, false).0 >= mid {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (_, mut theta) = run(lo, true);
        theta[n] = theta[0];
        let values: Vec<f64> = (0..=n).map(|i| self.alpha1bar.values()[i] + theta[i]).collect();
        let mut deriv: Vec<f64> = (0..=n)
            .map(|i| self.alpha1bar.derivative().expect("envelope carries derivatives")[i] + slope(i, theta[i]))
            .collect();
        deriv[n] = deriv[0];
        GridFunction::new(values)?.with_derivative(deriv)
    }
}

/// Deterministic sample of `A_Δ`: `β̄₁`, `ᾱ₁`, convex combinations of the
/// two, then random members with active slope constraints. Every returned
/// member is re-verified; a failing constructed member is reported as an
/// internal inconsistency.
pub fn sample_envelope(
    env: &Envelope,
    count: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<GridFunction>> {
    let mut out = Vec::with_capacity(count);
    if count == 0 {
        return Ok(out);
    }
    out.push(env.beta1bar.clone());
    if count >= 2 {
        out.push(env.alpha1bar.clone());
    }
    let rest = count.saturating_sub(2);
    let combos = if rest == 0 { 0 } else { (rest / 10).clamp(1, 9) };
    for j in 0..combos {
        out.push(env.combine((j + 1) as f64 / (combos + 1) as f64)?);
    }
    let randoms = rest - combos;
    let w = env.width();
    let g = env.slope_room();
    let n = env.n();
    let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let members = exec.try_map(randoms, |k| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64 + 1);
        let offset: f64 = rng.gen_range(-0.5..0.5);
        let coef: Vec<(f64, f64)> = (0..FOURIER_MODES)
            .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let amp = 1.5 * gmax;
        let v: Vec<f64> = (0..=n)
            .map(|i| {
                let t = i as f64 / n as f64;
                let s: f64 = coef
                    .iter()
                    .enumerate()
                    .map(|(m, (c, d))| {
                        let arg = 2.0 * std::f64::consts::PI * (m + 1) as f64 * t;
                        c * arg.cos() + d * arg.sin()
                    })
                    .sum();
                amp * (offset + s)
            })
            .collect();
        env.clamped_member(&v, &w, &g)
    })?;
    out.extend(members);
    for (k, eta) in out.iter().enumerate() {
        let (slack, i) = env.membership_slack(eta)?;
        if slack < -atol(env.scale()) {
            return Err(Error::Infeasible(format!(
                "envelope member {k} violates its constraints by {:e} at t = {}; \
                 the bracket does not satisfy the envelope inequality",
                -slack,
                eta.t(i)
            )));
        }
    }
    Ok(out)
}

fn e1_scan<F>(
    name: &str,
    bracket: &Bracket,
    samples: &[GridFunction],
    exec: Execution,
    slack: F,
) -> Result<CheckRecord>
where
    F: Fn(usize, f64, f64, f64) -> Result<(f64, f64)> + Sync + Send,
{
    let parts = exec.try_map(samples.len(), |k| {
        let eta = &samples[k];
        eta.same_grid(&bracket.alpha)?;
        let d = eta.derivative_or_err()?;
        let mut tr = MinTracker::new();
        let mut scale: f64 = 0.0;
        for i in 0..=eta.n() {
            let (s, mag) = slack(i, eta.t(i), eta.values()[i], d[i])?;
            scale = scale.max(mag);
            tr.push(s, || Witness {
                t: eta.t(i),
                eta_index: Some(k),
                ..Default::default()
            });
        }
        Ok::<_, Error>((tr, scale))
    })?;
    let mut scale = bracket.scale();
    let mut tr = MinTracker::new();
    for (part, s) in parts {
        tr = tr.merge(part);
        scale = scale.max(s);
    }
    Ok(tr.record(name, atol(scale)).sampled())
}

/// Sampled (E1): for every sample and node,
/// `f(t,η,η') + α'' + a(η-α) - b(η'-α') + Δ ≥ 0` and
/// `a(β-η) - b(β'-η') + Δ - f(t,η,η') - β'' ≥ 0`.
pub fn verify_e1(
    prob: &ProblemDef,
    bracket: &Bracket,
    p: &LinearParams,
    delta_cap: f64,
    samples: &[GridFunction],
    exec: Execution,
) -> Result<CheckRecord> {
    let (da, db) = (bracket.alpha_prime(), bracket.beta_prime());
    e1_scan("E1", bracket, samples, exec, |i, t, x, y| {
        let f = prob.eval(t, x, y)?;
        let (al, be) = (bracket.alpha.values()[i], bracket.beta.values()[i]);
        let lo = f + bracket.alpha2[i] + p.a * (x - al) - p.b * (y - da[i]) + delta_cap;
        let hi = p.a * (be - x) - p.b * (db[i] - y) + delta_cap - f - bracket.beta2[i];
        Ok((lo.min(hi), f.abs()))
    })
}

/// Sampled (E1′): the difference form
/// `f(η) - f(α) + a(η-α) - b(η'-α') + Δ ≥ 0` and
/// `f(β) - f(η) + a(β-η) - b(β'-η') + Δ ≥ 0`.
pub fn verify_e1prime(
    prob: &ProblemDef,
    bracket: &Bracket,
    p: &LinearParams,
    delta_cap: f64,
    samples: &[GridFunction],
    exec: Execution,
) -> Result<CheckRecord> {
    let (da, db) = (bracket.alpha_prime(), bracket.beta_prime());
    let n = bracket.n();
    let fa = (0..=n)
        .map(|i| prob.eval(bracket.alpha.t(i), bracket.alpha.values()[i], da[i]))
        .collect::<Result<Vec<_>>>()?;
    let fb = (0..=n)
        .map(|i| prob.eval(bracket.beta.t(i), bracket.beta.values()[i], db[i]))
        .collect::<Result<Vec<_>>>()?;
    e1_scan("E1'", bracket, samples, exec, |i, t, x, y| {
        let f = prob.eval(t, x, y)?;
        let (al, be) = (bracket.alpha.values()[i], bracket.beta.values()[i]);
        let lo = f - fa[i] + p.a * (x - al) - p.b * (y - da[i]) + delta_cap;
        let hi = fb[i] - f + p.a * (be - x) - p.b * (db[i] - y) + delta_cap;
        Ok((lo.min(hi), f.abs().max(fa[i].abs()).max(fb[i].abs())))
    })
}
