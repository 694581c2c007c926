//! Choice of the shift `(a, b)` along the constructive existence argument:
//! `b = -a/N + N`, so that `λ₂ = -N` and `k₀ ≤ N`.

use serde::Serialize;

use crate::conditions::{
    default_mu, default_z_max, estimate_e2, k_hat, verify_e3, Bracket, E3Grid,
};
use crate::error::{Error, Result};
use crate::operator::ProblemDef;
use crate::par::Execution;

/// Constants from the (E2)/(E3) checks that enter the choice of `N`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ShiftInputs {
    pub ell: f64,
    pub mu: f64,
    pub c: f64,
    pub big_l: f64,
    pub k_hat: f64,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ShiftChoice {
    pub a: f64,
    pub b: f64,
    pub big_n: f64,
    pub n0: f64,
    pub a0: f64,
    pub c_n: f64,
}

pub const N_MIN: f64 = 1.0;
const N_MAX: f64 = 1e12;
const CN_GRID: usize = 32;

/// Smallest power-of-two multiple of [`N_MIN`] with
/// `β - α + (β' - α')/N > 0` at every node.
fn scan_n0(bracket: &Bracket) -> Result<f64> {
    let (da, db) = (bracket.alpha_prime(), bracket.beta_prime());
    let gap = |i: usize| bracket.beta.values()[i] - bracket.alpha.values()[i];
    let mut big_n = N_MIN;
    let mut worst = f64::NEG_INFINITY;
    while big_n <= N_MAX {
        worst = (0..=bracket.n())
            .map(|i| gap(i) + (db[i] - da[i]) / big_n)
            .fold(f64::INFINITY, f64::min);
        if worst > 0.0 {
            return Ok(big_n);
        }
        big_n *= 2.0;
    }
    Err(Error::Infeasible(format!(
        "no N up to {N_MAX:e} makes beta - alpha + (beta' - alpha')/N positive (last margin {worst:e})"
    )))
}

/// Least `a ≥ 0` with `a(β-α) - b(β'-α') + f(t,β,β') - f(t,α,α') ≥ 0` when
/// `b = -a/N + N`. The margin is affine in `a` with positive slope
/// `β - α + (β'-α')/N`, so the scan reduces to a max of node-wise roots.
fn least_a(prob: &ProblemDef, bracket: &Bracket, big_n: f64) -> Result<f64> {
    let (da, db) = (bracket.alpha_prime(), bracket.beta_prime());
    let mut a0: f64 = 0.0;
    for i in 0..=bracket.n() {
        let t = bracket.alpha.t(i);
        let (al, be) = (bracket.alpha.values()[i], bracket.beta.values()[i]);
        let df = prob.eval(t, be, db[i])? - prob.eval(t, al, da[i])?;
        let slope = (be - al) + (db[i] - da[i]) / big_n;
        a0 = a0.max((big_n * (db[i] - da[i]) - df) / slope);
    }
    Ok(a0)
}

/// Lipschitz slope of `f` over
/// `E_N = {α ≤ x ≤ β, α' - N(x-α) ≤ y ≤ β' + N(β-x)}` on a 32³ sample grid.
fn lipschitz_on_en(prob: &ProblemDef, bracket: &Bracket, big_n: f64, exec: Execution) -> Result<f64> {
    let n = bracket.n();
    let stride = (n / CN_GRID).max(1);
    let nodes: Vec<usize> = (0..=n).step_by(stride).collect();
    let (da, db) = (bracket.alpha_prime(), bracket.beta_prime());
    let rows = exec.try_map(nodes.len(), |k| {
        let i = nodes[k];
        let t = bracket.alpha.t(i);
        let (al, be) = (bracket.alpha.values()[i], bracket.beta.values()[i]);
        let mut best: f64 = 0.0;
        for jx in 0..CN_GRID {
            let x = al + (be - al) * jx as f64 / (CN_GRID - 1) as f64;
            let (ylo, yhi) = (da[i] - big_n * (x - al), db[i] + big_n * (be - x));
            for jy in 0..CN_GRID {
                let y = ylo + (yhi - ylo) * jy as f64 / (CN_GRID - 1) as f64;
                best = best
                    .max(prob.dfdx(t, x, y)?.abs())
                    .max(prob.dfdy(t, x, y)?.abs());
            }
        }
        Ok::<_, Error>(best)
    })?;
    Ok(rows.into_iter().fold(0.0, f64::max))
}

/// `N = max{N₀, ℓ + 1, (K̂ + Lμ)/((1-c)μ)}`, `a = max{a₀, (N + C_N + ℓ)N}`,
/// `b = -a/N + N`.
pub fn pick_shift(
    prob: &ProblemDef,
    bracket: &Bracket,
    inputs: &ShiftInputs,
    exec: Execution,
) -> Result<ShiftChoice> {
    if !(inputs.c < 1.0) || !(inputs.mu > 0.0) {
        return Err(Error::Domain(format!(
            "need c < 1 and mu > 0, got c = {}, mu = {}",
            inputs.c, inputs.mu
        )));
    }
    let n0 = scan_n0(bracket)?;
    let big_n = n0
        .max(inputs.ell + 1.0)
        .max((inputs.k_hat + inputs.big_l * inputs.mu) / ((1.0 - inputs.c) * inputs.mu));
    let a0 = least_a(prob, bracket, big_n)?;
    let c_n = lipschitz_on_en(prob, bracket, big_n, exec)?;
    let a = a0.max((big_n + c_n + inputs.ell) * big_n);
    Ok(ShiftChoice {
        a,
        b: -a / big_n + big_n,
        big_n,
        n0,
        a0,
        c_n,
    })
}

/// Generic inputs when no growth constants are known: `ℓ` and `μ` from the
/// tube estimate, `c = 0`, `L = 0`, and `K` the least constant for which the
/// (E3) scan passes with those choices.
pub fn default_shift_inputs(prob: &ProblemDef, bracket: &Bracket, exec: Execution) -> Result<ShiftInputs> {
    let mu = default_mu(prob, bracket);
    let e2 = estimate_e2(prob, bracket, mu, exec)?;
    let zeros = vec![0.0; bracket.n() + 1];
    let z_max = default_z_max(bracket, 0.0, 0.0);
    let grid = E3Grid { nt: 32, nx: 16, nz: 32 };
    let probe = verify_e3(prob, bracket, &zeros, 0.0, 0.0, z_max, grid, exec)?;
    let big_k = (-probe.record.margin).max(0.0);
    Ok(ShiftInputs {
        ell: e2.ell,
        mu,
        c: 0.0,
        big_l: 0.0,
        k_hat: k_hat(prob, bracket, big_k, 33)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::LinearParams;

    #[test]
    fn constant_bracket_takes_minimal_n0() {
        let br = Bracket::constant(32, 0.0, 1.0).unwrap();
        assert_eq!(scan_n0(&br).unwrap(), N_MIN);
    }

    #[test]
    fn shift_has_root_minus_n() {
        let prob = ProblemDef::new("s", |_, x: f64, _| x.sin());
        let br = Bracket::constant(32, 1.0, 2.0).unwrap();
        let inputs = default_shift_inputs(&prob, &br, Execution::Sequential).unwrap();
        let ch = pick_shift(&prob, &br, &inputs, Execution::Sequential).unwrap();
        let p = LinearParams::new(ch.a, ch.b).unwrap();
        assert!((p.lambda2 + ch.big_n).abs() < 1e-9 * ch.big_n);
        assert!(p.k0 <= ch.big_n);
        assert!(ch.a >= ch.a0);
    }
}
