//! Random brackets and problems shared by the integration tests.

use std::f64::consts::PI;

use pbvp_core::conditions::Bracket;
use pbvp_core::operator::ProblemDef;
use pbvp_core::GridFunction;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A bracket with kinks at the period boundary (`r₁, r₂ > 0`) plus smooth
/// periodic parts, returned with exact derivatives.
pub fn random_bracket(rng: &mut ChaCha8Rng, n: usize, modes: u32) -> Bracket {
    let curve = |rng: &mut ChaCha8Rng, base: f64, bump: f64| {
        let (c, s, k) = (
            rng.gen_range(-0.3..0.3),
            rng.gen_range(-0.3..0.3),
            rng.gen_range(1..=modes) as f64,
        );
        let w = 2.0 * PI * k;
        let v = move |t: f64| base + bump * t * (1.0 - t) + c * (w * t).cos() + s * (w * t).sin();
        let d = move |t: f64| bump * (1.0 - 2.0 * t) - c * w * (w * t).sin() + s * w * (w * t).cos();
        let dd = move |t: f64| -2.0 * bump - w * w * (c * (w * t).cos() + s * (w * t).sin());
        let g = GridFunction::sample(n, v).unwrap();
        let der: Vec<f64> = (0..=n).map(|i| d(g.t(i))).collect();
        let sec: Vec<f64> = (0..=n).map(|i| dd(g.t(i))).collect();
        (g.with_derivative(der).unwrap(), sec)
    };
    let bump = rng.gen_range(0.0..2.0);
    let (al, a2) = curve(rng, 0.0, bump);
    let (base, bump) = (rng.gen_range(1.0..4.0), -rng.gen_range(0.0..2.0));
    let (be, b2) = curve(rng, base, bump);
    Bracket::new(al, be, Some(a2), Some(b2)).unwrap()
}

/// `f` built so that `α` and `β` are strict lower and upper solutions.
pub fn problem_for(br: &Bracket, rng: &mut ChaCha8Rng) -> ProblemDef {
    let (k1, k2, k3): (f64, f64, f64) = (
        rng.gen_range(-2.0..2.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    );
    let nl = move |x: f64, y: f64| k1 * x.sin() + k2 * y + k3 * x * y / (1.0 + y * y);
    let (rho_a, rho_b) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
    let n = br.n();
    let idx = move |t: f64| ((t * n as f64).round() as usize).min(n);
    let (av, bv) = (br.alpha.values().to_vec(), br.beta.values().to_vec());
    let (ad, bd) = (br.alpha_prime().to_vec(), br.beta_prime().to_vec());
    let (a2, b2) = (br.alpha2.clone(), br.beta2.clone());
    ProblemDef::new("lemma", move |t, x, y| {
        let i = idx(t);
        let lo = -a2[i] + rho_a - nl(av[i], ad[i]);
        let hi = -b2[i] - rho_b - nl(bv[i], bd[i]);
        let s = (x - av[i]) / (bv[i] - av[i]);
        nl(x, y) + lo * (1.0 - s) + hi * s
    })
}

