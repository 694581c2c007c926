//! Closed-form periodic Green's function of `-h'' = -a h + b h'`.
//!
//! `h` is the unique solution with `h(1) = h(0)` and `h'(1) - h'(0) = 1`.
//! Every kernel used by the toolkit is a combination of the two exponentials
//! `e^{λ₁(τ-1)}` and `e^{λ₂τ}` on `τ ∈ [0,1]`; anchoring the growing mode at
//! `τ = 1` keeps all evaluations overflow-free for any admissible `(a, b)`.

mod quadrature;

pub use quadrature::GreenQuadrature;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::funcspace::GridFunction;
use crate::par::Execution;

/// Shift coefficients `(a, b)` and the derived roots and `k₀`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LinearParams {
    pub a: f64,
    pub b: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub k0: f64,
    /// `1 - e^{-λ₁}`
    #[serde(skip)]
    f1: f64,
    /// `1 - e^{λ₂}`
    #[serde(skip)]
    e2: f64,
    /// `e^{-λ₁}`
    #[serde(skip)]
    s: f64,
}

/// `c1·e^{λ₁(τ-1)} + c2·e^{λ₂τ}` for `τ ∈ [0,1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpKernel {
    pub c1: f64,
    pub c2: f64,
}

impl LinearParams {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0) || !a.is_finite() {
            return Err(Error::Domain(format!("shift a must be positive and finite, got {a}")));
        }
        if !b.is_finite() {
            return Err(Error::Domain(format!("shift b must be finite, got {b}")));
        }
        // Larger-magnitude root first, the other from λ₁λ₂ = -a.
        let disc = b.hypot(2.0 * a.sqrt());
        let (lambda1, lambda2) = if b >= 0.0 {
            let l2 = (-b - disc) / 2.0;
            (-a / l2, l2)
        } else {
            let l1 = (-b + disc) / 2.0;
            (l1, -a / l1)
        };
        let f1 = -(-lambda1).exp_m1();
        let e2 = -lambda2.exp_m1();
        let s = (-lambda1).exp();
        // k₀ = -h'(0)/h(0) written as (μ + φ(μ) - φ(λ₁)) / (1/(e^{λ₁}-1) + 1/(1-e^{-μ}))
        // with μ = -λ₂ and φ(x) = x/(e^x - 1); free of cancellation for large |b|.
        let phi = |x: f64| x / x.exp_m1();
        let mu = -lambda2;
        let k0 = (mu + phi(mu) - phi(lambda1)) / (1.0 / lambda1.exp_m1() - 1.0 / (-mu).exp_m1());
        Ok(LinearParams {
            a,
            b,
            lambda1,
            lambda2,
            k0,
            f1,
            e2,
            s,
        })
    }

    fn gap(&self) -> f64 {
        self.lambda1 - self.lambda2
    }

    /// The kernel `h`.
    pub fn h_kernel(&self) -> ExpKernel {
        ExpKernel {
            c1: 1.0 / (self.gap() * self.f1),
            c2: 1.0 / (self.gap() * self.e2),
        }
    }

    /// The kernel `h'`.
    pub fn h_prime_kernel(&self) -> ExpKernel {
        let h = self.h_kernel();
        ExpKernel {
            c1: self.lambda1 * h.c1,
            c2: self.lambda2 * h.c2,
        }
    }

    /// The kernel `h' + k₀h`, nonnegative on [0,1].
    pub fn h_shifted_kernel(&self) -> ExpKernel {
        let h = self.h_kernel();
        ExpKernel {
            c1: (self.lambda1 + self.k0) * h.c1,
            c2: (self.lambda2 + self.k0) * h.c2,
        }
    }

    /// The kernel `(e^{λ₁τ} - e^{λ₂τ}) / (e^{λ₁} - e^{λ₂})`.
    pub fn theta1_kernel(&self) -> ExpKernel {
        let d = -(self.lambda2 - self.lambda1).exp_m1();
        ExpKernel {
            c1: 1.0 / d,
            c2: -self.s / d,
        }
    }

    fn check_t(t: f64) -> Result<()> {
        if (0.0..=1.0).contains(&t) {
            Ok(())
        } else {
            Err(Error::Domain(format!("t = {t} outside [0,1]")))
        }
    }

    pub fn h(&self, t: f64) -> Result<f64> {
        Self::check_t(t)?;
        Ok(self.h_kernel().eval(self, t))
    }

    pub fn h_prime(&self, t: f64) -> Result<f64> {
        Self::check_t(t)?;
        Ok(self.h_prime_kernel().eval(self, t))
    }

    pub fn h_second(&self, t: f64) -> Result<f64> {
        Self::check_t(t)?;
        let h = self.h_kernel();
        let k = ExpKernel {
            c1: self.lambda1 * self.lambda1 * h.c1,
            c2: self.lambda2 * self.lambda2 * h.c2,
        };
        Ok(k.eval(self, t))
    }

    /// `h'(t)/h(t)`, increasing from `-k₀` at `t = 0`.
    pub fn h1(&self, t: f64) -> Result<f64> {
        Self::check_t(t)?;
        let (u, v) = self.modes(t);
        let h = self.h_kernel();
        let (p, q) = (h.c1 * u, h.c2 * v);
        Ok((self.lambda1 * p + self.lambda2 * q) / (p + q))
    }

    /// `(e^{λ₁(t-1)}, e^{λ₂t})`
    pub(crate) fn modes(&self, t: f64) -> (f64, f64) {
        ((self.lambda1 * (t - 1.0)).exp(), (self.lambda2 * t).exp())
    }

    /// Coefficient matrix of `θ' = -k₀θ + θ₁`, `θ₁' = (a - k₀(k₀-b))θ + (k₀-b)θ₁`.
    pub fn system_matrix(&self) -> Matrix2 {
        let k0 = self.k0;
        Matrix2([[-k0, 1.0], [self.a - k0 * (k0 - self.b), k0 - self.b]])
    }

    /// Fundamental matrix `A(t)` of the homogeneous system, `A(0) = I`.
    pub fn fundamental_matrix(&self, t: f64) -> Result<Matrix2> {
        Self::check_t(t)?;
        let (l1, l2, k0) = (self.lambda1, self.lambda2, self.k0);
        let e1 = (l1 * t).exp();
        let e2 = (l2 * t).exp();
        let g = self.gap();
        let m = [
            [
                ((l1 + k0) * e2 - (l2 + k0) * e1) / g,
                (e1 - e2) / g,
            ],
            [
                -(l1 + k0) * (l2 + k0) * (e1 - e2) / g,
                ((l1 + k0) * e1 - (l2 + k0) * e2) / g,
            ],
        ];
        Ok(Matrix2(m))
    }

    /// Closed form of `(I - A(1))⁻¹`; the (2,2) entry is identically zero.
    pub fn periodicity_resolvent(&self) -> Matrix2 {
        let em1 = self.lambda1.exp_m1();
        let r11 = 1.0 / self.e2 - 1.0 / em1;
        let r12 = -(1.0 / self.e2 + 1.0 / em1) / self.gap();
        let r21 = -self.gap() * self.s / (self.f1 + self.e2 * self.s);
        Matrix2([[r11, r12], [r21, 0.0]])
    }

    /// `θ₁(t) = -∫ g(t-s) u(s) ds` with the periodically continued kernel
    /// `g(τ) = (e^{λ₁τ} - e^{λ₂τ})/(e^{λ₁} - e^{λ₂})`.
    pub fn theta1_from_u(&self, u: &GridFunction, exec: Execution) -> Result<GridFunction> {
        let q = GreenQuadrature::new(self, u.n(), exec)?;
        let vals: Vec<f64> = q
            .apply(&[self.theta1_kernel()], u.values())
            .remove(0)
            .into_iter()
            .map(|v| -v)
            .collect();
        GridFunction::new(vals)
    }
}

impl ExpKernel {
    pub fn eval(&self, p: &LinearParams, t: f64) -> f64 {
        let (u, v) = p.modes(t);
        self.c1 * u + self.c2 * v
    }
}

/// Real 2×2 matrix, row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Matrix2(pub [[f64; 2]; 2]);

impl Matrix2 {
    pub const IDENTITY: Matrix2 = Matrix2([[1.0, 0.0], [0.0, 1.0]]);

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[i][j]
    }

    pub fn mul(&self, o: &Matrix2) -> Matrix2 {
        let mut r = [[0.0; 2]; 2];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.0[i][0] * o.0[0][j] + self.0[i][1] * o.0[1][j];
            }
        }
        Matrix2(r)
    }

    pub fn sub(&self, o: &Matrix2) -> Matrix2 {
        let mut r = self.0;
        for (i, row) in r.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v -= o.0[i][j];
            }
        }
        Matrix2(r)
    }

    pub fn max_abs_diff(&self, o: &Matrix2) -> f64 {
        let d = self.sub(o);
        d.0.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn inverse(&self) -> Option<Matrix2> {
        let [[a, b], [c, d]] = self.0;
        let det = a * d - b * c;
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        Some(Matrix2([[d / det, -b / det], [-c / det, a / det]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    /// The textbook closed form evaluated literally, as an independent check.
    fn h_literal(p: &LinearParams, t: f64) -> f64 {
        let (l1, l2) = (p.lambda1, p.lambda2);
        ((1.0 - l2.exp()) * (l1 * t).exp() + (l1.exp() - 1.0) * (l2 * t).exp())
            / ((l1 - l2) * (l1.exp() - 1.0) * (1.0 - l2.exp()))
    }

    #[test]
    fn roots_for_simple_cases() {
        let p = LinearParams::new(1.0, 0.0).unwrap();
        assert!((p.lambda1 - 1.0).abs() < 1e-15 && (p.lambda2 + 1.0).abs() < 1e-15);
        let p = LinearParams::new(2.0, 1.0).unwrap();
        assert!((p.lambda1 - 1.0).abs() < 1e-15 && (p.lambda2 + 2.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_nonpositive_a() {
        assert!(LinearParams::new(0.0, 1.0).is_err());
        assert!(LinearParams::new(-1.0, 0.0).is_err());
        assert!(LinearParams::new(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn k0_unit_case_is_tanh_half() {
        // With λ = ±1 the ratio reduces to (e + 1/e - 2)/(e - 1/e) = tanh(1/2).
        let p = LinearParams::new(1.0, 0.0).unwrap();
        assert!((p.k0 - 0.5f64.tanh()).abs() < 1e-15);
        let lit = -(1.0 * (1.0 - (-1.0f64).exp()) + -(E - 1.0)) / (E - (-1.0f64).exp());
        assert!((p.k0 - lit).abs() < 1e-15);
        let ratio = -p.h_prime(0.0).unwrap() / p.h(0.0).unwrap();
        assert!((p.k0 - ratio).abs() < 1e-14);
    }

    #[test]
    fn h_matches_literal_formula() {
        let p = LinearParams::new(2.0, 1.0).unwrap();
        for i in 0..=20 {
            let t = i as f64 / 20.0;
            let lit = h_literal(&p, t);
            assert!((p.h(t).unwrap() - lit).abs() <= 1e-14 * lit.abs());
        }
    }

    #[test]
    fn h_periodic_and_jump() {
        for &(a, b) in &[(1.0, 0.0), (2.0, 1.0), (0.01, -3.0), (500.0, 40.0)] {
            let p = LinearParams::new(a, b).unwrap();
            let h0 = p.h(0.0).unwrap();
            assert!((p.h(1.0).unwrap() - h0).abs() <= 1e-12 * h0);
            assert!((p.h_prime(1.0).unwrap() - p.h_prime(0.0).unwrap() - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn symmetric_case() {
        let p = LinearParams::new(1.0, 0.0).unwrap();
        for i in 0..=10 {
            let t = i as f64 / 10.0;
            assert!((p.h(t).unwrap() - p.h(1.0 - t).unwrap()).abs() < 1e-15);
        }
        assert!(p.h_prime(0.5).unwrap().abs() < 1e-15);
        assert!(p.h1(0.5).unwrap().abs() < 1e-15);
    }

    #[test]
    fn h1_increasing_from_minus_k0() {
        let p = LinearParams::new(3.0, -2.0).unwrap();
        assert!((p.h1(0.0).unwrap() + p.k0).abs() < 1e-14);
        let mut prev = p.h1(0.0).unwrap();
        for i in 1..=50 {
            let v = p.h1(i as f64 / 50.0).unwrap();
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn out_of_range_t() {
        let p = LinearParams::new(1.0, 0.0).unwrap();
        assert!(p.h(-0.1).is_err());
        assert!(p.h_prime(1.1).is_err());
        assert!(p.fundamental_matrix(2.0).is_err());
    }

    #[test]
    fn fundamental_matrix_at_zero() {
        let p = LinearParams::new(2.0, 1.0).unwrap();
        assert!(p.fundamental_matrix(0.0).unwrap().max_abs_diff(&Matrix2::IDENTITY) < 1e-15);
    }

    #[test]
    fn fundamental_matrix_solves_system() {
        let p = LinearParams::new(2.0, 1.0).unwrap();
        let m = p.system_matrix();
        let eps = 1e-6;
        for &t in &[0.1, 0.5, 0.9] {
            let fd = p
                .fundamental_matrix(t + eps)
                .unwrap()
                .sub(&p.fundamental_matrix(t - eps).unwrap());
            let fd = Matrix2([
                [fd.0[0][0] / (2.0 * eps), fd.0[0][1] / (2.0 * eps)],
                [fd.0[1][0] / (2.0 * eps), fd.0[1][1] / (2.0 * eps)],
            ]);
            let ma = m.mul(&p.fundamental_matrix(t).unwrap());
            assert!(fd.max_abs_diff(&ma) < 1e-7);
        }
    }

    #[test]
    fn resolvent_inverts() {
        for &(a, b) in &[(1.0, 0.0), (2.0, 1.0), (5.0, -2.0)] {
            let p = LinearParams::new(a, b).unwrap();
            let i_a = Matrix2::IDENTITY.sub(&p.fundamental_matrix(1.0).unwrap());
            let r = p.periodicity_resolvent();
            assert!(r.mul(&i_a).max_abs_diff(&Matrix2::IDENTITY) < 1e-12);
            assert_eq!(r.get(1, 1), 0.0);
            let inv = i_a.inverse().unwrap();
            assert!(inv.max_abs_diff(&r) < 1e-12);
        }
    }

    #[test]
    fn shifted_kernel_nonnegative() {
        let p = LinearParams::new(70.0, -25.0).unwrap();
        let k = p.h_shifted_kernel();
        for i in 0..=200 {
            assert!(k.eval(&p, i as f64 / 200.0) >= -1e-12);
        }
    }

    #[test]
    fn extreme_shift_does_not_overflow() {
        let p = LinearParams::new(1e6, -2000.0).unwrap();
        assert!(p.lambda1 > 700.0);
        for i in 0..=10 {
            let v = p.h(i as f64 / 10.0).unwrap();
            assert!(v.is_finite() && v > 0.0);
        }
        assert!(p.k0 > 0.0 && p.k0 <= -p.lambda2);
    }

    #[test]
    fn theta1_constant_for_unit_forcing() {
        let p = LinearParams::new(1.0, 0.0).unwrap();
        let u = GridFunction::constant(64, -1.0).unwrap();
        let th = p.theta1_from_u(&u, Execution::Sequential).unwrap();
        let expect = (E + 1.0 / E - 2.0) / (E - 1.0 / E);
        for v in th.values() {
            assert!((v - expect).abs() < 1e-13, "{v} vs {expect}");
        }
        let zero = GridFunction::constant(64, 0.0).unwrap();
        let th0 = p.theta1_from_u(&zero, Execution::Sequential).unwrap();
        assert!(th0.values().iter().all(|v| *v == 0.0));
    }
}
