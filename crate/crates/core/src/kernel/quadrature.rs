//! Node-aligned product integration of exponential kernels.
//!
//! For a target node `t_k` the periodic convolution
//! `∫_0^{t_k} K(t_k - s)F(s) ds + ∫_{t_k}^1 K(1 + t_k - s)F(s) ds`
//! splits into whole cells. On each cell the forcing is replaced by its cubic
//! interpolant through four neighbouring nodes and the exponential is
//! integrated against that cubic exactly, so stiff shifts (large `|λ|`) cost
//! no accuracy. Cell sums depend only on the forcing and the exponent tables
//! only on `k - j`, leaving a cheap `O(n²)` row pass.

use crate::error::Result;
use crate::funcspace::{cell_stencil_start, lagrange_coeffs};
use crate::kernel::{ExpKernel, LinearParams};
use crate::par::Execution;

#[derive(Clone, Debug)]
pub struct GreenQuadrature {
    n: usize,
    exec: Execution,
    /// Stencil weights of the growing mode, per stencil kind (first, interior, last cell).
    w1: [[f64; 4]; 3],
    /// Stencil weights of the decaying mode.
    w2: [[f64; 4]; 3],
    /// `e^{λ₁(m h - 1)}` for `m = 0..=n`.
    grow: Vec<f64>,
    /// `e^{λ₂(m - 1) h}` for `m = 0..=n` (entry 0 unused).
    decay: Vec<f64>,
}

/// `J_p(z) = ∫_0^1 e^{-zu} u^p du` for `p = 0..=3`, `z ≥ 0`.
pub(crate) fn exp_moments(z: f64) -> [f64; 4] {
    let mut j = [0.0; 4];
    if z < 1.0 {
        for (p, jp) in j.iter_mut().enumerate() {
            let mut term = 1.0;
            let mut acc = 0.0;
            for k in 0..40 {
                let add = term / (p + k + 1) as f64;
                acc += add;
                if add.abs() < 1e-18 * acc.abs() {
                    break;
                }
                term *= -z / (k + 1) as f64;
            }
            *jp = acc;
        }
    } else {
        let ez = (-z).exp();
        j[0] = -(-z).exp_m1() / z;
        for p in 1..4 {
            j[p] = (p as f64 * j[p - 1] - ez) / z;
        }
    }
    j
}

fn stencil_kind(j: usize, n: usize) -> usize {
    if j == 0 {
        0
    } else if j + 1 >= n {
        2
    } else {
        1
    }
}

impl GreenQuadrature {
    pub fn new(p: &LinearParams, n: usize, exec: Execution) -> Result<Self> {
        if n < crate::funcspace::MIN_INTERVALS || !n.is_multiple_of(2) {
            return Err(crate::error::Error::Grid(format!(
                "quadrature needs an even interval count ≥ {}, got {n}",
                crate::funcspace::MIN_INTERVALS
            )));
        }
        let h = 1.0 / n as f64;
        let j1 = exp_moments(p.lambda1 * h);
        let j2 = exp_moments(-p.lambda2 * h);
        let mut w1 = [[0.0; 4]; 3];
        let mut w2 = [[0.0; 4]; 3];
        for (kind, first) in [0.0, -1.0, -2.0].into_iter().enumerate() {
            let sigma = [first, first + 1.0, first + 2.0, first + 3.0];
            let cs = lagrange_coeffs(sigma);
            let cv = lagrange_coeffs(sigma.map(|s| 1.0 - s));
            for i in 0..4 {
                w1[kind][i] = (0..4).map(|q| cs[i][q] * j1[q]).sum();
                w2[kind][i] = (0..4).map(|q| cv[i][q] * j2[q]).sum();
            }
        }
        let grow = (0..=n)
            .map(|m| (p.lambda1 * (m as f64 * h - 1.0)).exp())
            .collect();
        let decay = (0..=n)
            .map(|m| (p.lambda2 * (m as f64 - 1.0) * h).exp())
            .collect();
        Ok(GreenQuadrature {
            n,
            exec,
            w1,
            w2,
            grow,
            decay,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Periodic convolution of `forcing` (node samples) with each kernel,
    /// returning one array of `n + 1` node values per kernel.
    pub fn apply(&self, kernels: &[ExpKernel], forcing: &[f64]) -> Vec<Vec<f64>> {
        let n = self.n;
        assert_eq!(forcing.len(), n + 1, "forcing length must match the grid");
        let h = 1.0 / n as f64;
        let cells: Vec<(f64, f64)> = (0..n)
            .map(|j| {
                let kind = stencil_kind(j, n);
                let start = cell_stencil_start(j, n);
                let f = &forcing[start..start + 4];
                let a: f64 = (0..4).map(|i| self.w1[kind][i] * f[i]).sum();
                let b: f64 = (0..4).map(|i| self.w2[kind][i] * f[i]).sum();
                (a, b)
            })
            .collect();
        let rows = self.exec.map(n + 1, |k| {
            let mut s1 = 0.0;
            let mut s2 = 0.0;
            for (j, (a, b)) in cells.iter().enumerate() {
                // cell j starts at τ = m h with m ∈ 1..=n
                let m = (k + n - j - 1) % n + 1;
                s1 += self.grow[m] * a;
                s2 += self.decay[m] * b;
            }
            (s1, s2)
        });
        kernels
            .iter()
            .map(|kern| {
                rows.iter()
                    .map(|(s1, s2)| h * (kern.c1 * s1 + kern.c2 * s2))
                    .collect()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn moments_match_quadrature() {
        for &z in &[0.0, 1e-6, 0.3, 0.999, 1.0, 2.5, 40.0] {
            let j = exp_moments(z);
            // fine midpoint sum as an independent estimate
            let m = 200_000;
            for (p, jp) in j.iter().enumerate() {
                let est: f64 = (0..m)
                    .map(|i| {
                        let u = (i as f64 + 0.5) / m as f64;
                        (-z * u).exp() * u.powi(p as i32)
                    })
                    .sum::<f64>()
                    / m as f64;
                assert!((jp - est).abs() < 1e-9, "z={z} p={p}: {jp} vs {est}");
            }
        }
    }

    #[test]
    fn constant_forcing_integrates_to_inverse_a() {
        for &(a, b) in &[(1.0, 0.0), (12.9, -25.8), (1e4, 0.0), (0.01, 3.0)] {
            let p = LinearParams::new(a, b).unwrap();
            let q = GreenQuadrature::new(&p, 32, Execution::Sequential).unwrap();
            let out = q.apply(&[p.h_kernel(), p.h_prime_kernel()], &[1.0; 33]);
            for (x, dx) in out[0].iter().zip(&out[1]) {
                assert!((x - 1.0 / a).abs() <= 1e-12 / a, "a={a} b={b}: {x}");
                assert!(dx.abs() <= 1e-11 * (1.0 + 1.0 / a));
            }
        }
    }

    #[test]
    fn cosine_forcing_matches_analytic() {
        let p = LinearParams::new(1.0, 0.0).unwrap();
        let n = 256;
        let f: Vec<f64> = (0..=n).map(|i| (2.0 * PI * i as f64 / n as f64).cos()).collect();
        let q = GreenQuadrature::new(&p, n, Execution::Parallel).unwrap();
        let out = q.apply(&[p.h_kernel()], &f);
        let c = 1.0 + 4.0 * PI * PI;
        for (i, x) in out[0].iter().enumerate() {
            let t = i as f64 / n as f64;
            assert!((x - (2.0 * PI * t).cos() / c).abs() < 1e-9);
        }
    }

    #[test]
    fn endpoints_are_identical() {
        let p = LinearParams::new(3.0, 1.5).unwrap();
        let q = GreenQuadrature::new(&p, 64, Execution::Sequential).unwrap();
        let f: Vec<f64> = (0..=64).map(|i| (i as f64 * 0.37).sin()).collect();
        let out = q.apply(&[p.h_kernel(), p.h_prime_kernel()], &f);
        assert_eq!(out[0][0], out[0][64]);
        assert_eq!(out[1][0], out[1][64]);
    }

    #[test]
    fn policies_agree_bitwise() {
        let p = LinearParams::new(5.0, -1.0).unwrap();
        let f: Vec<f64> = (0..=128).map(|i| (i as f64 * 0.11).cos()).collect();
        let a = GreenQuadrature::new(&p, 128, Execution::Sequential)
            .unwrap()
            .apply(&[p.h_kernel()], &f);
        let b = GreenQuadrature::new(&p, 128, Execution::Parallel)
            .unwrap()
            .apply(&[p.h_kernel()], &f);
        assert_eq!(a, b);
    }
}
