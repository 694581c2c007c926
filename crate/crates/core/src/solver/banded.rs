//! Banded LU with partial pivoting, plus a low-rank corner correction for
//! the two periodicity rows of the collocation system.

use crate::error::{Error, Result};

/// Square matrix with `kl` sub- and `ku` super-diagonals. Storage leaves
/// room for the extra `kl` super-diagonals created by row pivoting.
#[derive(Clone, Debug)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        BandMatrix {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let off = j as isize - i as isize + self.kl as isize;
        (off >= 0 && (off as usize) < self.width).then(|| i * self.width + off as usize)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |k| self.data[k])
    }

    /// Adds `v` at `(i, j)`; entries outside the declared band are an error.
    pub fn add(&mut self, i: usize, j: usize, v: f64) -> Result<()> {
        let inside = j + self.kl >= i && j <= i + self.ku;
        match self.slot(i, j) {
            Some(k) if inside => {
                self.data[k] += v;
                Ok(())
            }
            _ => Err(Error::Grid(format!("entry ({i}, {j}) outside the band"))),
        }
    }

    /// In-place factorization.
    pub fn factor(mut self) -> Result<BandLu> {
        let n = self.n;
        let mut piv = vec![0usize; n];
        let reach = self.kl + self.ku;
        for k in 0..n {
            let last = (k + self.kl).min(n - 1);
            let mut p = k;
            let mut best = self.get(k, k).abs();
            for i in k + 1..=last {
                let v = self.get(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > 0.0) || !best.is_finite() {
                return Err(Error::Singular(k));
            }
            piv[k] = p;
            let jmax = (k + reach).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    let (a, b) = (self.slot(k, j).unwrap(), self.slot(p, j));
                    match b {
                        Some(b) => self.data.swap(a, b),
                        None => debug_assert_eq!(self.data[a], 0.0),
                    }
                }
            }
            let pivot = self.get(k, k);
            for i in k + 1..=last {
                let si = self.slot(i, k).unwrap();
                let l = self.data[si] / pivot;
                self.data[si] = l;
                if l == 0.0 {
                    continue;
                }
                for j in k + 1..=jmax {
                    let u = self.get(k, j);
                    if u != 0.0 {
                        let s = self.slot(i, j).unwrap();
                        self.data[s] -= l * u;
                    }
                }
            }
        }
        Ok(BandLu { m: self, piv })
    }
}

#[derive(Clone, Debug)]
pub struct BandLu {
    m: BandMatrix,
    piv: Vec<usize>,
}

impl BandLu {
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let m = &self.m;
        let n = m.n;
        let mut b = rhs.to_vec();
        for k in 0..n {
            b.swap(k, self.piv[k]);
            let bk = b[k];
            if bk != 0.0 {
                for i in k + 1..=(k + m.kl).min(n - 1) {
                    b[i] -= m.get(i, k) * bk;
                }
            }
        }
        let reach = m.kl + m.ku;
        for k in (0..n).rev() {
            let mut s = b[k];
            for j in k + 1..=(k + reach).min(n - 1) {
                s -= m.get(k, j) * b[j];
            }
            b[k] = s / m.get(k, k);
        }
        b
    }
}

/// `A = B + Σ_r e_{row_r} v_rᵀ` with `B` banded, solved by Woodbury.
#[derive(Clone, Debug)]
pub struct CornerSystem {
    lu: BandLu,
    rows: Vec<usize>,
    /// sparse correction rows `(col, value)`
    corr: Vec<Vec<(usize, f64)>>,
    /// `B⁻¹ e_{row_r}`
    z: Vec<Vec<f64>>,
    cap: nalgebra::linalg::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl CornerSystem {
    pub fn new(band: BandMatrix, rows: Vec<usize>, corr: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let n = band.n();
        let lu = band.factor()?;
        let z: Vec<Vec<f64>> = rows
            .iter()
            .map(|&r| {
                let mut e = vec![0.0; n];
                e[r] = 1.0;
                lu.solve(&e)
            })
            .collect();
        let k = rows.len();
        let cap = nalgebra::DMatrix::from_fn(k, k, |i, j| {
            let d: f64 = corr[i].iter().map(|&(c, v)| v * z[j][c]).sum();
            d + if i == j { 1.0 } else { 0.0 }
        });
        let mx = cap.amax().max(1.0);
        let cap = cap.lu();
        if cap.determinant().abs() <= 1e-13 * mx.powi(k as i32) {
            return Err(Error::Singular(n));
        }
        Ok(CornerSystem {
            lu,
            rows,
            corr,
            z,
            cap,
        })
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let y = self.lu.solve(rhs);
        let k = self.rows.len();
        let vy = nalgebra::DVector::from_fn(k, |i, _| self.corr[i].iter().map(|&(c, v)| v * y[c]).sum());
        let w = self
            .cap
            .solve(&vy)
            .ok_or(Error::Singular(rhs.len()))?;
        let mut x = y;
        for (r, zr) in self.z.iter().enumerate() {
            for (xi, zi) in x.iter_mut().zip(zr) {
                *xi -= w[r] * zi;
            }
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn random_band(n: usize, kl: usize, ku: usize, seed: u64) -> (BandMatrix, DMatrix<f64>) {
        let mut s = seed;
        let mut rnd = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let mut b = BandMatrix::zeros(n, kl, ku);
        let mut d = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                // weak diagonal so pivoting actually happens
                let v = rnd() + if i == j { 0.05 } else { 0.0 };
                b.add(i, j, v).unwrap();
                d[(i, j)] = v;
            }
        }
        (b, d)
    }

    #[test]
    fn band_lu_matches_dense() {
        let n = 40;
        let (b, d) = random_band(n, 3, 2, 7);
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let x = b.factor().unwrap().solve(&rhs);
        let r = &d * DVector::from_vec(x) - DVector::from_vec(rhs);
        assert!(r.amax() < 1e-10, "{}", r.amax());
    }

    #[test]
    fn corner_correction_matches_dense() {
        let n = 30;
        let (b, mut d) = random_band(n, 2, 2, 11);
        let corr = vec![vec![(n - 1, -1.0)], vec![(0, 0.7), (1, -0.3)]];
        let rows = vec![0, n - 1];
        for (r, c) in rows.iter().zip(&corr) {
            for &(j, v) in c {
                d[(*r, j)] += v;
            }
        }
        let rhs: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 * 0.1).collect();
        let x = CornerSystem::new(b, rows, corr).unwrap().solve(&rhs).unwrap();
        let r = &d * DVector::from_vec(x) - DVector::from_vec(rhs);
        assert!(r.amax() < 1e-10, "{}", r.amax());
    }

    #[test]
    fn zero_column_is_singular() {
        let mut b = BandMatrix::zeros(5, 1, 1);
        for i in 0..5 {
            if i != 2 {
                b.add(i, i, 1.0).unwrap();
            }
        }
        assert!(matches!(b.factor(), Err(Error::Singular(2))));
    }

    #[test]
    fn out_of_band_rejected() {
        let mut b = BandMatrix::zeros(5, 1, 1);
        assert!(b.add(0, 3, 1.0).is_err());
    }
}
