//! Banded LU factorisation with partial pivoting.
//!
//! Row `i` stores columns `i - kl ..= i + kl + ku`; the extra `kl` columns
//! hold fill-in created by row exchanges.

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct BandedMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        BandedMatrix { n, kl, ku, width, data: vec![0.0; n * width] }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.kl + self.ku);
        i * self.width + (j + self.kl - i)
    }

    /// Adds `w` to entry `(i, j)`; the entry must lie within the band.
    pub fn add(&mut self, i: usize, j: usize, w: f64) -> Result<()> {
        if j + self.kl < i || j > i + self.ku {
            return Err(Error::LinearSolve(format!("entry ({i}, {j}) outside band ({}, {})", self.kl, self.ku)));
        }
        let k = self.index(i, j);
        self.data[k] += w;
        Ok(())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.kl < i || j > i + self.kl + self.ku {
            0.0
        } else {
            self.data[self.index(i, j)]
        }
    }

    /// Factorises in place and returns the solver.
    pub fn factorize(mut self) -> Result<BandedLu> {
        let n = self.n;
        let (kl, ku) = (self.kl, self.ku);
        let mut pivots = vec![0usize; n];
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let last_col = (k + kl + ku).min(n - 1);
            let mut p = k;
            let mut best = self.get(k, k).abs();
            for i in k + 1..=last_row {
                let v = self.get(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(Error::LinearSolve(format!("singular pivot in column {k}")));
            }
            pivots[k] = p;
            if p != k {
                for j in k..=last_col {
                    let (a, b) = (self.index(k, j), self.index(p, j));
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.index(k, k)];
            let row_k = self.index(k, k);
            for i in k + 1..=last_row {
                let ik = self.index(i, k);
                let l = self.data[ik] / pivot;
                self.data[ik] = l;
                if l == 0.0 {
                    continue;
                }
                let base_i = self.index(i, k + 1);
                let base_k = row_k + 1;
                for t in 0..last_col - k {
                    self.data[base_i + t] -= l * self.data[base_k + t];
                }
            }
        }
        Ok(BandedLu { m: self, pivots })
    }
}

#[derive(Clone, Debug)]
pub struct BandedLu {
    m: BandedMatrix,
    pivots: Vec<usize>,
}

impl BandedLu {
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let m = &self.m;
        let n = m.n;
        let mut b = rhs.to_vec();
        for k in 0..n {
            b.swap(k, self.pivots[k]);
            let bk = b[k];
            if bk != 0.0 {
                for i in k + 1..=(k + m.kl).min(n.saturating_sub(1)) {
                    b[i] -= m.data[m.index(i, k)] * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let last_col = (k + m.kl + m.ku).min(n - 1);
            let mut s = b[k];
            let base = m.index(k, k);
            for (t, j) in (k + 1..=last_col).enumerate() {
                s -= m.data[base + 1 + t] * b[j];
            }
            b[k] = s / m.data[base];
        }
        b
    }
}
