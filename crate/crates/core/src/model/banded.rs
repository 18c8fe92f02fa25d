//! Symmetric positive-definite banded storage and Cholesky factorization.
//!
//! Rows are stored as their lower band: entry `(i, i - d)` lives at
//! `data[i * (bw + 1) + d]` for `0 ≤ d ≤ bw`.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("non-positive pivot {pivot:e} at row {row}")]
pub struct NotPositiveDefinite {
    pub row: usize,
    pub pivot: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandedSpd {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandedSpd {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    fn slot(&self, i: usize, j: usize) -> usize {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        let d = r - c;
        assert!(d <= self.bw, "entry ({i}, {j}) outside band {}", self.bw);
        r * (self.bw + 1) + d
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        if r - c > self.bw {
            return 0.0;
        }
        self.data[self.slot(i, j)]
    }

    /// Adds `v` to the symmetric pair `(i, j)`/`(j, i)` (once on the diagonal).
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let base = i * (self.bw + 1);
            y[i] += self.data[base] * x[i];
            for d in 1..=self.bw.min(i) {
                let a = self.data[base + d];
                if a != 0.0 {
                    y[i] += a * x[i - d];
                    y[i - d] += a * x[i];
                }
            }
        }
        y
    }

    pub fn factor(&self) -> Result<BandedCholesky, NotPositiveDefinite> {
        let w = self.bw + 1;
        let mut l = self.data.clone();
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            for j in lo..=i {
                // L[i][j] = (A[i][j] - Σ_{k<j} L[i][k] L[j][k]) / L[j][j]
                let mut sum = l[i * w + (i - j)];
                let k0 = lo.max(j.saturating_sub(self.bw));
                for k in k0..j {
                    sum -= l[i * w + (i - k)] * l[j * w + (j - k)];
                }
                if j == i {
                    if !(sum > 0.0) || !sum.is_finite() {
                        return Err(NotPositiveDefinite { row: i, pivot: sum });
                    }
                    l[i * w] = sum.sqrt();
                } else {
                    l[i * w + (i - j)] = sum / l[j * w];
                }
            }
        }
        Ok(BandedCholesky {
            n: self.n,
            bw: self.bw,
            l,
        })
    }
}

#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

impl BandedCholesky {
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let w = self.bw + 1;
        for i in 0..self.n {
            let mut s = x[i];
            for k in i.saturating_sub(self.bw)..i {
                s -= self.l[i * w + (i - k)] * x[k];
            }
            x[i] = s / self.l[i * w];
        }
        for i in (0..self.n).rev() {
            let mut s = x[i];
            for k in (i + 1)..(i + 1 + self.bw).min(self.n) {
                s -= self.l[k * w + (k - i)] * x[k];
            }
            x[i] = s / self.l[i * w];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}
