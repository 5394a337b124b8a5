//! Symmetric positive definite band matrices and their Cholesky factors.
//!
//! Row `i` stores the entries `j in [i - bw, i]` of the lower triangle. The
//! factorization and the triangular solves run in a fixed order, so results
//! are bitwise reproducible.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub(crate) struct BandMatrix {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub(crate) fn zeros(n: usize, bw: usize) -> Self {
        BandMatrix {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (j + self.bw - i)
    }

    /// Add to the lower-triangle entry `(i, j)`, `j <= i`.
    pub(crate) fn add(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    /// In-place Cholesky factorization `A = L L^T`.
    pub(crate) fn cholesky(mut self) -> Result<CholeskyBand> {
        let (n, bw) = (self.n, self.bw);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let klo = lo.max(j.saturating_sub(bw));
                let mut sum = self.data[self.slot(i, j)];
                for k in klo..j {
                    sum -= self.data[self.slot(i, k)] * self.data[self.slot(j, k)];
                }
                if i == j {
                    if !(sum > 0.0) || !sum.is_finite() {
                        return Err(Error::LinearSolve {
                            reason: format!("non-positive pivot at row {i}"),
                            residual: f64::NAN,
                        });
                    }
                    let s = self.slot(i, i);
                    self.data[s] = sum.sqrt();
                } else {
                    let s = self.slot(i, j);
                    self.data[s] = sum / self.data[self.slot(j, j)];
                }
            }
        }
        Ok(CholeskyBand { l: self })
    }
}

#[derive(Debug, Clone)]
pub(crate) struct CholeskyBand {
    l: BandMatrix,
}

impl CholeskyBand {
    pub(crate) fn solve_in_place(&self, x: &mut [f64]) {
        let l = &self.l;
        let (n, bw) = (l.n, l.bw);
        assert_eq!(x.len(), n);
        for i in 0..n {
            let mut s = x[i];
            for k in i.saturating_sub(bw)..i {
                s -= l.data[l.slot(i, k)] * x[k];
            }
            x[i] = s / l.data[l.slot(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n.min(i + bw + 1) {
                s -= l.data[l.slot(k, i)] * x[k];
            }
            x[i] = s / l.data[l.slot(i, i)];
        }
    }
}
