//! Symmetric positive definite banded matrices with an in-place Cholesky
//! factorization.

use crate::error::{Error, Result};

/// Lower band of a symmetric matrix: entry `(i, j)` with `0 <= i - j <= p`
/// is stored at `i * (p + 1) + (i - j)`.
#[derive(Debug, Clone)]
pub(crate) struct BandMatrix {
    n: usize,
    p: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, p: usize) -> Self {
        BandMatrix {
            n,
            p,
            data: vec![0.0; n * (p + 1)],
        }
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Adds `v` to the symmetric pair `(i, j)`, `(j, i)`.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        debug_assert!(r - c <= self.p, "entry ({r}, {c}) outside band {}", self.p);
        self.data[r * (self.p + 1) + (r - c)] += v;
    }

    pub fn set_identity_row(&mut self, i: usize) {
        let w = self.p + 1;
        for d in 0..=self.p.min(i) {
            self.data[i * w + d] = 0.0;
        }
        for r in i + 1..(i + self.p + 1).min(self.n) {
            self.data[r * w + (r - i)] = 0.0;
        }
        self.data[i * w] = 1.0;
    }

    /// Overwrites `self` with its Cholesky factor `L` (`A = L L^T`).
    pub fn factor(&mut self) -> Result<()> {
        let (n, p) = (self.n, self.p);
        let w = p + 1;
        for i in 0..n {
            let j0 = i.saturating_sub(p);
            for j in j0..=i {
                let k0 = j0.max(j.saturating_sub(p));
                // both rows are stored with increasing distance from the
                // diagonal, so the overlap k0..j is a pair of contiguous runs
                let len = j - k0;
                let a = &self.data[i * w + (i - j) + 1..i * w + (i - j) + 1 + len];
                let b = &self.data[j * w + 1..j * w + 1 + len];
                let sum = self.data[i * w + (i - j)] - dot(a, b);
                if i == j {
                    if !(sum > 0.0) || !sum.is_finite() {
                        return Err(Error::Numerical(format!(
                            "matrix not positive definite at row {i} (pivot {sum:e})"
                        )));
                    }
                    self.data[i * w] = sum.sqrt();
                } else {
                    self.data[i * w + (i - j)] = sum / self.data[j * w];
                }
            }
        }
        Ok(())
    }

    /// Solves `L L^T x = b` in place after [`factor`](Self::factor).
    pub fn solve(&self, b: &mut [f64]) {
        let (n, p) = (self.n, self.p);
        let w = p + 1;
        for i in 0..n {
            let mut s = b[i];
            for k in i.saturating_sub(p)..i {
                s -= self.data[i * w + (i - k)] * b[k];
            }
            b[i] = s / self.data[i * w];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for r in i + 1..(i + p + 1).min(n) {
                s -= self.data[r * w + (r - i)] * b[r];
            }
            b[i] = s / self.data[i * w];
        }
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(m: &BandMatrix) -> Vec<Vec<f64>> {
        let mut a = vec![vec![0.0; m.n]; m.n];
        for i in 0..m.n {
            for j in i.saturating_sub(m.p)..=i {
                let v = m.data[i * (m.p + 1) + (i - j)];
                a[i][j] = v;
                a[j][i] = v;
            }
        }
        a
    }

    #[test]
    fn solves_banded_spd_system() {
        let n = 30;
        let p = 4;
        let mut m = BandMatrix::zeros(n, p);
        for i in 0..n {
            m.add(i, i, 10.0 + i as f64 * 0.1);
            for d in 1..=p.min(i) {
                m.add(i, i - d, 1.0 / (d as f64 + (i % 3) as f64));
            }
        }
        let a = dense(&m);
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut b: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| a[i][j] * x_true[j]).sum())
            .collect();
        m.factor().unwrap();
        m.solve(&mut b);
        for (x, y) in b.iter().zip(&x_true) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_rows_decouple() {
        let mut m = BandMatrix::zeros(5, 1);
        for i in 0..5 {
            m.add(i, i, 2.0);
            if i > 0 {
                m.add(i, i - 1, -1.0);
            }
        }
        m.set_identity_row(0);
        m.set_identity_row(4);
        let mut b = vec![0.0, 1.0, 0.0, 1.0, 0.0];
        m.factor().unwrap();
        m.solve(&mut b);
        assert_eq!(b[0], 0.0);
        assert_eq!(b[4], 0.0);
        assert!((b[1] - 1.0).abs() < 1e-14 && (b[2] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let mut m = BandMatrix::zeros(2, 1);
        m.add(0, 0, 1.0);
        m.add(1, 1, 1.0);
        m.add(1, 0, 2.0);
        assert!(m.factor().is_err());
    }
}
