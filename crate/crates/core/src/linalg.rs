//! Banded symmetric matrices and their Cholesky factorization.

use nalgebra::DMatrix;

use crate::error::{LsError, Result};

/// Symmetric matrix stored as its lower band.
///
/// Entry `(i, j)` with `i - bw <= j <= i` lives at `data[i * (bw + 1) + (j + bw - i)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedSym {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandedSym {
    pub fn zeros(n: usize, bw: usize) -> Self {
        let bw = bw.min(n.saturating_sub(1));
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            None
        } else {
            Some(i * (self.bw + 1) + (j + self.bw - i))
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |s| self.data[s])
    }

    /// Add `v` to entry `(i, j)`; `(i, j)` must lie within the band.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j).expect("entry outside the declared bandwidth");
        self.data[s] += v;
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            for j in lo..=i {
                let a = self.get(i, j);
                y[i] += a * x[j];
                if j != i {
                    y[j] += a * x[i];
                }
            }
        }
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }
}

/// `L L'` factor of a banded symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    /// Lower band of `L`, same layout as [`BandedSym`].
    l: Vec<f64>,
    min_pivot: f64,
}

impl BandedCholesky {
    /// Factor `a`. Fails with [`LsError::RankDeficient`] when a pivot drops
    /// below `rel_tol * trace(a) / n`.
    pub fn factor(a: &BandedSym, rel_tol: f64) -> Result<Self> {
        let n = a.n;
        let bw = a.bw;
        let w = bw + 1;
        let threshold = if n == 0 { 0.0 } else { rel_tol * a.trace() / n as f64 };
        let mut l = a.data.clone();
        let mut min_pivot = f64::INFINITY;
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                // l[i][j] = (a[i][j] - sum_k l[i][k] l[j][k]) / l[j][j]
                let klo = lo.max(j.saturating_sub(bw));
                let mut s = l[i * w + (j + bw - i)];
                for k in klo..j {
                    s -= l[i * w + (k + bw - i)] * l[j * w + (k + bw - j)];
                }
                if j == i {
                    min_pivot = min_pivot.min(s);
                    if !(s > threshold) || !(s > 0.0) {
                        return Err(LsError::RankDeficient {
                            column: i,
                            pivot: s,
                            threshold,
                        });
                    }
                    l[i * w + bw] = s.sqrt();
                } else {
                    l[i * w + (j + bw - i)] = s / l[j * w + bw];
                }
            }
        }
        Ok(Self { n, bw, l, min_pivot })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn min_pivot(&self) -> f64 {
        self.min_pivot
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.l[i * (self.bw + 1) + (j + self.bw - i)]
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        let bw = self.bw;
        for i in 0..n {
            let mut s = b[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.at(i, k) * b[k];
            }
            b[i] = s / self.at(i, i);
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in (i + 1)..(i + bw + 1).min(n) {
                s -= self.at(k, i) * b[k];
            }
            b[i] = s / self.at(i, i);
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Solve for every column of `b`.
    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = b.clone();
        for mut col in out.column_iter_mut() {
            let mut v: Vec<f64> = col.iter().copied().collect();
            self.solve_in_place(&mut v);
            col.copy_from_slice(&v);
        }
        out
    }
}

/// Symmetric square root with negative eigenvalues clamped to zero.
pub fn psd_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = a.clone().symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    v * DMatrix::from_diagonal(&vals) * v.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_banded(n: usize, bw: usize, seed: u64) -> BandedSym {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = BandedSym::zeros(n, bw);
        for i in 0..n {
            for j in i.saturating_sub(bw)..i {
                a.add(i, j, rng.random_range(-1.0..1.0));
            }
            a.add(i, i, 2.0 * bw as f64 + 1.0 + rng.random::<f64>());
        }
        a
    }

    #[test]
    fn solve_matches_dense() {
        for (n, bw) in [(1, 0), (5, 1), (20, 3), (40, 11), (7, 10)] {
            let a = random_banded(n, bw, n as u64);
            let chol = BandedCholesky::factor(&a, 1e-10).unwrap();
            let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
            let x = chol.solve(&b);
            let dense = a.to_dense();
            let xd = dense
                .clone()
                .cholesky()
                .unwrap()
                .solve(&nalgebra::DVector::from_vec(b.clone()));
            for i in 0..n {
                assert!((x[i] - xd[i]).abs() < 1e-12, "n={n} bw={bw}");
            }
            let back = a.matvec(&x);
            for i in 0..n {
                assert!((back[i] - b[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn singular_is_rank_deficient() {
        let mut a = BandedSym::zeros(3, 1);
        a.add(0, 0, 1.0);
        a.add(2, 2, 1.0);
        let err = BandedCholesky::factor(&a, 1e-10).unwrap_err();
        assert!(matches!(err, LsError::RankDeficient { column: 1, .. }));
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 2.0, 1.0, 0.0, 1.0, 2.0]);
        let r = psd_sqrt(&m);
        assert!((&r * &r - &m).abs().max() < 1e-12);
        // rank one: v v'
        let v = nalgebra::DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let m = &v * v.transpose();
        let r = psd_sqrt(&m);
        assert!((&r * &r - &m).abs().max() < 1e-10);
    }
}
