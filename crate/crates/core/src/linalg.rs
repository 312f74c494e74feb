//! Dense symmetric positive-definite solve used by the RBF fit.

use crate::error::{Error, Result};
use crate::real::Real;

/// Row-major square matrix.
#[derive(Clone, Debug)]
pub(crate) struct SquareMatrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Real> SquareMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![T::zero(); n * n],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.n + j] = v;
    }

    /// In-place Cholesky factorisation `A = L Lᵀ` followed by two triangular
    /// solves. Pivots below `n · ε · max(diag)` are reported as singular.
    pub fn cholesky_solve(mut self, rhs: &[T]) -> Result<Vec<T>> {
        let n = self.n;
        let max_diag = (0..n).map(|i| self.get(i, i).abs()).fold(T::zero(), T::max);
        let floor = max_diag * T::epsilon() * T::from_count(n.max(1));
        for j in 0..n {
            let mut diag = self.get(j, j);
            for k in 0..j {
                let l = self.get(j, k);
                diag = diag - l * l;
            }
            if !(diag > floor) {
                return Err(Error::IllConditioned(format!(
                    "pivot {j} is {diag} (threshold {floor})"
                )));
            }
            let ljj = diag.sqrt();
            self.set(j, j, ljj);
            for i in (j + 1)..n {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s = s - self.get(i, k) * self.get(j, k);
                }
                self.set(i, j, s / ljj);
            }
        }
        let mut y = rhs.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s = s - self.get(i, k) * y[k];
            }
            y[i] = s / self.get(i, i);
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s = s - self.get(k, i) * y[k];
            }
            y[i] = s / self.get(i, i);
        }
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_spd_system() {
        let mut a = SquareMatrix::<f64>::zeros(3);
        let rows = [[4.0, 2.0, 0.6], [2.0, 5.0, 1.0], [0.6, 1.0, 3.0]];
        for (i, r) in rows.iter().enumerate() {
            for (j, &v) in r.iter().enumerate() {
                a.set(i, j, v);
            }
        }
        let x = [1.0, -2.0, 0.5];
        let b: Vec<f64> = rows.iter().map(|r| r.iter().zip(&x).map(|(a, b)| a * b).sum()).collect();
        let sol = a.cholesky_solve(&b).unwrap();
        for (s, e) in sol.iter().zip(&x) {
            assert!((s - e).abs() < 1e-12);
        }
    }

    #[test]
    fn flags_singular() {
        let mut a = SquareMatrix::<f64>::zeros(2);
        a.set(0, 0, 1.0);
        a.set(0, 1, 1.0);
        a.set(1, 0, 1.0);
        a.set(1, 1, 1.0);
        assert!(matches!(a.cholesky_solve(&[1.0, 1.0]), Err(Error::IllConditioned(_))));
    }
}
