use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    n: usize,
    // row-major, upper triangle unused
    l: Vec<T>,
    // Lᵀ row-major, lower triangle unused
    lt: Vec<T>,
}

impl<T: Scalar> Cholesky<T> {
    /// Factors a symmetric positive definite matrix, reading its lower triangle.
    pub fn new(a: ArrayView2<T>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Shape(format!(
                "cholesky needs a square matrix, got {}x{}",
                n,
                a.ncols()
            )));
        }
        let mut l = vec![T::zero(); n * n];
        for i in 0..n {
            for j in 0..=i {
                l[i * n + j] = a[[i, j]];
            }
        }
        for j in 0..n {
            let row_j = &l[j * n..j * n + j];
            let mut diag = l[j * n + j];
            for x in row_j {
                diag -= *x * *x;
            }
            if !(diag > T::zero()) {
                return Err(Error::NotPositiveDefinite);
            }
            let diag = diag.sqrt();
            l[j * n + j] = diag;
            for i in (j + 1)..n {
                let mut s = l[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / diag;
            }
        }
        let mut lt = vec![T::zero(); n * n];
        for i in 0..n {
            for j in 0..=i {
                lt[j * n + i] = l[i * n + j];
            }
        }
        Ok(Self { n, l, lt })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// `log det A = 2 Σ log L_ii`.
    pub fn logdet(&self) -> T {
        let two = T::lit(2.0);
        (0..self.n).map(|i| self.l[i * self.n + i].ln()).sum::<T>() * two
    }

    /// `L⁻¹`, lower triangular.
    fn inverse_factor(&self) -> Array2<T> {
        let n = self.n;
        let mut inv = Array2::zeros((n, n));
        for j in 0..n {
            inv[[j, j]] = T::one() / self.l[j * n + j];
            for i in (j + 1)..n {
                let row = &self.l[i * n + j..i * n + i];
                let mut s = T::zero();
                for (lk, k) in row.iter().zip(j..i) {
                    s -= *lk * inv[[k, j]];
                }
                inv[[i, j]] = s / self.l[i * n + i];
            }
        }
        inv
    }

    /// Solves `A X = B` in place for every column of `B`.
    pub fn solve_inplace(&self, b: &mut Array2<T>) -> Result<()> {
        let n = self.n;
        if b.nrows() != n {
            return Err(Error::Shape(format!(
                "right-hand side has {} rows, factor is {}x{}",
                b.nrows(),
                n,
                n
            )));
        }
        if b.ncols() >= n && n > 0 {
            // wide right-hand sides: two triangular products
            let inv = self.inverse_factor();
            let y = inv.dot(&*b);
            *b = inv.t().dot(&y);
            return Ok(());
        }
        let mut col = vec![T::zero(); n];
        for mut c in b.columns_mut() {
            for (dst, src) in col.iter_mut().zip(c.iter()) {
                *dst = *src;
            }
            // L y = b
            for i in 0..n {
                let row = &self.l[i * n..i * n + i];
                let mut s = col[i];
                for (lk, yk) in row.iter().zip(&col[..i]) {
                    s -= *lk * *yk;
                }
                col[i] = s / self.l[i * n + i];
            }
            // Lᵀ x = y
            for i in (0..n).rev() {
                let row = &self.lt[i * n + i + 1..(i + 1) * n];
                let mut s = col[i];
                for (lk, xk) in row.iter().zip(&col[i + 1..]) {
                    s -= *lk * *xk;
                }
                col[i] = s / self.l[i * n + i];
            }
            for (dst, src) in c.iter_mut().zip(&col) {
                *dst = *src;
            }
        }
        Ok(())
    }

    pub fn solve(&self, b: &Array2<T>) -> Result<Array2<T>> {
        let mut x = b.clone();
        self.solve_inplace(&mut x)?;
        Ok(x)
    }
}
