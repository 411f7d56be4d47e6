//! Complex Schur factorization `A = Q T Q*` through LAPACK `zgees`.

use std::os::raw::{c_char, c_int};

use lapack_sys::__BindgenComplex;
use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Upper-triangular Schur factor stored row-major.
#[derive(Debug, Clone)]
pub struct SchurForm {
    n: usize,
    t: Vec<Complex64>,
}

impl SchurForm {
    pub fn new(a: &Array2<Complex64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Shape(format!("{}x{} is not square", n, a.ncols())));
        }
        if n == 0 {
            return Ok(Self { n, t: Vec::new() });
        }
        // column-major copy
        let mut buf: Vec<Complex64> = a.t().iter().copied().collect();
        let mut w = vec![Complex64::default(); n];
        let mut vs = vec![Complex64::default(); 1];
        let mut rwork = vec![0.0f64; n];
        let mut bwork = vec![0 as c_int; n];
        let (nn, lda, ldvs) = (n as c_int, n as c_int, 1 as c_int);
        let mut sdim: c_int = 0;
        let mut info: c_int = 0;
        let jobvs = b'N' as c_char;
        let sort = b'N' as c_char;

        let mut query = Complex64::default();
        let lwork: c_int = -1;
        // SAFETY: buffers have the sizes LAPACK expects for jobvs = 'N';
        // Complex64 and __BindgenComplex<f64> are both repr(C) {re, im}.
        unsafe {
            lapack_sys::zgees_(
                &jobvs, &sort, None, &nn,
                buf.as_mut_ptr() as *mut __BindgenComplex<f64>, &lda, &mut sdim,
                w.as_mut_ptr() as *mut __BindgenComplex<f64>,
                vs.as_mut_ptr() as *mut __BindgenComplex<f64>, &ldvs,
                &mut query as *mut Complex64 as *mut __BindgenComplex<f64>, &lwork,
                rwork.as_mut_ptr(), bwork.as_mut_ptr(), &mut info,
            );
        }
        if info != 0 {
            return Err(Error::Linalg(format!("zgees workspace query failed (info = {info})")));
        }
        let lwork = (query.re as c_int).max(2 * n as c_int);
        let mut work = vec![Complex64::default(); lwork as usize];
        unsafe {
            lapack_sys::zgees_(
                &jobvs, &sort, None, &nn,
                buf.as_mut_ptr() as *mut __BindgenComplex<f64>, &lda, &mut sdim,
                w.as_mut_ptr() as *mut __BindgenComplex<f64>,
                vs.as_mut_ptr() as *mut __BindgenComplex<f64>, &ldvs,
                work.as_mut_ptr() as *mut __BindgenComplex<f64>, &lwork,
                rwork.as_mut_ptr(), bwork.as_mut_ptr(), &mut info,
            );
        }
        if info != 0 {
            return Err(Error::Linalg(format!("zgees failed (info = {info})")));
        }
        let mut t = vec![Complex64::default(); n * n];
        for i in 0..n {
            for j in i..n {
                t[i * n + j] = buf[i + j * n];
            }
        }
        Ok(Self { n, t })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Eigenvalues (diagonal of `T`).
    pub fn eigenvalues(&self) -> Vec<Complex64> {
        (0..self.n).map(|i| self.t[i * self.n + i]).collect()
    }

    /// Solve `(T - z) w = y` in place.
    pub(crate) fn solve_shifted(&self, z: Complex64, y: &mut [Complex64]) {
        let n = self.n;
        for i in (0..n).rev() {
            let row = &self.t[i * n..(i + 1) * n];
            let mut acc = y[i];
            for j in i + 1..n {
                acc -= row[j] * y[j];
            }
            y[i] = acc / (row[i] - z);
        }
    }

    /// Solve `(T - z)* y = x` in place.
    pub(crate) fn solve_shifted_adjoint(&self, z: Complex64, x: &mut [Complex64]) {
        let n = self.n;
        for j in 0..n {
            let row = &self.t[j * n..(j + 1) * n];
            x[j] /= (row[j] - z).conj();
            let yj = x[j];
            for i in j + 1..n {
                x[i] -= row[i].conj() * yj;
            }
        }
    }

    /// `min |T_ii - z|`, an upper bound for the smallest singular value.
    pub(crate) fn diagonal_gap(&self, z: Complex64) -> f64 {
        (0..self.n)
            .map(|i| (self.t[i * self.n + i] - z).norm())
            .fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;

    fn sample(n: usize) -> Array2<Complex64> {
        Array2::from_shape_fn((n, n), |(i, j)| {
            Complex64::new(((i * 7 + j * 3) % 11) as f64 - 5.0, ((i + 2 * j) % 5) as f64 * 0.3)
        })
    }

    #[test]
    fn triangular_solves_invert() {
        let a = sample(12);
        let s = SchurForm::new(&a).unwrap();
        let z = Complex64::new(0.3, -0.7);
        let x = Array1::from_shape_fn(12, |i| Complex64::new(i as f64, 1.0));
        // build T explicitly
        let t = Array2::from_shape_fn((12, 12), |(i, j)| {
            s.t[i * 12 + j] - if i == j { z } else { Complex64::default() }
        });
        let mut w = x.to_vec();
        s.solve_shifted(z, &mut w);
        let back = t.dot(&Array1::from(w));
        assert!((&back - &x).iter().map(|v| v.norm()).fold(0.0, f64::max) < 1e-9);
        let mut y = x.to_vec();
        s.solve_shifted_adjoint(z, &mut y);
        let th = t.t().mapv(|v| v.conj());
        let back = th.dot(&Array1::from(y));
        assert!((&back - &x).iter().map(|v| v.norm()).fold(0.0, f64::max) < 1e-9);
    }

    #[test]
    fn trace_preserved() {
        let a = sample(20);
        let s = SchurForm::new(&a).unwrap();
        let tr: Complex64 = s.eigenvalues().iter().sum();
        let want: Complex64 = a.diag().iter().sum();
        assert!((tr - want).norm() < 1e-10);
    }
}
