//! Small dense linear algebra helpers: an LU solve for the tiny systems this
//! crate needs and a power-iteration spectral radius estimate.

use crate::{Error, Result};
use ndarray::{Array1, Array2};

/// LU factorization with partial pivoting, for small square systems.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: Array2<f64>,
    piv: Vec<usize>,
}

impl Lu {
    pub fn factor(a: &Array2<f64>) -> Result<Lu> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Integrity("LU requires a square matrix".into()));
        }
        let mut lu = a.clone();
        let mut piv = vec![0usize; n];
        for k in 0..n {
            let mut p = k;
            let mut best = lu[(k, k)].abs();
            for r in k + 1..n {
                let v = lu[(r, k)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(Error::Numerical("singular matrix in LU factorization".into()));
            }
            piv[k] = p;
            if p != k {
                for c in 0..n {
                    let tmp = lu[(k, c)];
                    lu[(k, c)] = lu[(p, c)];
                    lu[(p, c)] = tmp;
                }
            }
            let d = lu[(k, k)];
            for r in k + 1..n {
                let m = lu[(r, k)] / d;
                lu[(r, k)] = m;
                for c in k + 1..n {
                    lu[(r, c)] -= m * lu[(k, c)];
                }
            }
        }
        Ok(Lu { lu, piv })
    }

    /// Solve `A x = b` in place for each column of `b`.
    pub fn solve_mat(&self, b: &Array2<f64>) -> Array2<f64> {
        let n = self.lu.nrows();
        let m = b.ncols();
        let mut x = b.clone();
        // Apply the full row permutation first; the stored multipliers are
        // the post-pivoting ones.
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                for c in 0..m {
                    let tmp = x[(k, c)];
                    x[(k, c)] = x[(p, c)];
                    x[(p, c)] = tmp;
                }
            }
        }
        for k in 0..n {
            for r in k + 1..n {
                let f = self.lu[(r, k)];
                for c in 0..m {
                    x[(r, c)] -= f * x[(k, c)];
                }
            }
        }
        for k in (0..n).rev() {
            let d = self.lu[(k, k)];
            for c in 0..m {
                x[(k, c)] /= d;
            }
            for r in 0..k {
                let f = self.lu[(r, k)];
                for c in 0..m {
                    x[(r, c)] -= f * x[(k, c)];
                }
            }
        }
        x
    }

    pub fn solve_vec(&self, b: &Array1<f64>) -> Array1<f64> {
        let col = b.view().insert_axis(ndarray::Axis(1)).to_owned();
        let x = self.solve_mat(&col);
        x.column(0).to_owned()
    }
}

/// Solve a small square system directly.
pub fn solve(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    Ok(Lu::factor(a)?.solve_mat(b))
}

pub fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Dominant-eigenvalue magnitude via power iteration. Adequate for the
/// entrywise-positive reservoir matrices, whose Perron root dominates.
pub fn spectral_radius(a: &Array2<f64>, iters: usize) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut v = Array1::<f64>::from_elem(n, 1.0 / (n as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..iters {
        let w = a.dot(&v);
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm;
        v = w / norm;
    }
    lambda
}
