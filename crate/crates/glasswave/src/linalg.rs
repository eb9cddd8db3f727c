//! Small dense complex linear algebra used by the beamformer designs.
//!
//! Array apertures are a handful of microphones, so plain LU with partial
//! pivoting and a Jacobi eigensolver are enough; no LAPACK backend needed.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Conjugated dot product `a^H b`.
pub fn cdot(a: ArrayView1<Complex64>, b: ArrayView1<Complex64>) -> Complex64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

/// Squared Euclidean norm of a complex vector.
pub fn norm_sq(a: ArrayView1<Complex64>) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum()
}

pub fn mat_vec(m: ArrayView2<Complex64>, v: ArrayView1<Complex64>) -> Array1<Complex64> {
    let n = m.nrows();
    let mut out = Array1::zeros(n);
    for i in 0..n {
        let mut acc = Complex64::ZERO;
        for j in 0..m.ncols() {
            acc += m[(i, j)] * v[j];
        }
        out[i] = acc;
    }
    out
}

/// Quadratic form `h^H A h` (real for Hermitian `A`).
pub fn quad_form(a: ArrayView2<Complex64>, h: ArrayView1<Complex64>) -> f64 {
    cdot(h, mat_vec(a, h).view()).re
}

/// Adds `loading * trace(A)/n` to the diagonal in place.
pub fn diagonal_load(a: &mut Array2<Complex64>, loading: f64) {
    let n = a.nrows();
    let trace: f64 = (0..n).map(|i| a[(i, i)].re).sum();
    let delta = loading * trace.max(f64::MIN_POSITIVE) / n as f64;
    for i in 0..n {
        a[(i, i)] += Complex64::new(delta, 0.0);
    }
}

/// Solves `A x = b` via LU with partial pivoting.
pub fn solve(a: ArrayView2<Complex64>, b: ArrayView1<Complex64>) -> Result<Array1<Complex64>> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(Error::ShapeMismatch {
            expected: format!("{n}x{n} matrix with length-{n} rhs"),
            got: format!("{}x{} with length-{}", a.nrows(), a.ncols(), b.len()),
        });
    }
    let mut lu = a.to_owned();
    let mut x = b.to_owned();
    for col in 0..n {
        // Pivot on the largest remaining magnitude in this column.
        let mut pivot = col;
        let mut best = lu[(col, col)].norm();
        for row in col + 1..n {
            let mag = lu[(row, col)].norm();
            if mag > best {
                best = mag;
                pivot = row;
            }
        }
        if best < 1e-300 {
            return Err(Error::NumericalFailure(format!(
                "singular matrix at column {col}"
            )));
        }
        if pivot != col {
            for j in 0..n {
                let tmp = lu[(col, j)];
                lu[(col, j)] = lu[(pivot, j)];
                lu[(pivot, j)] = tmp;
            }
            x.swap(col, pivot);
        }
        let inv = Complex64::new(1.0, 0.0) / lu[(col, col)];
        for row in col + 1..n {
            let factor = lu[(row, col)] * inv;
            lu[(row, col)] = factor;
            for j in col + 1..n {
                let sub = factor * lu[(col, j)];
                lu[(row, j)] -= sub;
            }
            let sub = factor * x[col];
            x[row] -= sub;
        }
    }
    for col in (0..n).rev() {
        x[col] /= lu[(col, col)];
        for row in 0..col {
            let sub = lu[(row, col)] * x[col];
            x[row] -= sub;
        }
    }
    Ok(x)
}

/// Eigenvalues of a Hermitian matrix, ascending.
///
/// Runs cyclic Jacobi on the real symmetric embedding `[[Re, -Im], [Im, Re]]`,
/// whose spectrum is that of the Hermitian matrix with every value doubled up.
pub fn hermitian_eigenvalues(a: ArrayView2<Complex64>) -> Vec<f64> {
    let n = a.nrows();
    let m = 2 * n;
    let mut s = vec![0.0f64; m * m];
    for i in 0..n {
        for j in 0..n {
            let v = a[(i, j)];
            s[i * m + j] = v.re;
            s[i * m + (n + j)] = -v.im;
            s[(n + i) * m + j] = v.im;
            s[(n + i) * m + (n + j)] = v.re;
        }
    }
    jacobi_symmetric(&mut s, m);
    let mut eig: Vec<f64> = (0..m).map(|i| s[i * m + i]).collect();
    eig.sort_by(|x, y| x.partial_cmp(y).unwrap());
    // Doubled spectrum: take every other value.
    eig.into_iter().step_by(2).collect()
}

fn jacobi_symmetric(s: &mut [f64], n: usize) {
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += s[i * n + j] * s[i * n + j];
            }
        }
        if off < 1e-24 {
            return;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = s[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = s[p * n + p];
                let aqq = s[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let skp = s[k * n + p];
                    let skq = s[k * n + q];
                    s[k * n + p] = c * skp - sn * skq;
                    s[k * n + q] = sn * skp + c * skq;
                }
                for k in 0..n {
                    let spk = s[p * n + k];
                    let sqk = s[q * n + k];
                    s[p * n + k] = c * spk - sn * sqk;
                    s[q * n + k] = sn * spk + c * sqk;
                }
            }
        }
    }
}
