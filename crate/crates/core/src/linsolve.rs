//! Matrix-free preconditioned conjugate gradients for symmetric positive-definite systems.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgOptions {
    /// Target for `||b - A x|| / ||b||`.
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions {
            rel_tol: 1e-8,
            max_iter: 20_000,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CgReport {
    pub iterations: usize,
    pub rel_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = b` starting from the contents of `x`.
///
/// `apply(v, out)` writes `A v` into `out`; `inv_diag` is the Jacobi
/// preconditioner. Starting from `x0`, every iterate lowers the quadratic
/// `x'Ax/2 - b'x`, so the result is never worse than the initial guess.
pub fn conjugate_gradient(
    apply: impl Fn(&[f64], &mut [f64]),
    inv_diag: &[f64],
    b: &[f64],
    x: &mut [f64],
    opts: CgOptions,
) -> Result<CgReport> {
    let n = b.len();
    assert_eq!(x.len(), n);
    assert_eq!(inv_diag.len(), n);
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        x.fill(0.0);
        return Ok(CgReport {
            iterations: 0,
            rel_residual: 0.0,
        });
    }

    let mut ax = vec![0.0; n];
    apply(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut z: Vec<f64> = r.iter().zip(inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];

    let mut rel = dot(&r, &r).sqrt() / b_norm;
    for it in 0..opts.max_iter {
        if rel <= opts.rel_tol {
            return Ok(CgReport {
                iterations: it,
                rel_residual: rel,
            });
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        rel = dot(&r, &r).sqrt() / b_norm;
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if rel <= opts.rel_tol {
        return Ok(CgReport {
            iterations: opts.max_iter,
            rel_residual: rel,
        });
    }
    Err(Error::NotConverged {
        solver: "conjugate gradient",
        iterations: opts.max_iter,
        residual: rel,
    })
}
