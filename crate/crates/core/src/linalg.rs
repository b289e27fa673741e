//! Dense complex linear algebra: matrix exponential, linear solves, and a
//! Hermitian eigensolver.
//!
//! The joint spaces in this crate stay small (≤ 1296 states), so everything
//! here is plain dense arithmetic on `ndarray` matrices with no external
//! BLAS/LAPACK backend.

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = Array2<Complex64>;

#[inline]
fn c(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// Max column sum of absolute values (induced 1-norm).
pub fn one_norm(a: &CMatrix) -> f64 {
    let mut max = 0.0_f64;
    for j in 0..a.ncols() {
        let s: f64 = a.column(j).iter().map(|z| z.norm()).sum();
        max = max.max(s);
    }
    max
}

/// Largest absolute entry of `a - b`.
pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

pub fn identity(n: usize) -> CMatrix {
    Array2::from_diag_elem(n, c(1.0))
}

/// Padé(13,13) numerator coefficients (Higham 2005, scaling-and-squaring).
const PADE13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];

const THETA13: f64 = 5.371_920_351_148_152;

/// Matrix exponential by scaling-and-squaring with a Padé(13) approximant.
pub fn expm(a: &CMatrix) -> Result<CMatrix> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::argument("expm requires a square matrix"));
    }
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::numeric("expm input has non-finite entries"));
    }
    if n == 0 {
        return Ok(Array2::zeros((0, 0)));
    }
    if n == 1 {
        let mut out = Array2::zeros((1, 1));
        out[[0, 0]] = a[[0, 0]].exp();
        return Ok(out);
    }

    let norm = one_norm(a);
    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as u32
    } else {
        0
    };
    let scale = c(0.5_f64.powi(squarings as i32));
    let a1 = a * scale;

    let a2 = a1.dot(&a1);
    let a4 = a2.dot(&a2);
    let a6 = a2.dot(&a4);
    let eye = identity(n);

    let w1 = &a6 * c(PADE13[13]) + &a4 * c(PADE13[11]) + &a2 * c(PADE13[9]);
    let w2 = w1.dot(&a6)
        + &a6 * c(PADE13[7])
        + &a4 * c(PADE13[5])
        + &a2 * c(PADE13[3])
        + &eye * c(PADE13[1]);
    let u = a1.dot(&w2);

    let v1 = &a6 * c(PADE13[12]) + &a4 * c(PADE13[10]) + &a2 * c(PADE13[8]);
    let v = v1.dot(&a6)
        + &a6 * c(PADE13[6])
        + &a4 * c(PADE13[4])
        + &a2 * c(PADE13[2])
        + &eye * c(PADE13[0]);

    // exp(A1) ≈ (V - U)^{-1} (V + U)
    let mut r = solve(&(&v - &u), &(&v + &u))?;
    for _ in 0..squarings {
        r = r.dot(&r);
    }
    Ok(r)
}

/// Solve A X = B by Gaussian elimination with partial pivoting.
pub fn solve(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::argument("solve: dimension mismatch"));
    }
    let m = b.ncols();
    let mut lu = a.clone();
    let mut x = b.clone();

    for col in 0..n {
        let mut piv = col;
        let mut piv_val = lu[[col, col]].norm();
        for row in (col + 1)..n {
            let v = lu[[row, col]].norm();
            if v > piv_val {
                piv = row;
                piv_val = v;
            }
        }
        if piv_val < 1e-300 {
            return Err(Error::numeric("solve: singular matrix"));
        }
        if piv != col {
            for j in 0..n {
                lu.swap([col, j], [piv, j]);
            }
            for j in 0..m {
                x.swap([col, j], [piv, j]);
            }
        }
        let d = lu[[col, col]];
        for row in (col + 1)..n {
            let f = lu[[row, col]] / d;
            if f.norm() == 0.0 {
                continue;
            }
            for j in col..n {
                let v = lu[[col, j]];
                lu[[row, j]] -= f * v;
            }
            for j in 0..m {
                let v = x[[col, j]];
                x[[row, j]] -= f * v;
            }
        }
    }
    for col in (0..n).rev() {
        let d = lu[[col, col]];
        for j in 0..m {
            let mut s = x[[col, j]];
            for k in (col + 1)..n {
                s -= lu[[col, k]] * x[[k, j]];
            }
            x[[col, j]] = s / d;
        }
    }
    Ok(x)
}

/// Eigenvalues of a Hermitian matrix by cyclic Jacobi with complex rotations.
///
/// Only the spectrum is returned; that is all the trace-distance computation
/// needs. The input is symmetrized defensively so tiny anti-Hermitian
/// round-off in accumulated density matrices cannot bias the sweep.
pub fn hermitian_eigenvalues(a: &CMatrix) -> Result<Vec<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::argument("hermitian_eigenvalues: not square"));
    }
    let herm_defect = a
        .iter()
        .zip(a.t().iter().map(|z| z.conj()))
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max);
    if herm_defect > 1e-8 * (1.0 + one_norm(a)) {
        return Err(Error::numeric("hermitian_eigenvalues: input not Hermitian"));
    }
    let mut m: CMatrix = (a + &a.t().mapv(|z| z.conj())) * c(0.5);

    let scale = one_norm(&m).max(1e-300);
    let tol = 1e-14 * scale;
    let max_sweeps = 50;

    for _ in 0..max_sweeps {
        let mut off = 0.0_f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(m[[p, q]].norm());
            }
        }
        if off < tol {
            return Ok((0..n).map(|i| m[[i, i]].re).collect());
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let g = m[[p, q]];
                let gn = g.norm();
                if gn <= tol * 1e-2 {
                    continue;
                }
                // Phase out the pivot, then a real Jacobi rotation.
                let w = g / gn;
                let alpha = m[[p, p]].re;
                let beta = m[[q, q]].re;
                let tau = (beta - alpha) / (2.0 * gn);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = t * cs;

                // J = diag(w,1) · [[c, s], [-s, c]] acting on columns (p,q).
                let jpp = w * cs;
                let jpq = w * sn;
                let jqp = c(-sn);
                let jqq = c(cs);
                for k in 0..n {
                    let mp = m[[k, p]];
                    let mq = m[[k, q]];
                    m[[k, p]] = mp * jpp + mq * jqp;
                    m[[k, q]] = mp * jpq + mq * jqq;
                }
                for k in 0..n {
                    let mp = m[[p, k]];
                    let mq = m[[q, k]];
                    m[[p, k]] = jpp.conj() * mp + jqp.conj() * mq;
                    m[[q, k]] = jpq.conj() * mp + jqq.conj() * mq;
                }
            }
        }
    }
    Err(Error::numeric(
        "hermitian_eigenvalues: Jacobi failed to converge in 50 sweeps",
    ))
}
