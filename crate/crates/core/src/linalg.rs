//! Dense symmetric eigenvalue routines.
//!
//! Everything here works on row-major `&[f64]` buffers. The cyclic Jacobi
//! method is accurate and simple at the matrix sizes used in this crate
//! (n <= 100); no sparse or blocked path is provided.

use crate::error::{Error, Result};

/// Maximum allowed asymmetry `|a_ij - a_ji|` before a matrix is rejected.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Check symmetry of a dense n x n matrix, returning the worst deviation.
pub fn symmetry_deviation(a: &[f64], n: usize) -> f64 {
    assert_eq!(a.len(), n * n, "matrix buffer must be n*n");
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a[i * n + j] - a[j * n + i]).abs());
        }
    }
    worst
}

fn require_symmetric(a: &[f64], n: usize) -> Result<()> {
    let dev = symmetry_deviation(a, n);
    if dev > SYMMETRY_TOL {
        return Err(Error::AsymmetricMatrix { deviation: dev });
    }
    Ok(())
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues(a: &[f64], n: usize) -> Result<Vec<f64>> {
    require_symmetric(a, n)?;
    let mut m = a.to_vec();
    // Symmetrize exactly so rotations preserve symmetry bit-for-bit.
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[i * n + j] + m[j * n + i]);
            m[i * n + j] = v;
            m[j * n + i] = v;
        }
    }
    let mut scale = 0.0f64;
    for v in &m {
        scale = scale.max(v.abs());
    }
    if scale == 0.0 {
        return Ok(vec![0.0; n]);
    }

    for _sweep in 0..64 {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[i * n + j] * m[i * n + j];
            }
        }
        if off.sqrt() <= 1e-15 * scale * n as f64 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                // Stable tangent of the rotation angle.
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }

    let mut eig: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    eig.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok(eig)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &[f64], n: usize) -> Result<f64> {
    Ok(symmetric_eigenvalues(a, n)?[0])
}

/// Numerical rank: eigenvalues (in magnitude) above `tol` times the largest.
pub fn rank_from_eigenvalues(eig: &[f64], tol: f64) -> usize {
    let largest = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if largest == 0.0 {
        return 0;
    }
    eig.iter().filter(|v| v.abs() > tol * largest).count()
}

/// Dot product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm.
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
