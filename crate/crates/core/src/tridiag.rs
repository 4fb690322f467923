//! Symmetric tridiagonal eigenproblems.
//!
//! All sector Hamiltonians in this crate are real symmetric tridiagonal in
//! the occupation basis, so a single QL sweep with implicit Wilkinson
//! shifts covers every spectral need: spectra, Heisenberg evolution and
//! Gauss quadrature rules derived from Jacobi matrices.

use crate::error::{KummerError, Result};

/// Eigendecomposition of a symmetric tridiagonal matrix. `vectors[j]` is
/// the orthonormal eigenvector for `values[j]`; values are ascending.
#[derive(Debug, Clone)]
pub struct TridiagEigen {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
}

/// QL iteration with implicit shifts on (`diag`, `off`), where `off[i]`
/// couples basis states `i` and `i + 1`. Accumulates the rotations, so the
/// returned vectors are orthonormal to machine precision by construction.
pub fn eigh_tridiagonal(diag: &[f64], off: &[f64]) -> Result<TridiagEigen> {
    let n = diag.len();
    if n == 0 {
        return Err(KummerError::InvalidSpec("empty tridiagonal matrix".into()));
    }
    if off.len() + 1 != n {
        return Err(KummerError::InvalidSpec(format!(
            "tridiagonal size mismatch: {} diagonal, {} off-diagonal entries",
            n,
            off.len()
        )));
    }

    let mut d = diag.to_vec();
    // e[i] couples i and i+1; e[n-1] is workspace.
    let mut e = vec![0.0; n];
    e[..n - 1].copy_from_slice(off);

    // z[k][j]: k-th component of the j-th accumulated column.
    let mut z = vec![vec![0.0; n]; n];
    for (k, row) in z.iter_mut().enumerate() {
        row[k] = 1.0;
    }

    for l in 0..n {
        let mut iter = 0;
        loop {
            // Split point: first m >= l with negligible coupling e[m].
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 50 {
                return Err(KummerError::NoConvergence {
                    what: format!("QL iteration at index {l}"),
                    achieved: e[l].abs(),
                    wanted: f64::EPSILON * (d[l].abs() + d[l + 1].abs()),
                });
            }

            // Wilkinson shift from the leading 2x2 block.
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c) = (1.0, 1.0);
            let mut p = 0.0;

            let mut deflated = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let mut f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    // Deflate and restart this eigenvalue.
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;

                for row in z.iter_mut() {
                    f = row[i + 1];
                    row[i + 1] = s * row[i] + c * f;
                    row[i] = c * row[i] - s * f;
                }
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }

    // Sort ascending, permuting columns alongside.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    let values: Vec<f64> = order.iter().map(|&j| d[j]).collect();
    let vectors: Vec<Vec<f64>> = order
        .iter()
        .map(|&j| z.iter().map(|row| row[j]).collect())
        .collect();

    Ok(TridiagEigen { values, vectors })
}

/// Eigenvalues only; same iteration without rotation bookkeeping. Used
/// where spectra of large truncations are compared and the vectors would
/// dominate the cost.
pub fn eigvals_tridiagonal(diag: &[f64], off: &[f64]) -> Result<Vec<f64>> {
    // Sizes here stay modest (a few thousand at most), so reuse the full
    // decomposition rather than maintaining a second iteration.
    eigh_tridiagonal(diag, off).map(|eig| eig.values)
}
