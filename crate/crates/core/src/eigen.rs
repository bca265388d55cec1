//! Dense symmetric eigendecomposition.
//!
//! Householder reduction to tridiagonal form followed by the implicit
//! QL algorithm with Wilkinson shifts, after the EISPACK `tred2`/`tql2`
//! routines (Numerical Recipes ch. 11). Deterministic: the same matrix
//! always produces bit-identical output. Sized for the dense affinity
//! matrices this crate builds (hundreds to a few thousand categories).

use ndarray::Array2;

use crate::error::{Error, Result};

/// Relative off-diagonal threshold treated as converged.
const TOL: f64 = 1e-10;
/// QL sweeps allowed per eigenvalue.
const MAX_SWEEPS: usize = 100;

/// Eigenvalues in ascending order; `vectors` column `j` pairs with
/// `values[j]`. Columns are orthonormal.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Array2<f64>,
}

/// Full eigendecomposition of a symmetric matrix.
pub fn symmetric_eigen(a: &Array2<f64>) -> Result<SymmetricEigen> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(Error::InvalidParam(format!(
            "expected square non-empty matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            if (a[[i, j]] - a[[j, i]]).abs() > 1e-8 * scale {
                return Err(Error::InvalidParam(format!(
                    "matrix is not symmetric at ({i},{j})"
                )));
            }
        }
    }

    let mut z = a.clone();
    let mut d = vec![0.0f64; n];
    let mut e = vec![0.0f64; n];
    tred2(&mut z, &mut d, &mut e);
    tql2(&mut d, &mut e, &mut z)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[i].total_cmp(&d[j]));
    let values: Vec<f64> = order.iter().map(|&i| d[i]).collect();
    let mut vectors = Array2::<f64>::zeros((n, n));
    for (new_j, &old_j) in order.iter().enumerate() {
        for i in 0..n {
            vectors[[i, new_j]] = z[[i, old_j]];
        }
    }
    Ok(SymmetricEigen { values, vectors })
}

fn pythag(a: f64, b: f64) -> f64 {
    let absa = a.abs();
    let absb = b.abs();
    if absa > absb {
        absa * (1.0 + (absb / absa).powi(2)).sqrt()
    } else if absb == 0.0 {
        0.0
    } else {
        absb * (1.0 + (absa / absb).powi(2)).sqrt()
    }
}

/// Householder reduction of `z` to tridiagonal form, accumulating the
/// orthogonal transform in `z`. On exit `d` holds the diagonal and
/// `e[1..]` the subdiagonal.
fn tred2(z: &mut Array2<f64>, d: &mut [f64], e: &mut [f64]) {
    let n = d.len();
    for i in (1..n).rev() {
        let l = i - 1;
        let mut h = 0.0;
        if l > 0 {
            let mut scale = 0.0;
            for k in 0..=l {
                scale += z[[i, k]].abs();
            }
            if scale == 0.0 {
                e[i] = z[[i, l]];
            } else {
                for k in 0..=l {
                    z[[i, k]] /= scale;
                    h += z[[i, k]] * z[[i, k]];
                }
                let f = z[[i, l]];
                let g = if f >= 0.0 { -h.sqrt() } else { h.sqrt() };
                e[i] = scale * g;
                h -= f * g;
                z[[i, l]] = f - g;
                let mut f_sum = 0.0;
                for j in 0..=l {
                    z[[j, i]] = z[[i, j]] / h;
                    let mut g_sum = 0.0;
                    for k in 0..=j {
                        g_sum += z[[j, k]] * z[[i, k]];
                    }
                    for k in (j + 1)..=l {
                        g_sum += z[[k, j]] * z[[i, k]];
                    }
                    e[j] = g_sum / h;
                    f_sum += e[j] * z[[i, j]];
                }
                let hh = f_sum / (h + h);
                for j in 0..=l {
                    let f = z[[i, j]];
                    let g = e[j] - hh * f;
                    e[j] = g;
                    for k in 0..=j {
                        let upd = f * e[k] + g * z[[i, k]];
                        z[[j, k]] -= upd;
                    }
                }
            }
        } else {
            e[i] = z[[i, l]];
        }
        d[i] = h;
    }
    d[0] = 0.0;
    e[0] = 0.0;
    for i in 0..n {
        if d[i] != 0.0 {
            for j in 0..i {
                let mut g = 0.0;
                for k in 0..i {
                    g += z[[i, k]] * z[[k, j]];
                }
                for k in 0..i {
                    let upd = g * z[[k, i]];
                    z[[k, j]] -= upd;
                }
            }
        }
        d[i] = z[[i, i]];
        z[[i, i]] = 1.0;
        for j in 0..i {
            z[[j, i]] = 0.0;
            z[[i, j]] = 0.0;
        }
    }
}

/// Implicit QL with shifts on the tridiagonal (`d`, `e`), rotating the
/// eigenvector columns of `z` along.
fn tql2(d: &mut [f64], e: &mut [f64], z: &mut Array2<f64>) -> Result<()> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    for l in 0..n {
        let mut sweeps = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= TOL * dd + f64::MIN_POSITIVE {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            sweeps += 1;
            if sweeps > MAX_SWEEPS {
                return Err(Error::NoConvergence(MAX_SWEEPS));
            }

            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = pythag(g, 1.0);
            let sign_r = if g >= 0.0 { r } else { -r };
            g = d[m] - d[l] + e[l] / (g + sign_r);
            let mut s = 1.0;
            let mut c = 1.0;
            let mut p = 0.0;
            let mut underflow = false;

            let mut i = m - 1;
            loop {
                let f = s * e[i];
                let b = c * e[i];
                r = pythag(f, g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for k in 0..n {
                    let f = z[[k, i + 1]];
                    z[[k, i + 1]] = s * z[[k, i]] + c * f;
                    z[[k, i]] = c * z[[k, i]] - s * f;
                }
                if i == l {
                    break;
                }
                i -= 1;
            }
            if underflow && i > l {
                continue;
            }
            if !underflow {
                d[l] -= p;
                e[l] = g;
                e[m] = 0.0;
            }
        }
    }
    Ok(())
}
