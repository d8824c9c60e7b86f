//! Small dense helpers not worth a LAPACK dependency.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Solves `M·x = b` for symmetric positive definite `M` by Cholesky.
pub fn cholesky_solve(m: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    let n = m.nrows();
    if m.ncols() != n || b.len() != n {
        return Err(Error::Dimension(format!(
            "cholesky: matrix {:?}, rhs {}",
            m.dim(),
            b.len()
        )));
    }
    let scale = m.diag().iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = m[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if d <= scale * 1e-14 {
            return Err(Error::Singular);
        }
        let d = d.sqrt();
        l[[j, j]] = d;
        for i in j + 1..n {
            let mut s = m[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / d;
        }
    }
    // L·w = b, then Lᵀ·x = w
    let mut w = b.clone();
    for i in 0..n {
        for k in 0..i {
            w[i] -= l[[i, k]] * w[k];
        }
        w[i] /= l[[i, i]];
    }
    let mut x = w;
    for i in (0..n).rev() {
        for k in i + 1..n {
            x[i] -= l[[k, i]] * x[k];
        }
        x[i] /= l[[i, i]];
    }
    Ok(x)
}
