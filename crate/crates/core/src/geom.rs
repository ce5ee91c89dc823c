//! Small dense vector and matrix helpers shared across modules.
//!
//! Points are plain `Vec<f64>`; the ambient dimension is always carried by the
//! caller. Matrices are row-major `Vec<Vec<f64>>` and stay tiny (at most a few
//! times the ambient dimension), so no external linear algebra is pulled in.

pub(crate) fn zeros(d: usize) -> Vec<f64> {
    vec![0.0; d]
}

pub(crate) fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub(crate) fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

/// y += s * x
pub(crate) fn axpy(y: &mut [f64], s: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Sum in ascending value order. Makes reductions invariant under any
/// permutation of the inputs, bit for bit, which the particle drift relies on
/// for relabeling equivariance.
pub(crate) fn sorted_sum(xs: &mut [f64]) -> f64 {
    xs.sort_unstable_by(|a, b| a.total_cmp(b));
    xs.iter().sum()
}

pub(crate) fn mat_zeros(rows: usize, cols: usize) -> Vec<Vec<f64>> {
    vec![vec![0.0; cols]; rows]
}

/// out += s * Aᵀ x  (A given row-major)
pub(crate) fn add_mat_t_vec(out: &mut [f64], s: f64, a: &[Vec<f64>], x: &[f64]) {
    for (row, xi) in a.iter().zip(x) {
        for (o, aij) in out.iter_mut().zip(row) {
            *o += s * aij * xi;
        }
    }
}

/// Cholesky factor (lower triangular) of a symmetric matrix; `None` when the
/// matrix is not numerically positive definite.
pub(crate) fn cholesky(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = mat_zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[i][j] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

/// Solve L Lᵀ x = b given the Cholesky factor L.
pub(crate) fn cholesky_solve(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = l.len();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i][k] * y[k];
        }
        y[i] = s / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k][i] * x[k];
        }
        x[i] = s / l[i][i];
    }
    x
}
