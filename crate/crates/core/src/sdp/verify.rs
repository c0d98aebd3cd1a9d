//! Eigenvalue routine used to re-check witnesses: Householder reduction to
//! tridiagonal form followed by Sturm-sequence bisection. Deliberately shares
//! no code with the solver's eigen path.

use nalgebra::{DMatrix, DVector};

use crate::lmi::LmiProblem;

/// Householder tridiagonalization of a symmetric matrix; returns the
/// diagonal and sub-diagonal.
pub fn tridiagonalize(m: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = m.nrows();
    let mut a: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| 0.5 * (m[(i, j)] + m[(j, i)])).collect())
        .collect();
    let mut off = vec![0.0; n.saturating_sub(1)];
    for k in 0..n.saturating_sub(2) {
        let norm: f64 = (k + 1..n).map(|i| a[i][k] * a[i][k]).sum::<f64>().sqrt();
        if norm == 0.0 {
            off[k] = 0.0;
            continue;
        }
        let alpha = if a[k + 1][k] > 0.0 { -norm } else { norm };
        let mut v = vec![0.0; n];
        for i in k + 1..n {
            v[i] = a[i][k];
        }
        v[k + 1] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            off[k] = a[k + 1][k];
            continue;
        }
        // A ← H A H with H = I − 2vvᵀ/‖v‖²
        let beta = 2.0 / vnorm2;
        let mut p = vec![0.0; n];
        for i in k..n {
            p[i] = beta * (k + 1..n).map(|j| a[i][j] * v[j]).sum::<f64>();
        }
        let kk: f64 = 0.5 * beta * (k + 1..n).map(|i| v[i] * p[i]).sum::<f64>();
        let w: Vec<f64> = (0..n).map(|i| p[i] - kk * v[i]).collect();
        for i in k..n {
            for j in k..n {
                a[i][j] -= v[i] * w[j] + w[i] * v[j];
            }
        }
        off[k] = alpha;
    }
    if n >= 2 {
        off[n - 2] = a[n - 1][n - 2];
    }
    let diag = (0..n).map(|i| a[i][i]).collect();
    (diag, off)
}

/// Number of eigenvalues of the tridiagonal matrix strictly below `x`.
pub fn sturm_count(d: &[f64], e: &[f64], x: f64) -> usize {
    let tiny = f64::MIN_POSITIVE.sqrt();
    let mut count = 0;
    let mut q = d[0] - x;
    if q < 0.0 {
        count += 1;
    }
    for i in 1..d.len() {
        let qp = if q.abs() < tiny { tiny.copysign(q) } else { q };
        q = d[i] - x - e[i - 1] * e[i - 1] / qp;
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Smallest eigenvalue of a symmetric matrix by bisection on the Sturm count.
pub fn min_eigenvalue_sturm(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return f64::INFINITY;
    }
    let (d, e) = tridiagonalize(m);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r = if i > 0 { e[i - 1].abs() } else { 0.0 } + if i + 1 < n { e[i].abs() } else { 0.0 };
        lo = lo.min(d[i] - r);
        hi = hi.max(d[i] + r);
    }
    let scale = lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE);
    while hi - lo > 2.0 * f64::EPSILON * scale {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if sturm_count(&d, &e, mid) >= 1 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Sign-normalized smallest eigenvalue of every constraint at `x`, computed
/// with [`min_eigenvalue_sturm`].
pub fn verify_witness(p: &LmiProblem, x: &DVector<f64>) -> Vec<(String, f64)> {
    p.constraints
        .iter()
        .map(|c| (c.label.clone(), min_eigenvalue_sturm(&c.normalized(x))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::min_eigenvalue;

    #[test]
    fn matches_reference_on_fixed_matrix() {
        let m = DMatrix::from_row_slice(
            4,
            4,
            &[
                4.0, 1.0, -2.0, 2.0, 1.0, 2.0, 0.0, 1.0, -2.0, 0.0, 3.0, -2.0, 2.0, 1.0, -2.0, -1.0,
            ],
        );
        let a = min_eigenvalue_sturm(&m);
        let b = min_eigenvalue(&m);
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn diagonal_and_scalar() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, -1.5, 2.0]));
        assert!((min_eigenvalue_sturm(&m) + 1.5).abs() < 1e-14);
        let s = DMatrix::from_element(1, 1, 0.25);
        assert!((min_eigenvalue_sturm(&s) - 0.25).abs() < 1e-15);
        assert_eq!(min_eigenvalue_sturm(&DMatrix::zeros(2, 2)), 0.0);
    }

    #[test]
    fn tridiagonal_preserves_trace() {
        let m = DMatrix::from_fn(6, 6, |i, j| {
            ((i * 7 + j * 3) % 5) as f64 + if i == j { 2.0 } else { 0.0 }
        });
        let m = (&m + m.transpose()) * 0.5;
        let (d, _) = tridiagonalize(&m);
        assert!((d.iter().sum::<f64>() - m.trace()).abs() < 1e-12);
    }
}
