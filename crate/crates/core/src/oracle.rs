//! Reference computations that share no code path with the main algorithms.
//!
//! The pseudoinverse here comes from a full-rank factorization `T = C R`
//! found by Gauss–Jordan elimination, then
//! `T⁺ = Rᵀ (R Rᵀ)⁻¹ (Cᵀ C)⁻¹ Cᵀ`. No SVD is involved.

use nalgebra::{DMatrix, DVector};

/// Reduced row echelon form with partial pivoting; returns the nonzero rows
/// and the pivot column indices.
pub fn rref(a: &DMatrix<f64>, rtol: f64) -> (DMatrix<f64>, Vec<usize>) {
    let (m, n) = a.shape();
    let mut r = a.clone();
    let scale = a.amax().max(f64::MIN_POSITIVE);
    let mut pivots = Vec::new();
    let mut row = 0;
    for col in 0..n {
        if row == m {
            break;
        }
        let (best, val) = (row..m)
            .map(|i| (i, r[(i, col)].abs()))
            .fold((row, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if val <= rtol * scale {
            for i in row..m {
                r[(i, col)] = 0.0;
            }
            continue;
        }
        r.swap_rows(row, best);
        let piv = r[(row, col)];
        for j in 0..n {
            r[(row, j)] /= piv;
        }
        for i in 0..m {
            if i != row {
                let f = r[(i, col)];
                if f != 0.0 {
                    for j in 0..n {
                        let v = r[(row, j)];
                        r[(i, j)] -= f * v;
                    }
                }
            }
        }
        pivots.push(col);
        row += 1;
    }
    (r.rows(0, row).into_owned(), pivots)
}

/// Moore–Penrose pseudoinverse through the pivot-column factorization.
pub fn pseudo_inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, n) = a.shape();
    let (r, pivots) = rref(a, 1e-10);
    if pivots.is_empty() {
        return DMatrix::zeros(n, m);
    }
    let c = a.select_columns(&pivots);
    let ctc = (c.transpose() * &c).cholesky().expect("pivot columns are independent");
    let rrt = (&r * r.transpose()).cholesky().expect("echelon rows are independent");
    r.transpose() * rrt.inverse() * ctc.inverse() * c.transpose()
}

/// Applies the oracle pseudoinverse to `y`.
pub fn pseudo_inverse_apply(a: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    pseudo_inverse(a) * y
}

/// Root of a nondecreasing function on `[lo, hi]` by bisection.
pub fn bisect_increasing(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Best `ℓ^p` approximation of `x` from `span{v}`: bisection on the
/// derivative of `t -> ||x - t v||_p^p`, which is nondecreasing.
pub fn line_projection(x: &DVector<f64>, v: &DVector<f64>, p: f64) -> DVector<f64> {
    let derivative = |t: f64| {
        -x.iter()
            .zip(v.iter())
            .map(|(a, b)| {
                let r = a - t * b;
                r.signum() * r.abs().powf(p - 1.0) * b
            })
            .sum::<f64>()
    };
    let bound = 2.0 * x.amax() / v.amax().max(f64::MIN_POSITIVE) * v.len() as f64 + 1.0;
    v * bisect_increasing(derivative, -bound, bound)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_one_pseudoinverse() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let p = pseudo_inverse(&a);
        assert!((p - DMatrix::from_element(2, 2, 0.25)).amax() < 1e-14);
    }

    #[test]
    fn agrees_with_svd_route() {
        let a = DMatrix::from_row_slice(3, 4, &[1.0, 2.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 3.0, 1.0, 1.0]);
        let p = pseudo_inverse(&a);
        let q = crate::linalg::pseudo_inverse(&a);
        assert!((p - q).amax() < 1e-12);
    }

    #[test]
    fn line_projection_scalar_case() {
        let x = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let v = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let pr = line_projection(&x, &v, 4.0);
        let expected = 1.0 / (1.0 + 2f64.powf(1.0 / 3.0));
        assert!((pr[0] - expected).abs() < 1e-14, "{}", pr[0]);
    }
}
