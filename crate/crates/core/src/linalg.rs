//! Dense Euclidean linear algebra used underneath the lp geometry.
//!
//! Everything here is norm-agnostic: ranks, spans, and particular solutions do
//! not depend on the ambient exponent.

use nalgebra::{DMatrix, DVector};

/// Relative rank tolerance: a singular value counts as nonzero when it
/// exceeds this fraction of the largest one.
pub const RANK_RTOL: f64 = 1e-10;

/// Singular value decomposition, singular values descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub singular_values: DVector<f64>,
    pub u: Option<DMatrix<f64>>,
    pub v_t: Option<DMatrix<f64>>,
}

/// One-sided (Hestenes) Jacobi on a matrix with `m >= n`: returns `U`
/// (`m x n`, zero columns for zero singular values), `s` and a complete `V`.
///
/// nalgebra's implicit-shift SVD loses accuracy on some rank-deficient
/// inputs with zero rows (reconstruction errors near 1e-4 were observed);
/// Jacobi is slower but accurate to high relative precision at these sizes.
fn jacobi(a: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let n = a.ncols();
    let mut u = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _ in 0..100 {
        let mut rotated = false;
        for i in 0..n {
            for j in (i + 1)..n {
                let alpha = u.column(i).norm_squared();
                let beta = u.column(j).norm_squared();
                let gamma = u.column(i).dot(&u.column(j));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = c * t;
                for m in [&mut u, &mut v] {
                    for r in 0..m.nrows() {
                        let (x, y) = (m[(r, i)], m[(r, j)]);
                        m[(r, i)] = c * x - sn * y;
                        m[(r, j)] = sn * x + c * y;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = (0..n).map(|j| u.column(j).norm()).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));
    let s = DVector::from_iterator(n, order.iter().map(|&j| norms[j]));
    let mut us = DMatrix::zeros(a.nrows(), n);
    let mut vs = DMatrix::zeros(n, n);
    for (k, &j) in order.iter().enumerate() {
        if norms[j] > 0.0 {
            us.set_column(k, &(u.column(j) / norms[j]));
        }
        vs.set_column(k, &v.column(j));
    }
    (us, s, vs)
}

/// Thin SVD: `min(m, n)` singular values.
pub fn svd(a: &DMatrix<f64>) -> Svd {
    if a.nrows() >= a.ncols() {
        let (u, s, v) = jacobi(a);
        Svd {
            singular_values: s,
            u: Some(u),
            v_t: Some(v.transpose()),
        }
    } else {
        let (u, s, v) = jacobi(&a.transpose());
        Svd {
            singular_values: s,
            u: Some(v),
            v_t: Some(u.transpose()),
        }
    }
}

/// SVD with a complete right factor.
///
/// Wide matrices are padded with zero rows, which leaves the singular values
/// unchanged but makes `v_t` square.
pub(crate) fn svd_full(a: &DMatrix<f64>) -> Svd {
    let (m, n) = a.shape();
    let (u, s, v) = if m >= n {
        jacobi(a)
    } else {
        let mut padded = DMatrix::zeros(n, n);
        padded.view_mut((0, 0), (m, n)).copy_from(a);
        jacobi(&padded)
    };
    Svd {
        singular_values: s,
        u: Some(u),
        v_t: Some(v.transpose()),
    }
}

/// Singular values, descending.
pub fn singular_values(a: &DMatrix<f64>) -> DVector<f64> {
    svd(a).singular_values
}

pub(crate) fn rank_from_singular_values(sv: &DVector<f64>, rtol: f64) -> usize {
    let top = sv.iter().cloned().fold(0.0, f64::max);
    if top == 0.0 || !top.is_finite() {
        return 0;
    }
    sv.iter().filter(|&&s| s > rtol * top).count()
}

pub fn rank(a: &DMatrix<f64>) -> usize {
    if a.is_empty() {
        return 0;
    }
    rank_from_singular_values(&singular_values(a), RANK_RTOL)
}

/// Orthonormal basis of the column space.
pub fn column_space(a: &DMatrix<f64>) -> DMatrix<f64> {
    let m = a.nrows();
    if a.ncols() == 0 || m == 0 {
        return DMatrix::zeros(m, 0);
    }
    let svd = svd(a);
    let r = rank_from_singular_values(&svd.singular_values, RANK_RTOL);
    let u = svd.u.expect("u requested");
    u.columns(0, r).into_owned()
}

/// Orthonormal basis of the null space.
pub fn null_space(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.ncols();
    if a.nrows() == 0 || n == 0 {
        return DMatrix::identity(n, n);
    }
    let svd = svd_full(a);
    let r = rank_from_singular_values(&svd.singular_values, RANK_RTOL);
    let v_t = svd.v_t.expect("v_t requested");
    v_t.rows(r, n - r).transpose()
}

/// Moore-Penrose pseudoinverse at the module rank tolerance.
pub fn pseudo_inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return DMatrix::zeros(n, m);
    }
    let svd = svd(a);
    let r = rank_from_singular_values(&svd.singular_values, RANK_RTOL);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut out = DMatrix::zeros(n, m);
    for k in 0..r {
        let s = svd.singular_values[k];
        out += (v_t.row(k).transpose() / s) * u.column(k).transpose();
    }
    out
}

/// Columns chosen by Gram-Schmidt with pivoting on remaining column norm.
/// The result indexes a maximal independent set of columns.
pub(crate) fn pivot_columns(a: &DMatrix<f64>) -> Vec<usize> {
    let (m, n) = a.shape();
    let mut work = a.clone();
    let scale = a.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if scale == 0.0 {
        return Vec::new();
    }
    let mut chosen = Vec::new();
    let mut remaining: Vec<usize> = (0..n).collect();
    let original_norms: Vec<f64> = (0..n).map(|j| a.column(j).norm()).collect();
    let big = original_norms.iter().cloned().fold(0.0, f64::max);
    while !remaining.is_empty() && chosen.len() < m {
        let (pos, &best) = remaining
            .iter()
            .enumerate()
            .max_by(|(_, &i), (_, &j)| work.column(i).norm().partial_cmp(&work.column(j).norm()).unwrap())
            .unwrap();
        let nrm = work.column(best).norm();
        if nrm <= 1e3 * f64::EPSILON * big.max(1e-300) * (n as f64) {
            break;
        }
        let q = work.column(best) / nrm;
        remaining.remove(pos);
        for &j in &remaining {
            let c = q.dot(&work.column(j));
            let col = work.column(j) - &q * c;
            work.set_column(j, &col);
        }
        chosen.push(best);
    }
    chosen.sort_unstable();
    chosen
}

/// A least-squares "basic" solution of `a x = b`: zero outside a pivoted set
/// of independent columns. Differs from the minimal-norm solution whenever
/// the null space is nontrivial.
pub fn basic_solution(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    BasicSolver::new(a).solve(b)
}

/// Precomputed factorization behind [`basic_solution`].
#[derive(Debug, Clone)]
pub struct BasicSolver {
    ncols: usize,
    cols: Vec<usize>,
    left_inverse: DMatrix<f64>,
}

impl BasicSolver {
    pub fn new(a: &DMatrix<f64>) -> Self {
        let cols = pivot_columns(a);
        let left_inverse = if cols.is_empty() {
            DMatrix::zeros(0, a.nrows())
        } else {
            let sub = a.select_columns(cols.iter());
            let qr = sub.clone().qr();
            let qt = qr.q().transpose();
            qr.r()
                .solve_upper_triangular(&qt)
                .unwrap_or_else(|| pseudo_inverse(&sub))
        };
        BasicSolver {
            ncols: a.ncols(),
            cols,
            left_inverse,
        }
    }

    /// The solver as an `ncols × nrows` matrix.
    pub fn matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.ncols, self.left_inverse.ncols());
        for (k, &j) in self.cols.iter().enumerate() {
            m.set_row(j, &self.left_inverse.row(k));
        }
        m
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = DVector::zeros(self.ncols);
        if self.cols.is_empty() {
            return x;
        }
        let z = &self.left_inverse * b;
        for (k, &j) in self.cols.iter().enumerate() {
            x[j] = z[k];
        }
        x
    }
}

pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    singular_values(a).iter().cloned().fold(0.0, f64::max)
}

pub fn smallest_singular_value(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    singular_values(a).iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Power iteration on `aᵀa` from a fixed start. Returns the Euclidean
/// operator norm and the unit witness achieving it.
pub fn power_iteration(a: &DMatrix<f64>, rtol: f64, max_iter: usize) -> (f64, DVector<f64>) {
    let n = a.ncols();
    let ata = a.transpose() * a;
    // Deterministic start that is generically not orthogonal to the top
    // singular vector.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64 + 1.0).sqrt() * 1e-2);
    v.normalize_mut();
    let mut prev = 0.0;
    for _ in 0..max_iter {
        let w = &ata * &v;
        let nrm = w.norm();
        if nrm == 0.0 {
            return (0.0, v);
        }
        v = w / nrm;
        let val = (a * &v).norm();
        if (val - prev).abs() <= rtol * val {
            prev = val;
            break;
        }
        prev = val;
    }
    (prev, v)
}

/// Euclidean least-squares solve with the pseudoinverse; used for
/// particular solutions and coefficient extraction.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    pseudo_inverse(a) * b
}

/// Gram-Schmidt re-orthonormalization (two passes) of a full-column-rank
/// matrix; falls back to the SVD column space when rank is lost.
pub(crate) fn orthonormalize(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, k) = a.shape();
    if k == 0 {
        return DMatrix::zeros(m, 0);
    }
    let mut q = a.clone();
    for j in 0..k {
        for _pass in 0..2 {
            for i in 0..j {
                let c = q.column(i).dot(&q.column(j));
                let col = q.column(j) - q.column(i) * c;
                q.set_column(j, &col);
            }
        }
        let nrm = q.column(j).norm();
        if nrm <= 1e-12 * a.column(j).norm().max(1e-300) {
            return column_space(a);
        }
        let col = q.column(j) / nrm;
        q.set_column(j, &col);
    }
    q
}
