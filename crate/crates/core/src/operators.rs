//! Bounded homogeneous operators between lp spaces.
//!
//! A [`HomogeneousMap`] is an immutable evaluation object: a pure,
//! deterministic closure plus metadata (declared quasi-additivity sets, an
//! optional linear certificate, an optional certified norm bound). Linear maps
//! embed as the special case that carries its matrix.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::sampling::{random_in_span, random_normal, random_unit_normal, CheckRng};
use crate::space::{LpSpace, LpVector};
use crate::subspace::Subspace;

/// A dense matrix acting between two lp spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap {
    matrix: DMatrix<f64>,
    domain: LpSpace,
    codomain: LpSpace,
}

impl LinearMap {
    pub fn new(matrix: DMatrix<f64>, domain: LpSpace, codomain: LpSpace) -> Result<Self> {
        if matrix.nrows() != codomain.dim {
            return Err(Error::DimensionMismatch {
                context: "LinearMap rows vs codomain",
                expected: codomain.dim,
                found: matrix.nrows(),
            });
        }
        if matrix.ncols() != domain.dim {
            return Err(Error::DimensionMismatch {
                context: "LinearMap columns vs domain",
                expected: domain.dim,
                found: matrix.ncols(),
            });
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("LinearMap::new"));
        }
        Ok(LinearMap {
            matrix,
            domain,
            codomain,
        })
    }

    pub fn identity(space: LpSpace) -> Self {
        LinearMap {
            matrix: DMatrix::identity(space.dim, space.dim),
            domain: space,
            codomain: space,
        }
    }

    pub fn zeros(domain: LpSpace, codomain: LpSpace) -> Self {
        LinearMap {
            matrix: DMatrix::zeros(codomain.dim, domain.dim),
            domain,
            codomain,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn domain(&self) -> LpSpace {
        self.domain
    }

    pub fn codomain(&self) -> LpSpace {
        self.codomain
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x
    }

    pub fn is_zero(&self) -> bool {
        self.matrix.iter().all(|v| *v == 0.0)
    }

    /// `self ∘ inner`.
    pub fn after(&self, inner: &LinearMap) -> Result<LinearMap> {
        if inner.codomain.dim != self.domain.dim {
            return Err(Error::DimensionMismatch {
                context: "LinearMap::after",
                expected: self.domain.dim,
                found: inner.codomain.dim,
            });
        }
        LinearMap::new(&self.matrix * &inner.matrix, inner.domain, self.codomain)
    }

    pub fn plus(&self, other: &LinearMap) -> Result<LinearMap> {
        self.check_same_shape(other, "LinearMap::plus")?;
        LinearMap::new(&self.matrix + &other.matrix, self.domain, self.codomain)
    }

    pub fn minus(&self, other: &LinearMap) -> Result<LinearMap> {
        self.check_same_shape(other, "LinearMap::minus")?;
        LinearMap::new(&self.matrix - &other.matrix, self.domain, self.codomain)
    }

    pub fn scaled(&self, s: f64) -> LinearMap {
        LinearMap {
            matrix: &self.matrix * s,
            ..self.clone()
        }
    }

    /// Same matrix between differently normed spaces.
    pub fn with_spaces(&self, domain: LpSpace, codomain: LpSpace) -> Result<LinearMap> {
        LinearMap::new(self.matrix.clone(), domain, codomain)
    }

    fn check_same_shape(&self, other: &LinearMap, context: &'static str) -> Result<()> {
        if self.matrix.shape() != other.matrix.shape() {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.matrix.len(),
                found: other.matrix.len(),
            });
        }
        Ok(())
    }
}

/// An upper bound on an operator norm together with the argument that
/// justifies it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifiedBound {
    pub value: f64,
    pub certificate: String,
}

impl CertifiedBound {
    pub fn new(value: f64, certificate: impl Into<String>) -> Self {
        CertifiedBound {
            value,
            certificate: certificate.into(),
        }
    }

    fn times(&self, other: &CertifiedBound) -> CertifiedBound {
        CertifiedBound::new(
            self.value * other.value,
            format!("({}) * ({})", self.certificate, other.certificate),
        )
    }

    fn plus(&self, other: &CertifiedBound) -> CertifiedBound {
        CertifiedBound::new(
            self.value + other.value,
            format!("({}) + ({})", self.certificate, other.certificate),
        )
    }

    fn min(self, other: CertifiedBound) -> CertifiedBound {
        if other.value < self.value {
            other
        } else {
            self
        }
    }
}

type Evaluator = Arc<dyn Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync>;

/// A bounded map with `H(lambda x) = lambda H(x)`, possibly nonlinear.
#[derive(Clone)]
pub struct HomogeneousMap {
    domain: LpSpace,
    codomain: LpSpace,
    label: String,
    eval: Evaluator,
    quasi_additive_on: Vec<Subspace>,
    linear: Option<LinearMap>,
    norm_bound: Option<CertifiedBound>,
}

impl fmt::Debug for HomogeneousMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HomogeneousMap")
            .field("label", &self.label)
            .field("domain", &self.domain)
            .field("codomain", &self.codomain)
            .field("linear", &self.linear.is_some())
            .field("quasi_additive_on", &self.quasi_additive_on.len())
            .finish()
    }
}

impl HomogeneousMap {
    pub fn new<F>(domain: LpSpace, codomain: LpSpace, label: impl Into<String>, f: F) -> Self
    where
        F: Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync + 'static,
    {
        HomogeneousMap {
            domain,
            codomain,
            label: label.into(),
            eval: Arc::new(f),
            quasi_additive_on: Vec::new(),
            linear: None,
            norm_bound: None,
        }
    }

    pub fn from_linear(map: LinearMap) -> Self {
        Self::linear_with_label(map, "linear")
    }

    pub fn linear_with_label(map: LinearMap, label: impl Into<String>) -> Self {
        let m = map.matrix.clone();
        HomogeneousMap {
            domain: map.domain,
            codomain: map.codomain,
            label: label.into(),
            eval: Arc::new(move |x: &DVector<f64>| Ok(&m * x)),
            quasi_additive_on: vec![Subspace::full(map.domain)],
            linear: Some(map),
            norm_bound: None,
        }
    }

    pub fn identity(space: LpSpace) -> Self {
        Self::linear_with_label(LinearMap::identity(space), "I")
    }

    pub fn zero(domain: LpSpace, codomain: LpSpace) -> Self {
        Self::linear_with_label(LinearMap::zeros(domain, codomain), "0")
    }

    pub fn domain(&self) -> LpSpace {
        self.domain
    }

    pub fn codomain(&self) -> LpSpace {
        self.codomain
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Matrix form, present for linear maps and after materialization.
    pub fn as_linear(&self) -> Option<&LinearMap> {
        self.linear.as_ref()
    }

    pub fn declared_quasi_additive_on(&self) -> &[Subspace] {
        &self.quasi_additive_on
    }

    pub fn declare_quasi_additive(mut self, v: Subspace) -> Self {
        self.quasi_additive_on.push(v);
        self
    }

    pub fn with_norm_bound(mut self, b: CertifiedBound) -> Self {
        self.norm_bound = Some(match self.norm_bound.take() {
            Some(old) => old.min(b),
            None => b,
        });
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.domain.check_len(x, "HomogeneousMap::eval")?;
        (self.eval)(x)
    }

    pub fn apply(&self, x: &LpVector) -> Result<LpVector> {
        if x.space() != self.domain {
            return Err(Error::SpaceMismatch {
                context: "HomogeneousMap::apply",
                detail: format!("{} expects its own domain", self.label),
            });
        }
        LpVector::new(self.codomain, self.eval(x.coords())?)
    }

    /// Norm bound attached by construction (propagated through composition).
    /// Use [`certified_norm_bound`] for the best available bound.
    pub fn attached_norm_bound(&self) -> Option<&CertifiedBound> {
        self.norm_bound.as_ref()
    }

    /// `self ∘ inner`.
    pub fn compose(&self, inner: &HomogeneousMap) -> Result<HomogeneousMap> {
        compose(self, inner)
    }

    pub fn add(&self, other: &HomogeneousMap) -> Result<HomogeneousMap> {
        self.combine(other, 1.0, "+")
    }

    pub fn sub(&self, other: &HomogeneousMap) -> Result<HomogeneousMap> {
        self.combine(other, -1.0, "-")
    }

    pub fn scale(&self, s: f64) -> HomogeneousMap {
        let label = format!("{}*({})", s, self.label);
        let bound = self
            .norm_bound
            .as_ref()
            .map(|b| CertifiedBound::new(s.abs() * b.value, format!("|{s}| * ({})", b.certificate)));
        let mut out = match &self.linear {
            Some(l) => HomogeneousMap::linear_with_label(l.scaled(s), label),
            None => {
                let f = self.eval.clone();
                let mut h = HomogeneousMap::new(self.domain, self.codomain, label, move |x| Ok(f(x)? * s));
                h.quasi_additive_on = self.quasi_additive_on.clone();
                h
            }
        };
        out.norm_bound = bound;
        out
    }

    fn combine(&self, other: &HomogeneousMap, sign: f64, op: &str) -> Result<HomogeneousMap> {
        if self.domain != other.domain || self.codomain != other.codomain {
            return Err(Error::SpaceMismatch {
                context: "HomogeneousMap sum",
                detail: format!("{} {op} {}", self.label, other.label),
            });
        }
        let label = format!("({}) {op} ({})", self.label, other.label);
        let linear = self.linear.is_some() && other.linear.is_some();
        let bound = if linear {
            None
        } else {
            match (certified_norm_bound(self), certified_norm_bound(other)) {
                (Some(a), Some(b)) => Some(a.plus(&b)),
                _ => None,
            }
        };
        let mut out = match (&self.linear, &other.linear) {
            (Some(a), Some(b)) => {
                let m = if sign > 0.0 { a.plus(b)? } else { a.minus(b)? };
                HomogeneousMap::linear_with_label(m, label)
            }
            _ => {
                let f = self.eval.clone();
                let g = other.eval.clone();
                let mut h = HomogeneousMap::new(self.domain, self.codomain, label, move |x| Ok(f(x)? + g(x)? * sign));
                // Quasi-additive on M for both summands implies it for the sum.
                h.quasi_additive_on = common_subspaces(&self.quasi_additive_on, &other.quasi_additive_on);
                h
            }
        };
        out.norm_bound = bound;
        Ok(out)
    }
}

fn common_subspaces(a: &[Subspace], b: &[Subspace]) -> Vec<Subspace> {
    let full_a = a.iter().any(|s| s.dim() == s.ambient().dim);
    let full_b = b.iter().any(|s| s.dim() == s.ambient().dim);
    let mut out = Vec::new();
    for s in a {
        if full_b
            || b.iter()
                .any(|t| crate::subspace::contains(t, s, crate::subspace::SUBSPACE_TOL))
        {
            out.push(s.clone());
        }
    }
    if full_a {
        out.extend(b.iter().cloned());
    }
    out
}

/// `A ∘ B`.
pub fn compose(a: &HomogeneousMap, b: &HomogeneousMap) -> Result<HomogeneousMap> {
    if b.codomain != a.domain {
        return Err(Error::SpaceMismatch {
            context: "compose",
            detail: format!("codomain of {} is not the domain of {}", b.label, a.label),
        });
    }
    let label = format!("{} . {}", a.label, b.label);
    let bound = if a.linear.is_some() && b.linear.is_some() {
        None
    } else {
        match (certified_norm_bound(a), certified_norm_bound(b)) {
            (Some(x), Some(y)) => Some(x.times(&y)),
            _ => None,
        }
    };
    let mut out = match (&a.linear, &b.linear) {
        (Some(la), Some(lb)) => HomogeneousMap::linear_with_label(la.after(lb)?, label),
        _ => {
            let f = a.eval.clone();
            let g = b.eval.clone();
            HomogeneousMap::new(b.domain, a.codomain, label, move |x| f(&g(x)?))
        }
    };
    // A linear outer map preserves the inner map's quasi-additivity sets.
    if a.linear.is_some() && b.linear.is_none() {
        out.quasi_additive_on = b.quasi_additive_on.clone();
    }
    out.norm_bound = bound;
    Ok(out)
}

/// Outcome of a sampled quasi-additivity test.
#[derive(Debug, Clone)]
pub struct QuasiAdditivity {
    pub holds: bool,
    /// Largest normalized defect `||H(x+z) - H(x) - H(z)|| / (1 + ||x|| + ||z||)`.
    pub worst_defect: f64,
    /// `(x, z)` attaining the worst defect when the test fails.
    pub counterexample: Option<(DVector<f64>, DVector<f64>)>,
}

/// Samples `x` in the domain and `z in M` and tests `H(x + z) = H(x) + H(z)`.
pub fn check_quasi_additive(
    h: &HomogeneousMap,
    m: &Subspace,
    samples: usize,
    tol: f64,
    rng: &mut CheckRng,
) -> Result<QuasiAdditivity> {
    if m.ambient().dim != h.domain.dim {
        return Err(Error::DimensionMismatch {
            context: "check_quasi_additive",
            expected: h.domain.dim,
            found: m.ambient().dim,
        });
    }
    let mut worst = 0.0f64;
    let mut worst_pair = None;
    if m.dim() == 0 {
        return Ok(QuasiAdditivity {
            holds: true,
            worst_defect: 0.0,
            counterexample: None,
        });
    }
    let dn = h.domain;
    let cn = h.codomain;
    for s in 0..samples {
        let x = random_normal(rng, dn.dim);
        let z = if s < m.dim() {
            m.basis().column(s) * (1.0 + s as f64)
        } else {
            random_in_span(rng, m.basis())
        };
        let lhs = h.eval(&(&x + &z))?;
        let rhs = h.eval(&x)? + h.eval(&z)?;
        let defect = cn.norm_of(&(lhs - rhs)) / (1.0 + dn.norm_of(&x) + dn.norm_of(&z));
        if defect > worst {
            worst = defect;
            worst_pair = Some((x, z));
        }
    }
    let holds = worst <= tol;
    Ok(QuasiAdditivity {
        holds,
        worst_defect: worst,
        counterexample: if holds { None } else { worst_pair },
    })
}

/// Number of random pairs in a linearity certificate, in addition to all
/// basis-pair sums.
pub const CERTIFICATE_PAIRS: usize = 32;

/// Matrix of an additive homogeneous map, after a randomized additivity
/// certificate and a post-hoc pointwise agreement check.
pub fn materialize_linear(h: &HomogeneousMap, tol: f64) -> Result<LinearMap> {
    if let Some(l) = &h.linear {
        return Ok(l.clone());
    }
    let n = h.domain.dim;
    let dn = h.domain;
    let cn = h.codomain;
    let basis_images: Vec<DVector<f64>> = (0..n)
        .map(|j| {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            h.eval(&e)
        })
        .collect::<Result<_>>()?;

    let fail = |x: DVector<f64>, y: DVector<f64>, defect: f64| Error::CertificateFailure {
        x: x.iter().cloned().collect(),
        y: y.iter().cloned().collect(),
        defect,
    };

    for i in 0..n {
        for j in (i + 1)..n {
            let mut s = DVector::zeros(n);
            s[i] = 1.0;
            s[j] = 1.0;
            let d = cn.norm_of(&(h.eval(&s)? - &basis_images[i] - &basis_images[j])) / 3.0;
            if d > tol {
                let mut x = DVector::zeros(n);
                x[i] = 1.0;
                let mut y = DVector::zeros(n);
                y[j] = 1.0;
                return Err(fail(x, y, d));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x6365_7274);
    for _ in 0..CERTIFICATE_PAIRS {
        let x = random_normal(&mut rng, n);
        let y = random_normal(&mut rng, n);
        let lhs = h.eval(&(&x + &y))?;
        let rhs = h.eval(&x)? + h.eval(&y)?;
        let d = cn.norm_of(&(lhs - rhs)) / (1.0 + dn.norm_of(&x) + dn.norm_of(&y));
        if d > tol {
            return Err(fail(x, y, d));
        }
    }
    let matrix = DMatrix::from_columns(&basis_images);
    for _ in 0..CERTIFICATE_PAIRS {
        let x = random_normal(&mut rng, n);
        let diff = h.eval(&x)? - &matrix * &x;
        let d = cn.norm_of(&diff) / dn.norm_of(&x).max(1e-300);
        if d > tol {
            return Err(fail(x, DVector::zeros(0), d));
        }
    }
    LinearMap::new(matrix, h.domain, h.codomain)
}

/// A materialized copy of `h` that evaluates through its matrix.
pub fn linearized(h: &HomogeneousMap, tol: f64) -> Result<HomogeneousMap> {
    let l = materialize_linear(h, tol)?;
    let mut out = HomogeneousMap::linear_with_label(l, format!("lin[{}]", h.label));
    out.norm_bound = h.norm_bound.clone();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Exact,
    SampledLowerBound,
}

#[derive(Debug, Clone)]
pub struct NormEstimate {
    pub value: f64,
    pub kind: NormKind,
    pub witness: DVector<f64>,
}

/// Estimate of `sup ||Hx|| / ||x||`. Exact (power iteration) for linear maps
/// between Euclidean spaces; otherwise the best attained ratio of a
/// multi-start ascent, which is a lower bound.
pub fn norm_estimate(h: &HomogeneousMap, budget: usize) -> Result<NormEstimate> {
    let dn = h.domain;
    let cn = h.codomain;
    let n = dn.dim;
    let ratio = |x: &DVector<f64>| -> Result<f64> {
        let d = dn.norm_of(x);
        if d == 0.0 {
            return Ok(0.0);
        }
        Ok(cn.norm_of(&h.eval(x)?) / d)
    };

    if let Some(l) = &h.linear {
        if dn.norm.is_euclidean() && cn.norm.is_euclidean() {
            let (mut val, mut w) = linalg::power_iteration(l.matrix(), 1e-15, 20_000);
            let svd_top = linalg::spectral_norm(l.matrix());
            if (val - svd_top).abs() > 1e-12 * svd_top.max(1e-300) {
                let svd = linalg::svd_full(l.matrix());
                w = svd.v_t.expect("v_t").row(0).transpose();
                val = (l.matrix() * &w).norm() / w.norm();
            }
            let _ = val;
            let value = ratio(&w)?;
            return Ok(NormEstimate {
                value,
                kind: NormKind::Exact,
                witness: w,
            });
        }
        return linear_pq_estimate(l, budget);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0x6e6f_726d);
    let mut candidates: Vec<(f64, DVector<f64>)> = Vec::new();
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        candidates.push((ratio(&e)?, e));
    }
    for _ in 0..budget {
        let x = random_unit_normal(&mut rng, n);
        candidates.push((ratio(&x)?, x));
    }
    candidates.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    candidates.truncate(4.min(candidates.len()));
    let mut best = candidates[0].clone();
    for (mut f, mut x) in candidates {
        let mut step = 0.3;
        let mut fails = 0;
        while step > 1e-6 && fails < 200 {
            let dir = random_unit_normal(&mut rng, n);
            let trial = &x + dir * step * x.norm();
            let ft = ratio(&trial)?;
            if ft > f {
                f = ft;
                x = trial;
            } else {
                fails += 1;
                if fails % 8 == 0 {
                    step *= 0.5;
                }
            }
        }
        if f > best.0 {
            best = (f, x);
        }
    }
    let w = &best.1 / dn.norm_of(&best.1);
    Ok(NormEstimate {
        value: ratio(&w)?,
        kind: NormKind::SampledLowerBound,
        witness: w,
    })
}

/// Power method for `||A||_{p -> q}`: alternate dual maps of the two norms,
/// from several starts.
fn linear_pq_estimate(l: &LinearMap, budget: usize) -> Result<NormEstimate> {
    let p = l.domain.p();
    let q = l.codomain.p();
    let a = l.matrix();
    let n = l.domain.dim;
    let ratio = |x: &DVector<f64>| -> f64 {
        let d = l.domain.norm_of(x);
        if d == 0.0 {
            0.0
        } else {
            l.codomain.norm_of(&(a * x)) / d
        }
    };
    // Dual vector of y in lq: sign(y)|y|^(q-1) / ||y||_q^(q-1).
    let dual = |y: &DVector<f64>, r: f64| -> DVector<f64> {
        let nrm = crate::space::lp_norm(y.as_slice(), r);
        if nrm == 0.0 {
            return y.clone();
        }
        y.map(|v| v.signum() * (v.abs() / nrm).powf(r - 1.0))
    };
    let p_conj = p / (p - 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(0x7071);
    let mut starts: Vec<DVector<f64>> = (0..n)
        .map(|j| {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            e
        })
        .collect();
    starts.push(DVector::from_element(n, 1.0));
    for _ in 0..budget.min(64) {
        starts.push(random_unit_normal(&mut rng, n));
    }
    let mut best = (0.0, starts[0].clone());
    for mut x in starts {
        let mut f = ratio(&x);
        for _ in 0..100 {
            let y = a * &x;
            let z = a.transpose() * dual(&y, q);
            let trial = dual(&z, p_conj);
            let ft = ratio(&trial);
            if ft <= f * (1.0 + 1e-15) {
                if ft > f {
                    f = ft;
                    x = trial;
                }
                break;
            }
            f = ft;
            x = trial;
        }
        if f > best.0 {
            best = (f, x);
        }
    }
    let w = &best.1 / l.domain.norm_of(&best.1).max(1e-300);
    Ok(NormEstimate {
        value: ratio(&w),
        kind: NormKind::SampledLowerBound,
        witness: w,
    })
}

/// `||I_n||_{a -> b}` on `R^n`.
fn embedding_norm(n: usize, a: f64, b: f64) -> f64 {
    (n as f64).powf((1.0 / b - 1.0 / a).max(0.0))
}

const ROUNDING_INFLATION: f64 = 1.0 + 1e-12;

/// Certified upper bound on `||A||_{p -> q}`: the exact spectral norm when
/// `p = q = 2`, otherwise the smallest of several interpolation and Hölder
/// over-estimates. Never a sampled value.
pub fn certified_matrix_bound(l: &LinearMap) -> CertifiedBound {
    let a = l.matrix();
    let (m, n) = a.shape();
    if a.is_empty() || l.is_zero() {
        return CertifiedBound::new(0.0, "zero operator");
    }
    let p = l.domain.p();
    let q = l.codomain.p();
    let sigma = linalg::spectral_norm(a);
    if l.domain.norm.is_euclidean() && l.codomain.norm.is_euclidean() {
        return CertifiedBound::new(sigma * ROUNDING_INFLATION, "spectral norm (SVD)");
    }
    let col_sum = (0..n)
        .map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let row_sum = (0..m)
        .map(|i| a.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let riesz_thorin = |r: f64| col_sum.powf(1.0 / r) * row_sum.powf(1.0 - 1.0 / r);
    let p_conj = p / (p - 1.0);
    let row_holder = {
        let rows: Vec<f64> = (0..m)
            .map(|i| {
                let r: Vec<f64> = a.row(i).iter().cloned().collect();
                crate::space::lp_norm(&r, p_conj)
            })
            .collect();
        crate::space::lp_norm(&rows, q)
    };
    let candidates = [
        CertifiedBound::new(row_holder, "row-wise Hoelder"),
        CertifiedBound::new(
            embedding_norm(n, p, q) * riesz_thorin(q),
            "embedding p->q then Riesz-Thorin at q",
        ),
        CertifiedBound::new(
            riesz_thorin(p) * embedding_norm(m, p, q),
            "Riesz-Thorin at p then embedding p->q",
        ),
        CertifiedBound::new(
            embedding_norm(n, p, 2.0) * sigma * embedding_norm(m, 2.0, q),
            "embedding via spectral norm",
        ),
    ];
    let best = candidates.into_iter().reduce(CertifiedBound::min).expect("non-empty");
    CertifiedBound::new(best.value * ROUNDING_INFLATION, best.certificate)
}

/// Best certified upper bound available for `h`: the matrix bound when `h`
/// is linear, the propagated construction bound otherwise.
pub fn certified_norm_bound(h: &HomogeneousMap) -> Option<CertifiedBound> {
    let from_matrix = h.linear.as_ref().map(certified_matrix_bound);
    match (from_matrix, h.norm_bound.clone()) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    }
}

/// Condition number above which a square matrix is treated as singular.
pub const SINGULAR_CONDITION: f64 = 1e12;

pub fn invert_linear(a: &LinearMap) -> Result<LinearMap> {
    let (m, n) = a.matrix.shape();
    if m != n {
        return Err(Error::DimensionMismatch {
            context: "invert_linear (square)",
            expected: m,
            found: n,
        });
    }
    let smax = linalg::spectral_norm(&a.matrix);
    let smin = linalg::smallest_singular_value(&a.matrix);
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition < SINGULAR_CONDITION) {
        return Err(Error::Singular {
            smallest: smin,
            condition,
        });
    }
    let inv = a.matrix.clone().lu().try_inverse().ok_or(Error::Singular {
        smallest: smin,
        condition,
    })?;
    LinearMap::new(inv, a.codomain, a.domain)
}

/// `(I_Y + dT ∘ Th)^{-1} = I_Y - dT ∘ Phi` with `Phi = (I_X + Th dT)^{-1} Th`.
pub fn invert_i_plus_homogeneous(dt: &LinearMap, th: &HomogeneousMap, phi: &HomogeneousMap) -> Result<HomogeneousMap> {
    if th.domain != dt.codomain || th.codomain != dt.domain {
        return Err(Error::SpaceMismatch {
            context: "invert_i_plus_homogeneous",
            detail: "Th must map the codomain of dT back to its domain".into(),
        });
    }
    if phi.domain != th.domain || phi.codomain != th.codomain {
        return Err(Error::SpaceMismatch {
            context: "invert_i_plus_homogeneous",
            detail: "Phi must have the shape of Th".into(),
        });
    }
    let dt_phi = compose(&HomogeneousMap::from_linear(dt.clone()), phi)?;
    Ok(HomogeneousMap::identity(dt.codomain)
        .sub(&dt_phi)?
        .with_label("(I + dT Th)^-1"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::metric_projector;
    use crate::sampling::rng_for;

    fn e(n: usize) -> LpSpace {
        LpSpace::euclidean(n)
    }

    fn lin(rows: usize, cols: usize, data: &[f64], dom: LpSpace, cod: LpSpace) -> LinearMap {
        LinearMap::new(DMatrix::from_row_slice(rows, cols, data), dom, cod).unwrap()
    }

    #[test]
    fn linear_map_shape_is_checked() {
        assert!(LinearMap::new(DMatrix::zeros(2, 3), e(2), e(2)).is_err());
        assert!(LinearMap::new(DMatrix::zeros(2, 3), e(3), e(2)).is_ok());
    }

    #[test]
    fn compose_with_identity_is_pointwise_equal() {
        let s = LpSpace::new(3, 4.0).unwrap();
        let v = Subspace::span(s, &DMatrix::from_column_slice(3, 1, &[1.0, 2.0, -1.0])).unwrap();
        let pi = metric_projector(&v);
        let c = compose(&pi, &HomogeneousMap::identity(s)).unwrap();
        let cc = compose(&pi, &pi).unwrap();
        let mut rng = rng_for(1, "compose");
        for _ in 0..50 {
            let x = random_normal(&mut rng, 3);
            let a = pi.eval(&x).unwrap();
            assert!((c.eval(&x).unwrap() - &a).norm() < 1e-14);
            assert!((cc.eval(&x).unwrap() - &a).norm() < 1e-9);
        }
    }

    #[test]
    fn compose_rejects_mismatch() {
        let a = HomogeneousMap::identity(e(2));
        let b = HomogeneousMap::identity(e(3));
        assert!(compose(&a, &b).is_err());
    }

    #[test]
    fn quasi_additivity_examples() {
        let mut rng = rng_for(2, "qa");
        let l = HomogeneousMap::from_linear(lin(2, 2, &[1.0, 2.0, 3.0, 4.0], e(2), e(2)));
        let full = Subspace::full(e(2));
        assert!(check_quasi_additive(&l, &full, 64, 1e-10, &mut rng).unwrap().holds);

        let s = LpSpace::new(3, 4.0).unwrap();
        let v = Subspace::span(s, &DMatrix::from_column_slice(3, 1, &[1.0, 2.0, -1.0])).unwrap();
        let pi = metric_projector(&v);
        assert!(check_quasi_additive(&pi, &v, 64, 1e-9, &mut rng).unwrap().holds);
        let r = check_quasi_additive(&pi, &Subspace::full(s), 64, 1e-9, &mut rng).unwrap();
        assert!(!r.holds);
        assert!(r.counterexample.is_some());
    }

    #[test]
    fn materialize_orthogonal_projector() {
        let v = Subspace::span(e(3), &DMatrix::from_column_slice(3, 1, &[1.0, 1.0, 0.0])).unwrap();
        let nonlinear_wrapper = {
            let pi = metric_projector(&v);
            HomogeneousMap::new(e(3), e(3), "wrapped", move |x| pi.eval(x))
        };
        let m = materialize_linear(&nonlinear_wrapper, 1e-10).unwrap();
        assert!((m.matrix() - v.euclidean_projector()).amax() < 1e-14);
    }

    #[test]
    fn materialize_refuses_nonlinear_projector() {
        let s = LpSpace::new(3, 4.0).unwrap();
        let v = Subspace::span(s, &DMatrix::from_column_slice(3, 1, &[1.0, 1.0, 1.0])).unwrap();
        let err = materialize_linear(&metric_projector(&v), 1e-8).unwrap_err();
        assert!(matches!(err, Error::CertificateFailure { .. }));
    }

    #[test]
    fn norm_estimate_examples() {
        let id = HomogeneousMap::identity(e(2));
        let n = norm_estimate(&id, 8).unwrap();
        assert_eq!(n.kind, NormKind::Exact);
        assert!((n.value - 1.0).abs() < 1e-14);

        let d = HomogeneousMap::from_linear(lin(2, 2, &[3.0, 0.0, 0.0, 1.0], e(2), e(2)));
        assert!((norm_estimate(&d, 8).unwrap().value - 3.0).abs() < 1e-12);

        for p in [1.5, 2.0, 3.0, 4.0] {
            let dom = LpSpace::new(2, p).unwrap();
            let row = HomogeneousMap::from_linear(lin(1, 2, &[1.0, 1.0], dom, LpSpace::euclidean(1)));
            let est = norm_estimate(&row, 16).unwrap();
            let holder = 2f64.powf(1.0 - 1.0 / p);
            assert!((est.value - holder).abs() < 1e-10, "p={p}: {} vs {holder}", est.value);
            let w = &est.witness;
            let ratio = row.eval(w).unwrap().norm() / dom.norm_of(w);
            assert!((ratio - est.value).abs() < 1e-10);
            assert!(certified_norm_bound(&row).unwrap().value >= holder * (1.0 - 1e-12));
        }
    }

    #[test]
    fn sampled_norm_never_exceeds_certificate() {
        let s4 = LpSpace::new(3, 4.0).unwrap();
        let s15 = LpSpace::new(2, 1.5).unwrap();
        let a = lin(2, 3, &[1.0, -2.0, 0.5, 0.3, 0.0, 1.0], s4, s15);
        let est = norm_estimate(&HomogeneousMap::from_linear(a.clone()), 32).unwrap();
        let cert = certified_matrix_bound(&a);
        assert!(est.value <= cert.value, "{} > {}", est.value, cert.value);
    }

    #[test]
    fn invert_examples() {
        let id = LinearMap::identity(e(3));
        assert_eq!(invert_linear(&id).unwrap(), id);
        let sing = lin(2, 2, &[1.0, 2.0, 2.0, 4.0], e(2), e(2));
        assert!(matches!(invert_linear(&sing), Err(Error::Singular { .. })));
        let rect = lin(2, 3, &[1.0; 6], e(3), e(2));
        assert!(invert_linear(&rect).is_err());
    }

    #[test]
    fn inverse_matches_neumann_series() {
        let a = DMatrix::from_row_slice(3, 3, &[0.1, -0.2, 0.05, 0.0, 0.15, 0.1, -0.1, 0.05, 0.2]);
        assert!(linalg::spectral_norm(&a) < 1.0);
        let ipa = LinearMap::new(DMatrix::identity(3, 3) + &a, e(3), e(3)).unwrap();
        let inv = invert_linear(&ipa).unwrap();
        let mut series = DMatrix::identity(3, 3);
        let mut term = DMatrix::identity(3, 3);
        for _ in 0..200 {
            term = -&term * &a;
            series += &term;
        }
        assert!((inv.matrix() - series).amax() < 1e-8);
        assert!((ipa.matrix() * inv.matrix() - DMatrix::identity(3, 3)).amax() < 1e-10);
    }

    #[test]
    fn i_plus_homogeneous_with_zero_perturbation_is_identity() {
        let th = HomogeneousMap::from_linear(lin(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0], e(3), e(2)));
        let dt = LinearMap::zeros(e(2), e(3));
        let g = invert_i_plus_homogeneous(&dt, &th, &th).unwrap();
        let mut rng = rng_for(4, "g");
        for _ in 0..20 {
            let y = random_normal(&mut rng, 3);
            assert!((g.eval(&y).unwrap() - &y).norm() < 1e-15);
        }
    }
}
