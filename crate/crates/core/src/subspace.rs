//! Linear subspaces of an lp space: kernels, ranges, images, and
//! tolerance-based comparisons.
//!
//! Bases are stored Euclidean-orthonormal whatever the ambient exponent. Span
//! identity is a linear-algebra fact; the exponent only matters once a metric
//! projection is requested.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::operators::LinearMap;
use crate::space::LpSpace;

/// Default principal-angle sine below which two subspaces are identified.
pub const SUBSPACE_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Subspace {
    ambient: LpSpace,
    basis: DMatrix<f64>,
    /// Orthonormal basis of the Euclidean complement, computed on demand.
    complement: OnceLock<DMatrix<f64>>,
}

impl PartialEq for Subspace {
    fn eq(&self, other: &Self) -> bool {
        self.ambient == other.ambient && self.basis == other.basis
    }
}

impl Subspace {
    fn make(ambient: LpSpace, basis: DMatrix<f64>) -> Self {
        Subspace {
            ambient,
            basis,
            complement: OnceLock::new(),
        }
    }

    /// Span of the columns of `spanning`, re-ranked at the module tolerance.
    pub fn span(ambient: LpSpace, spanning: &DMatrix<f64>) -> Result<Self> {
        if spanning.nrows() != ambient.dim {
            return Err(Error::DimensionMismatch {
                context: "Subspace::span",
                expected: ambient.dim,
                found: spanning.nrows(),
            });
        }
        if spanning.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Subspace::span"));
        }
        Ok(Subspace::make(ambient, linalg::column_space(spanning)))
    }

    pub fn span_vectors(ambient: LpSpace, vectors: &[DVector<f64>]) -> Result<Self> {
        if vectors.is_empty() {
            return Ok(Self::trivial(ambient));
        }
        let m = DMatrix::from_columns(vectors);
        Self::span(ambient, &m)
    }

    pub(crate) fn from_orthonormal(ambient: LpSpace, basis: DMatrix<f64>) -> Self {
        debug_assert_eq!(basis.nrows(), ambient.dim);
        Subspace::make(ambient, basis)
    }

    pub fn trivial(ambient: LpSpace) -> Self {
        Subspace::make(ambient, DMatrix::zeros(ambient.dim, 0))
    }

    pub fn full(ambient: LpSpace) -> Self {
        Subspace::make(ambient, DMatrix::identity(ambient.dim, ambient.dim))
    }

    /// Coordinate subspace `span{e_i : i in indices}`.
    pub fn coordinate(ambient: LpSpace, indices: &[usize]) -> Result<Self> {
        let mut b = DMatrix::zeros(ambient.dim, indices.len());
        for (k, &i) in indices.iter().enumerate() {
            if i >= ambient.dim {
                return Err(Error::DimensionMismatch {
                    context: "Subspace::coordinate",
                    expected: ambient.dim,
                    found: i + 1,
                });
            }
            b[(i, k)] = 1.0;
        }
        Self::span(ambient, &b)
    }

    pub fn ambient(&self) -> LpSpace {
        self.ambient
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn is_trivial(&self) -> bool {
        self.dim() == 0
    }

    /// Orthonormal basis, one vector per column.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Same span viewed in a space with a different exponent.
    pub fn with_ambient(&self, ambient: LpSpace) -> Result<Self> {
        if ambient.dim != self.ambient.dim {
            return Err(Error::DimensionMismatch {
                context: "Subspace::with_ambient",
                expected: self.ambient.dim,
                found: ambient.dim,
            });
        }
        Ok(Subspace::make(ambient, self.basis.clone()))
    }

    /// Indices `S` when the subspace is the coordinate subspace `span{e_i : i in S}`.
    pub fn coordinate_support(&self) -> Option<Vec<usize>> {
        coordinate_support(&self.basis)
    }

    pub fn euclidean_projector(&self) -> DMatrix<f64> {
        &self.basis * self.basis.transpose()
    }

    /// Euclidean orthogonal projection of `x`.
    pub fn euclidean_project(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.basis * (self.basis.transpose() * x)
    }

    /// `x` minus its Euclidean projection.
    pub fn euclidean_residual(&self, x: &DVector<f64>) -> DVector<f64> {
        x - self.euclidean_project(x)
    }

    /// Membership up to relative tolerance, measured in the Euclidean norm.
    pub fn contains_vector(&self, x: &DVector<f64>, tol: f64) -> bool {
        self.euclidean_residual(x).norm() <= tol * x.norm()
    }

    pub fn orthogonal_complement(&self) -> Subspace {
        Subspace::from_orthonormal(self.ambient, self.complement_basis().clone())
    }

    pub(crate) fn complement_basis(&self) -> &DMatrix<f64> {
        self.complement.get_or_init(|| {
            if self.dim() == 0 {
                DMatrix::identity(self.ambient.dim, self.ambient.dim)
            } else {
                linalg::null_space(&self.basis.transpose())
            }
        })
    }

    /// Sines of the principal angles from `self` to each direction of
    /// `other`, i.e. singular values of `(I - UUᵀ) V`, descending.
    pub fn angle_sines_to(&self, other: &Subspace) -> Vec<f64> {
        if other.dim() == 0 {
            return Vec::new();
        }
        let r = &other.basis - &self.basis * (self.basis.transpose() * &other.basis);
        let mut s: Vec<f64> = linalg::singular_values(&r).iter().cloned().collect();
        s.sort_by(|a, b| b.partial_cmp(a).unwrap());
        s
    }
}

/// Rows where an orthonormal basis is nonzero, if there are exactly as many
/// as columns.
pub(crate) fn coordinate_support(basis: &DMatrix<f64>) -> Option<Vec<usize>> {
    let rows: Vec<usize> = (0..basis.nrows()).filter(|&i| basis.row(i).norm() > 1e-12).collect();
    (rows.len() == basis.ncols()).then_some(rows)
}

/// Numerical null space `N(T)` as a subspace of the domain.
pub fn kernel(t: &LinearMap) -> Subspace {
    Subspace::from_orthonormal(t.domain(), linalg::null_space(t.matrix()))
}

/// Numerical range `R(T)` as a subspace of the codomain.
pub fn range(t: &LinearMap) -> Subspace {
    Subspace::from_orthonormal(t.codomain(), linalg::column_space(t.matrix()))
}

/// `A(V)`, spanned by the images of a basis of `V`.
pub fn image(a: &LinearMap, v: &Subspace) -> Result<Subspace> {
    if v.ambient().dim != a.domain().dim {
        return Err(Error::DimensionMismatch {
            context: "image",
            expected: a.domain().dim,
            found: v.ambient().dim,
        });
    }
    if v.dim() == 0 {
        return Ok(Subspace::trivial(a.codomain()));
    }
    Subspace::span(a.codomain(), &(a.matrix() * v.basis()))
}

/// Equal dimensions and largest principal-angle sine below `tol`.
pub fn subspace_equal(u: &Subspace, v: &Subspace, tol: f64) -> bool {
    if u.ambient().dim != v.ambient().dim || u.dim() != v.dim() {
        return false;
    }
    u.angle_sines_to(v).first().is_none_or(|&s| s < tol)
}

/// `U ∩ V = {0}`: the concatenated bases keep full rank, i.e. the smallest
/// principal angle is bounded away from zero.
pub fn trivial_intersection(u: &Subspace, v: &Subspace, tol: f64) -> bool {
    if u.ambient().dim != v.ambient().dim {
        return false;
    }
    if u.dim() == 0 || v.dim() == 0 {
        return true;
    }
    if u.dim() + v.dim() > u.ambient().dim {
        return false;
    }
    u.angle_sines_to(v).last().is_some_and(|&s| s > tol)
}

/// `V ⊂ U`: every basis vector of `V` lies within `tol` of `U`.
pub fn contains(u: &Subspace, v: &Subspace, tol: f64) -> bool {
    if u.ambient().dim != v.ambient().dim {
        return false;
    }
    (0..v.dim()).all(|j| {
        let b = v.basis().column(j).into_owned();
        u.euclidean_residual(&b).norm() <= tol
    })
}

/// Smallest subspace containing both.
pub fn sum(u: &Subspace, v: &Subspace) -> Result<Subspace> {
    if u.ambient().dim != v.ambient().dim {
        return Err(Error::DimensionMismatch {
            context: "subspace sum",
            expected: u.ambient().dim,
            found: v.ambient().dim,
        });
    }
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for j in 0..u.dim() {
        cols.push(u.basis().column(j).into_owned());
    }
    for j in 0..v.dim() {
        cols.push(v.basis().column(j).into_owned());
    }
    Subspace::span_vectors(u.ambient(), &cols)
}
