//! Finite-dimensional lp spaces: exponents, vectors, norms, distances to
//! subspaces and the reduced minimum modulus of a linear map.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::operators::LinearMap;
use crate::projection::{project, ProjectionOptions};
use crate::sampling::random_unit_normal;
use crate::subspace::{kernel, Subspace};

/// An exponent `p` with `1 < p < inf`. Strict convexity of the norm makes
/// every subspace Chebyshev, so metric projections are single-valued.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct PNorm(f64);

impl PNorm {
    pub const EUCLIDEAN: PNorm = PNorm(2.0);

    pub fn new(p: f64) -> Result<Self> {
        if p.is_finite() && p > 1.0 {
            Ok(PNorm(p))
        } else {
            Err(Error::InvalidExponent(p))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// p = 2, where orthogonal projection gives exact linear paths.
    pub fn is_euclidean(self) -> bool {
        self.0 == 2.0
    }

    /// Hölder conjugate `p / (p - 1)`.
    pub fn conjugate(self) -> f64 {
        self.0 / (self.0 - 1.0)
    }

    /// `(sum |v_i|^p)^(1/p)`, scaled by the largest entry so that neither
    /// overflow nor underflow occurs for moderate `p`.
    pub fn norm(self, v: &DVector<f64>) -> f64 {
        if self.is_euclidean() {
            return v.norm();
        }
        lp_norm(v.as_slice(), self.0)
    }
}

impl TryFrom<f64> for PNorm {
    type Error = Error;
    fn try_from(p: f64) -> Result<Self> {
        PNorm::new(p)
    }
}

impl From<PNorm> for f64 {
    fn from(p: PNorm) -> f64 {
        p.0
    }
}

pub(crate) fn lp_norm(v: &[f64], p: f64) -> f64 {
    let top = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if top == 0.0 {
        return 0.0;
    }
    let s: f64 = v.iter().map(|x| (x.abs() / top).powf(p)).sum();
    top * s.powf(1.0 / p)
}

/// `R^dim` with the `p`-norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LpSpace {
    pub dim: usize,
    pub norm: PNorm,
}

impl LpSpace {
    pub fn new(dim: usize, p: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("space dimension must be at least 1".into()));
        }
        Ok(LpSpace {
            dim,
            norm: PNorm::new(p)?,
        })
    }

    pub fn euclidean(dim: usize) -> Self {
        LpSpace {
            dim,
            norm: PNorm::EUCLIDEAN,
        }
    }

    pub fn p(&self) -> f64 {
        self.norm.value()
    }

    pub fn norm_of(&self, v: &DVector<f64>) -> f64 {
        self.norm.norm(v)
    }

    pub(crate) fn check_len(&self, v: &DVector<f64>, context: &'static str) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.dim,
                found: v.len(),
            });
        }
        Ok(())
    }
}

/// A coordinate vector tied to the space whose norm measures it.
#[derive(Debug, Clone, PartialEq)]
pub struct LpVector {
    coords: DVector<f64>,
    space: LpSpace,
}

impl LpVector {
    pub fn new(space: LpSpace, coords: DVector<f64>) -> Result<Self> {
        space.check_len(&coords, "LpVector::new")?;
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("LpVector::new"));
        }
        Ok(LpVector { coords, space })
    }

    pub fn from_slice(space: LpSpace, coords: &[f64]) -> Result<Self> {
        Self::new(space, DVector::from_column_slice(coords))
    }

    pub fn zeros(space: LpSpace) -> Self {
        LpVector {
            coords: DVector::zeros(space.dim),
            space,
        }
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.coords
    }

    pub fn into_coords(self) -> DVector<f64> {
        self.coords
    }

    pub fn space(&self) -> LpSpace {
        self.space
    }

    pub fn norm(&self) -> f64 {
        norm(self)
    }
}

pub fn norm(v: &LpVector) -> f64 {
    v.space.norm_of(&v.coords)
}

/// `min_{z in V} ||x - z||_p`, evaluated through the metric projection.
pub fn dist_to_subspace(x: &LpVector, v: &Subspace) -> Result<f64> {
    if x.space != v.ambient() {
        return Err(Error::SpaceMismatch {
            context: "dist_to_subspace",
            detail: "vector and subspace live in different spaces".into(),
        });
    }
    Ok(project(x, v, &ProjectionOptions::for_norm(x.space.norm))?.residual_norm)
}

/// How a reduced-minimum-modulus value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModulusKind {
    /// Smallest nonzero singular value (both spaces Euclidean).
    Exact,
    /// Best value found by finite minimization: an attained ratio, hence an
    /// upper estimate of the infimum. Not a certified bound.
    UpperBoundEstimate,
}

#[derive(Debug, Clone)]
pub struct ModulusEstimate {
    pub value: f64,
    pub kind: ModulusKind,
    /// Point of the domain attaining `value` (orthogonal to the kernel).
    pub witness: DVector<f64>,
    /// Distinct local minima reached by the multi-start search, ascending.
    pub local_minima: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct ModulusOptions {
    pub starts: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for ModulusOptions {
    fn default() -> Self {
        ModulusOptions {
            starts: 64,
            max_iter: 80,
            seed: 0x6d6f_6475_6c75_73,
        }
    }
}

/// `inf { ||Tx|| : dist(x, N(T)) = 1 }`.
pub fn reduced_min_modulus(t: &LinearMap) -> Result<ModulusEstimate> {
    reduced_min_modulus_with(t, &ModulusOptions::default())
}

pub fn reduced_min_modulus_with(t: &LinearMap, opts: &ModulusOptions) -> Result<ModulusEstimate> {
    let a = t.matrix();
    if a.iter().all(|v| *v == 0.0) {
        return Err(Error::ZeroOperator);
    }
    let x_space = t.domain();
    let y_space = t.codomain();

    if x_space.norm.is_euclidean() && y_space.norm.is_euclidean() {
        let svd = linalg::svd_full(a);
        let r = linalg::rank_from_singular_values(&svd.singular_values, linalg::RANK_RTOL);
        let v_t = svd.v_t.expect("v_t requested");
        let value = svd.singular_values[r - 1];
        return Ok(ModulusEstimate {
            value,
            kind: ModulusKind::Exact,
            witness: v_t.row(r - 1).transpose(),
            local_minima: vec![value],
        });
    }

    let null = kernel(t);
    let row_basis = linalg::column_space(&a.transpose());
    let r = row_basis.ncols();
    let proj_opts = ProjectionOptions::for_norm(x_space.norm);

    // Ratio ||T R c||_q / dist_p(R c, N(T)); homogeneous of degree zero in c.
    let ratio = |c: &DVector<f64>| -> Result<f64> {
        let x = &row_basis * c;
        let tx = a * &x;
        let d = if null.dim() == 0 {
            x_space.norm_of(&x)
        } else if x_space.norm.is_euclidean() {
            x.norm()
        } else {
            let xv = LpVector::new(x_space, x)?;
            project(&xv, &null, &proj_opts)?.residual_norm
        };
        Ok(y_space.norm_of(&tx) / d)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut minima: Vec<f64> = Vec::new();
    for s in 0..opts.starts.max(1) {
        let mut c = if s < r {
            let mut e = DVector::zeros(r);
            e[s] = 1.0;
            e
        } else {
            random_unit_normal(&mut rng, r)
        };
        let mut f = ratio(&c)?;
        let mut step = 0.25;
        for _ in 0..opts.max_iter {
            let g = fd_gradient(&ratio, &c, f)?;
            // Tangential component on the unit sphere.
            let g_tan = &g - &c * c.dot(&g);
            let gn = g_tan.norm();
            if gn <= 1e-13 * f.max(1e-300) {
                break;
            }
            let dir = -g_tan / gn;
            let mut accepted = false;
            while step > 1e-12 {
                let mut trial = &c + &dir * step;
                trial.normalize_mut();
                let ft = ratio(&trial)?;
                if ft < f - 1e-4 * step * gn {
                    c = trial;
                    f = ft;
                    step = (step * 2.0).min(1.0);
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if !minima.iter().any(|m| (m - f).abs() <= 1e-8 * f.max(1e-300)) {
            minima.push(f);
        }
        if best.as_ref().is_none_or(|(bv, _)| f < *bv) {
            best = Some((f, c));
        }
    }
    minima.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let (value, c) = best.expect("at least one start");
    Ok(ModulusEstimate {
        value,
        kind: ModulusKind::UpperBoundEstimate,
        witness: &row_basis * c,
        local_minima: minima,
    })
}

fn fd_gradient<F>(f: &F, c: &DVector<f64>, _fc: f64) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> Result<f64>,
{
    let h = 1e-6;
    let mut g = DVector::zeros(c.len());
    for i in 0..c.len() {
        let mut cp = c.clone();
        cp[i] += h;
        let mut cm = c.clone();
        cm[i] -= h;
        g[i] = (f(&cp)? - f(&cm)?) / (2.0 * h);
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn v(space: LpSpace, xs: &[f64]) -> LpVector {
        LpVector::from_slice(space, xs).unwrap()
    }

    #[test]
    fn exponent_range_is_open() {
        assert!(PNorm::new(1.0).is_err());
        assert!(PNorm::new(f64::INFINITY).is_err());
        assert!(PNorm::new(0.5).is_err());
        assert!(PNorm::new(1.0001).is_ok());
    }

    #[test]
    fn norm_examples() {
        let s2 = LpSpace::euclidean(2);
        assert_eq!(norm(&v(s2, &[3.0, 4.0])), 5.0);
        let s4 = LpSpace::new(2, 4.0).unwrap();
        // 2^(1/4) computed by hand: 1.189207115002721
        assert!((norm(&v(s4, &[1.0, 1.0])) - 1.189_207_115_002_721).abs() < 1e-14);
        assert_eq!(norm(&LpVector::zeros(s4)), 0.0);
    }

    #[test]
    fn vector_rejects_wrong_length_and_nan() {
        let s = LpSpace::euclidean(2);
        assert!(LpVector::from_slice(s, &[1.0]).is_err());
        assert!(LpVector::from_slice(s, &[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn distance_examples() {
        let s2 = LpSpace::euclidean(2);
        let e1 = Subspace::span(s2, &DMatrix::from_column_slice(2, 1, &[1.0, 0.0])).unwrap();
        assert!((dist_to_subspace(&v(s2, &[0.0, 1.0]), &e1).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(dist_to_subspace(&v(s2, &[3.0, 0.0]), &e1).unwrap(), 0.0);

        // Scalar oracle: c* solves (1-c)^3 = 2c^3, so c* = 1/(1+2^(1/3)).
        let s4 = LpSpace::new(3, 4.0).unwrap();
        let ones = Subspace::span(s4, &DMatrix::from_column_slice(3, 1, &[1.0, 1.0, 1.0])).unwrap();
        let c = 1.0 / (1.0 + 2f64.powf(1.0 / 3.0));
        let expected = ((1.0 - c).powi(4) + 2.0 * c.powi(4)).powf(0.25);
        let d = dist_to_subspace(&v(s4, &[1.0, 0.0, 0.0]), &ones).unwrap();
        assert!((d - expected).abs() < 1e-12, "{d} vs {expected}");
    }

    #[test]
    fn modulus_of_identity_and_diag() {
        let id = LinearMap::identity(LpSpace::euclidean(2));
        let g = reduced_min_modulus(&id).unwrap();
        assert!((g.value - 1.0).abs() < 1e-14);
        assert_eq!(g.kind, ModulusKind::Exact);

        let d = LinearMap::new(
            DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]),
            LpSpace::euclidean(2),
            LpSpace::euclidean(2),
        )
        .unwrap();
        assert!((reduced_min_modulus(&d).unwrap().value - 2.0).abs() < 1e-14);
    }

    #[test]
    fn modulus_rejects_zero() {
        let z = LinearMap::new(DMatrix::zeros(2, 2), LpSpace::euclidean(2), LpSpace::euclidean(2)).unwrap();
        assert!(matches!(reduced_min_modulus(&z), Err(Error::ZeroOperator)));
    }

    #[test]
    fn modulus_estimate_underlies_random_ratios() {
        let x = LpSpace::new(3, 3.0).unwrap();
        let y = LpSpace::new(2, 1.5).unwrap();
        let t = LinearMap::new(DMatrix::from_row_slice(2, 3, &[1.0, 0.5, -0.3, 0.2, 1.0, 0.7]), x, y).unwrap();
        let opts = ModulusOptions {
            starts: 16,
            ..Default::default()
        };
        let g = reduced_min_modulus_with(&t, &opts).unwrap();
        assert_eq!(g.kind, ModulusKind::UpperBoundEstimate);
        assert!(!g.local_minima.is_empty());
        let null = kernel(&t);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let xs = crate::sampling::random_normal(&mut rng, 3);
            let xv = LpVector::new(x, xs.clone()).unwrap();
            let d = dist_to_subspace(&xv, &null).unwrap();
            let tx = y.norm_of(&(t.matrix() * &xs));
            assert!(tx >= g.value * d * (1.0 - 1e-6), "{tx} < {} * {d}", g.value);
        }
    }
}
