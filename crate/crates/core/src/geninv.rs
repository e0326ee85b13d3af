//! Homogeneous, quasi-linear and Moore–Penrose metric generalized inverses.
//!
//! Every inverse is evaluated by solving `T x = Q(y)` for a particular
//! solution and removing its component along `N(T)` with `I - P`. Which
//! solution is used does not matter, and [`construct_h`] checks this by
//! solving with two unrelated factorizations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, BasicSolver};
use crate::operators::{
    certified_norm_bound, check_quasi_additive, compose, norm_estimate, CertifiedBound, HomogeneousMap, LinearMap,
};
use crate::projection::{metric_projector, metric_residual};
use crate::sampling::{random_in_span, random_normal, CheckRng};
use crate::space::{dist_to_subspace, reduced_min_modulus, LpVector};
use crate::subspace::{kernel, range, subspace_equal, Subspace, SUBSPACE_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Species {
    Homogeneous,
    QuasiLinear,
    Metric,
}

/// A generalized inverse `Th` of `T` together with its projector pair:
/// `P` onto `N(T)` with `Th T = I - P`, and `Q` onto `R(T)` with `T Th = Q`.
#[derive(Debug, Clone)]
pub struct GenInverseBundle {
    t: LinearMap,
    th: HomogeneousMap,
    p: HomogeneousMap,
    q: HomogeneousMap,
    species: Species,
    kernel: Subspace,
    range: Subspace,
}

impl GenInverseBundle {
    /// Bundle from already-built parts, without precondition checks.
    pub(crate) fn from_parts(
        t: LinearMap,
        th: HomogeneousMap,
        p: HomogeneousMap,
        q: HomogeneousMap,
        species: Species,
    ) -> Self {
        let kernel = kernel(&t);
        let range = range(&t);
        GenInverseBundle {
            t,
            th,
            p,
            q,
            species,
            kernel,
            range,
        }
    }

    pub fn t(&self) -> &LinearMap {
        &self.t
    }

    pub fn th(&self) -> &HomogeneousMap {
        &self.th
    }

    pub fn p(&self) -> &HomogeneousMap {
        &self.p
    }

    pub fn q(&self) -> &HomogeneousMap {
        &self.q
    }

    pub fn species(&self) -> Species {
        self.species
    }

    pub fn kernel(&self) -> &Subspace {
        &self.kernel
    }

    pub fn range(&self) -> &Subspace {
        &self.range
    }

    /// Worst relative defects of the four defining identities on `samples`
    /// random vectors of each space.
    pub fn check_identities(&self, samples: usize, rng: &mut CheckRng) -> Result<IdentityReport> {
        let x_space = self.t.domain();
        let y_space = self.t.codomain();
        let mut d = [0.0f64; 4];
        let rel = |num: f64, a: f64, b: f64| num / a.max(b).max(f64::MIN_POSITIVE);
        for _ in 0..samples {
            let x = random_normal(rng, x_space.dim);
            let y = random_normal(rng, y_space.dim);
            let tx = self.t.apply(&x);
            let th_tx = self.th.eval(&tx)?;
            let thy = self.th.eval(&y)?;
            let t_thy = self.t.apply(&thy);

            let e0 = y_space.norm_of(&(self.t.apply(&th_tx) - &tx));
            d[0] = d[0].max(rel(e0, y_space.norm_of(&tx), x_space.norm_of(&x)));

            let e1 = x_space.norm_of(&(self.th.eval(&t_thy)? - &thy));
            d[1] = d[1].max(rel(e1, x_space.norm_of(&thy), y_space.norm_of(&y)));

            let e2 = x_space.norm_of(&(&th_tx - (&x - self.p.eval(&x)?)));
            d[2] = d[2].max(rel(e2, x_space.norm_of(&x), 0.0));

            let qy = self.q.eval(&y)?;
            let e3 = y_space.norm_of(&(&t_thy - &qy));
            d[3] = d[3].max(rel(e3, y_space.norm_of(&qy), y_space.norm_of(&y)));
        }
        Ok(IdentityReport { samples, defects: d })
    }

    /// Species-specific laws: additivity of `P` for quasi-linear bundles;
    /// for metric bundles, `P x` is a best approximation of `x` from `N(T)`
    /// and `Q y` one of `y` from `R(T)`, against random competitors.
    pub fn check_species(&self, samples: usize, rng: &mut CheckRng) -> Result<bool> {
        match self.species {
            Species::Homogeneous => Ok(true),
            Species::QuasiLinear => {
                let full = Subspace::full(self.t.domain());
                Ok(check_quasi_additive(&self.p, &full, samples, 1e-8, rng)?.holds)
            }
            Species::Metric => {
                for (map, sub) in [(&self.p, &self.kernel), (&self.q, &self.range)] {
                    let space = sub.ambient();
                    if sub.dim() == 0 {
                        continue;
                    }
                    for _ in 0..samples {
                        let x = random_normal(rng, space.dim);
                        let px = map.eval(&x)?;
                        if !sub.contains_vector(&px, 1e-8) && px.norm() > 1e-12 * x.norm() {
                            return Ok(false);
                        }
                        let best = space.norm_of(&(&x - &px));
                        let competitor = &px + random_in_span(rng, sub.basis()) * 0.1 * x.norm();
                        if best > space.norm_of(&(&x - competitor)) * (1.0 + 1e-10) {
                            return Ok(false);
                        }
                    }
                }
                Ok(true)
            }
        }
    }
}

pub const IDENTITY_NAMES: [&str; 4] = ["T Th T = T", "Th T Th = Th", "Th T = I - P", "T Th = Q"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub samples: usize,
    /// Relative defects in the order of [`IDENTITY_NAMES`].
    pub defects: [f64; 4],
}

impl IdentityReport {
    pub fn worst(&self) -> f64 {
        self.defects.iter().cloned().fold(0.0, f64::max)
    }

    pub fn holds(&self, tol: f64) -> bool {
        self.worst() <= tol
    }
}

const PRECHECK_SAMPLES: usize = 32;
const PRECHECK_TOL: f64 = 1e-8;

fn mismatch(msg: impl Into<String>) -> Error {
    Error::ProjectorMismatch(msg.into())
}

fn check_projector_onto(h: &HomogeneousMap, target: &Subspace, name: &str, rng: &mut CheckRng) -> Result<()> {
    let space = target.ambient();
    if h.domain() != space || h.codomain() != space {
        return Err(mismatch(format!("{name} must act on the space of its target subspace")));
    }
    for _ in 0..PRECHECK_SAMPLES {
        let x = random_normal(rng, space.dim);
        let px = h.eval(&x)?;
        let scale = x.norm().max(px.norm());
        if !target.contains_vector(&px, PRECHECK_TOL) && px.norm() > PRECHECK_TOL * scale {
            return Err(mismatch(format!("{name} does not map into its target subspace")));
        }
        if (h.eval(&px)? - &px).norm() > PRECHECK_TOL * scale {
            return Err(mismatch(format!("{name} is not idempotent")));
        }
        if target.dim() > 0 {
            let z = random_in_span(rng, target.basis());
            if (h.eval(&z)? - &z).norm() > PRECHECK_TOL * z.norm() {
                return Err(mismatch(format!("{name} does not fix its target subspace")));
            }
        }
    }
    Ok(())
}

fn non_zero(t: &LinearMap) -> Result<()> {
    if t.is_zero() {
        Err(Error::ZeroOperator)
    } else {
        Ok(())
    }
}

/// Homogeneous generalized inverse `Th(y) = (I - P) x` where `T x = Q(y)`.
///
/// `P` must be a projector onto `N(T)`, quasi-additive on `N(T)`, and `Q` a
/// homogeneous projector onto `R(T)`; both are checked on samples.
pub fn construct_h(t: &LinearMap, p: HomogeneousMap, q: HomogeneousMap) -> Result<GenInverseBundle> {
    construct_h_species(t, p, q, Species::Homogeneous)
}

fn construct_h_species(
    t: &LinearMap,
    p: HomogeneousMap,
    q: HomogeneousMap,
    species: Species,
) -> Result<GenInverseBundle> {
    non_zero(t)?;
    let n_t = kernel(t);
    let r_t = range(t);
    let mut rng = crate::sampling::rng_for(0x7072_6563, "construct_h");
    check_projector_onto(&p, &n_t, "P", &mut rng)?;
    check_projector_onto(&q, &r_t, "Q", &mut rng)?;
    if !check_quasi_additive(&p, &n_t, PRECHECK_SAMPLES, PRECHECK_TOL, &mut rng)?.holds {
        return Err(mismatch("P is not quasi-additive on N(T)"));
    }

    let y_space = t.codomain();
    let x_space = t.domain();
    let pinv = linalg::pseudo_inverse(t.matrix());
    let a = t.matrix().clone();
    let (pe, qe) = (p.clone(), q.clone());
    let th = HomogeneousMap::new(y_space, x_space, "Th", move |y: &DVector<f64>| {
        let qy = qe.eval(y)?;
        let xp = &pinv * &qy;
        let defect = (&a * &xp - &qy).norm();
        if defect > 1e-8 * qy.norm().max(y.norm()) {
            return Err(mismatch(format!("T x = Q(y) is inconsistent (residual {defect:.3e})")));
        }
        Ok(&xp - pe.eval(&xp)?)
    });
    let th = match composite_bound(&p, t, &q) {
        Some(b) => th.with_norm_bound(b),
        None => th,
    };

    // The second particular solution must give the same value.
    let basic = BasicSolver::new(t.matrix());
    for _ in 0..PRECHECK_SAMPLES {
        let y = random_normal(&mut rng, y_space.dim);
        let first = th.eval(&y)?;
        let xb = basic.solve(&q.eval(&y)?);
        let second = &xb - p.eval(&xb)?;
        if (&first - &second).norm() > 1e-10 * first.norm().max(y.norm()) {
            return Err(mismatch(
                "Th depends on the particular solution; P does not annihilate N(T)",
            ));
        }
    }

    Ok(GenInverseBundle {
        t: t.clone(),
        th,
        p,
        q,
        species,
        kernel: n_t,
        range: r_t,
    })
}

/// `||(I - P) T^+ Q|| <= ||I - P|| ||T^+|| ||Q||` when all three are certified.
fn composite_bound(p: &HomogeneousMap, t: &LinearMap, q: &HomogeneousMap) -> Option<CertifiedBound> {
    let i_minus_p = HomogeneousMap::identity(t.domain()).sub(p).ok()?;
    let bp = certified_norm_bound(&i_minus_p).or_else(|| {
        certified_norm_bound(p).map(|b| CertifiedBound::new(1.0 + b.value, format!("1 + ({})", b.certificate)))
    })?;
    let pinv = LinearMap::new(linalg::pseudo_inverse(t.matrix()), t.codomain(), t.domain()).ok()?;
    let bt = crate::operators::certified_matrix_bound(&pinv);
    let bq = certified_norm_bound(q)?;
    Some(CertifiedBound::new(
        bp.value * bt.value * bq.value,
        format!("({}) * ({}) * ({})", bp.certificate, bt.certificate, bq.certificate),
    ))
}

/// Minimal-norm best-approximate solution of `T x = y`: project `y` onto
/// `R(T)`, solve exactly, then subtract the projection onto `N(T)`.
pub fn metric_geninv_pointwise(t: &LinearMap, y: &LpVector) -> Result<LpVector> {
    non_zero(t)?;
    if y.space() != t.codomain() {
        return Err(Error::SpaceMismatch {
            context: "metric_geninv_pointwise",
            detail: "y must lie in the codomain of T".into(),
        });
    }
    let th = metric_evaluator(t);
    LpVector::new(t.domain(), th.eval(y.coords())?)
}

fn metric_evaluator(t: &LinearMap) -> HomogeneousMap {
    let n_t = kernel(t);
    let r_t = range(t);
    let basic = BasicSolver::new(t.matrix());
    let solver = LinearMap::new(basic.matrix(), t.codomain(), t.domain()).expect("shape of a left inverse");
    let inner = compose(&HomogeneousMap::from_linear(solver), &metric_projector(&r_t)).expect("spaces agree");
    let tm = compose(&metric_residual(&n_t), &inner)
        .expect("spaces agree")
        .with_label("T^M");
    if t.domain().norm.is_euclidean() && tm.as_linear().is_none() {
        // pi_N linear: T^M(y + r) = T^M(y) + T^M(r) for r in R(T).
        tm.declare_quasi_additive(r_t)
    } else {
        tm
    }
}

/// Moore–Penrose metric generalized inverse `T^M` with `P = pi_N(T)` and
/// `Q = pi_R(T)`.
pub fn metric_geninv(t: &LinearMap) -> Result<GenInverseBundle> {
    non_zero(t)?;
    let n_t = kernel(t);
    let r_t = range(t);
    Ok(GenInverseBundle {
        t: t.clone(),
        th: metric_evaluator(t),
        p: metric_projector(&n_t),
        q: metric_projector(&r_t),
        species: Species::Metric,
        kernel: n_t,
        range: r_t,
    })
}

/// `(I - pi_N(T)) Th pi_R(T)` for any generalized inverse in the bundle;
/// equals `T^M`.
pub fn tm_from_th(bundle: &GenInverseBundle) -> Result<HomogeneousMap> {
    let inner = compose(&bundle.th, &metric_projector(&bundle.range))?;
    Ok(compose(&metric_residual(&bundle.kernel), &inner)?.with_label("(I - pi_N) Th pi_R"))
}

/// Quasi-linear generalized inverse from a linear projector `P` onto `N(T)`
/// and `Q = pi_R(T)`.
pub fn quasi_linear_geninv(t: &LinearMap, p: &LinearMap) -> Result<GenInverseBundle> {
    non_zero(t)?;
    let x_space = t.domain();
    if p.domain() != x_space || p.codomain() != x_space {
        return Err(mismatch("P must act on the domain of T"));
    }
    let pm = p.matrix();
    let scale = pm.amax().max(1.0);
    if (pm * pm - pm).amax() > 1e-10 * scale * scale {
        return Err(mismatch("P is not idempotent"));
    }
    let n_t = kernel(t);
    if !subspace_equal(&crate::subspace::range(p), &n_t, SUBSPACE_TOL) {
        return Err(mismatch("range of P is not N(T)"));
    }
    let q = metric_projector(&range(t));
    let mut bundle = construct_h_species(
        t,
        HomogeneousMap::linear_with_label(p.clone(), "P"),
        q,
        Species::QuasiLinear,
    )?;
    let mut rng = crate::sampling::rng_for(0x716c, "quasi_linear_geninv");
    let qa = check_quasi_additive(&bundle.th, &bundle.range, PRECHECK_SAMPLES, PRECHECK_TOL, &mut rng)?;
    if !qa.holds {
        return Err(Error::HypothesisViolation(format!(
            "T^H is not quasi-additive on R(T) (defect {:.3e})",
            qa.worst_defect
        )));
    }
    bundle.th = bundle
        .th
        .clone()
        .with_label("T^H")
        .declare_quasi_additive(bundle.range.clone());
    Ok(bundle)
}

/// Euclidean orthogonal projector onto `N(T)`, the default linear `P`.
pub fn orthogonal_kernel_projector(t: &LinearMap) -> LinearMap {
    let n_t = kernel(t);
    LinearMap::new(n_t.euclidean_projector(), t.domain(), t.domain()).expect("square")
}

/// Pointwise agreement of two maps on random vectors: worst relative defect.
pub fn pointwise_defect(a: &HomogeneousMap, b: &HomogeneousMap, samples: usize, rng: &mut CheckRng) -> Result<f64> {
    let dn = a.domain();
    let cn = a.codomain();
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let y = random_normal(rng, dn.dim);
        let u = a.eval(&y)?;
        let v = b.eval(&y)?;
        let scale = cn.norm_of(&u).max(cn.norm_of(&v)).max(dn.norm_of(&y));
        worst = worst.max(cn.norm_of(&(u - v)) / scale);
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricCertificates {
    /// Largest `(||x*|| - ||x* + z||) / ||x*||` over sampled `z in N(T)`;
    /// non-positive when the minimal-norm property holds.
    pub minimal_norm_excess: f64,
    /// Largest `(||T x* - y|| - ||T x - y||) / ||y||` over sampled `x`.
    pub best_approximation_excess: f64,
}

impl MetricCertificates {
    pub fn holds(&self, tol: f64) -> bool {
        self.minimal_norm_excess <= tol && self.best_approximation_excess <= tol
    }
}

/// Minimal-norm and best-approximation certificates of `x* = Th(y)` against
/// random competitors at several scales.
pub fn metric_certificates(
    bundle: &GenInverseBundle,
    points: usize,
    competitors: usize,
    rng: &mut CheckRng,
) -> Result<MetricCertificates> {
    let t = &bundle.t;
    let xs = t.domain();
    let ys = t.codomain();
    let mut out = MetricCertificates {
        minimal_norm_excess: f64::NEG_INFINITY,
        best_approximation_excess: f64::NEG_INFINITY,
    };
    for _ in 0..points {
        let y = random_normal(rng, ys.dim);
        let x = bundle.th.eval(&y)?;
        let nx = xs.norm_of(&x);
        let res = ys.norm_of(&(t.apply(&x) - &y));
        let ny = ys.norm_of(&y);
        for c in 0..competitors {
            let scale = [1.0, 1e-2, 1e-4][c % 3] * nx.max(1e-300);
            if bundle.kernel.dim() > 0 {
                let z = random_in_span(rng, bundle.kernel.basis());
                let z = &z * (scale / z.norm().max(1e-300));
                out.minimal_norm_excess = out
                    .minimal_norm_excess
                    .max((nx - xs.norm_of(&(&x + z))) / nx.max(1e-300));
            }
            let w = random_normal(rng, xs.dim) * scale;
            let other = ys.norm_of(&(t.apply(&(&x + w)) - &y));
            out.best_approximation_excess = out.best_approximation_excess.max((res - other) / ny.max(1e-300));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulusCheck {
    /// Estimate of the reduced minimum modulus.
    pub gamma: f64,
    /// Sampled lower bound of `||Th||`, raised by every tested point.
    pub th_norm_lower: f64,
    /// `gamma * th_norm_lower`; `>= 1` when the check holds.
    pub product: f64,
    /// Every tested `x` satisfied `dist(x, N(T)) <= ||Th(T x)||`.
    pub distance_inequality: bool,
}

impl ModulusCheck {
    pub fn holds(&self) -> bool {
        self.distance_inequality && self.product >= 1.0 - 1e-6
    }
}

/// Tests `dist(x, N(T)) <= ||Th(T x)|| <= ||Th|| ||T x||` on samples that
/// include the witness of the modulus estimate, then `gamma ||Th|| >= 1`
/// with `||Th||` replaced by the largest ratio seen.
pub fn check_modulus_bound(bundle: &GenInverseBundle, samples: usize, rng: &mut CheckRng) -> Result<ModulusCheck> {
    let t = &bundle.t;
    let xs = t.domain();
    let ys = t.codomain();
    let gamma = reduced_min_modulus(t)?;
    let mut est = norm_estimate(&bundle.th, 32)?.value;
    let mut points: Vec<DVector<f64>> = vec![gamma.witness.clone()];
    points.extend((0..samples).map(|_| random_normal(rng, xs.dim)));
    let mut ok = true;
    for x in points {
        let tx = t.apply(&x);
        let ntx = ys.norm_of(&tx);
        if ntx == 0.0 {
            continue;
        }
        let d = dist_to_subspace(&LpVector::new(xs, x.clone())?, &bundle.kernel)?;
        let a = xs.norm_of(&bundle.th.eval(&tx)?);
        if d > a * (1.0 + 1e-9) + 1e-14 * xs.norm_of(&x) {
            ok = false;
        }
        est = est.max(a / ntx);
    }
    Ok(ModulusCheck {
        gamma: gamma.value,
        th_norm_lower: est,
        product: gamma.value * est,
        distance_inequality: ok,
    })
}

/// Matrix of a linear projector onto `N(T)` along a random complement, for
/// building non-orthogonal quasi-linear inverses.
pub fn oblique_kernel_projector(t: &LinearMap, rng: &mut CheckRng) -> LinearMap {
    let n_t = kernel(t);
    let k = n_t.dim();
    let n = t.domain().dim;
    if k == 0 {
        return LinearMap::zeros(t.domain(), t.domain());
    }
    // P = N (Wᵀ N)^{-1} Wᵀ with W = N + small random tilt.
    let nb = n_t.basis();
    let w = nb + crate::sampling::random_matrix(rng, n, k) * 0.3;
    let m = w.transpose() * nb;
    let inv = m.try_inverse().unwrap_or_else(|| DMatrix::identity(k, k));
    LinearMap::new(nb * inv * w.transpose(), t.domain(), t.domain()).expect("square")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::rng_for;
    use crate::space::LpSpace;

    fn lin(rows: usize, cols: usize, data: &[f64], dom: LpSpace, cod: LpSpace) -> LinearMap {
        LinearMap::new(DMatrix::from_row_slice(rows, cols, data), dom, cod).unwrap()
    }

    fn e(n: usize) -> LpSpace {
        LpSpace::euclidean(n)
    }

    #[test]
    fn diagonal_rank_one_has_classical_inverse() {
        let t = lin(2, 2, &[1.0, 0.0, 0.0, 0.0], e(2), e(2));
        let p = HomogeneousMap::from_linear(orthogonal_kernel_projector(&t));
        let q = metric_projector(&range(&t));
        let b = construct_h(&t, p, q).unwrap();
        let v = b.th().eval(&DVector::from_vec(vec![3.0, -2.0])).unwrap();
        assert_eq!(v.as_slice(), &[3.0, 0.0]);
        let m = metric_geninv_pointwise(&t, &LpVector::from_slice(e(2), &[3.0, -2.0]).unwrap()).unwrap();
        assert!((m.coords() - DVector::from_vec(vec![3.0, 0.0])).norm() < 1e-15);
    }

    #[test]
    fn coordinate_range_in_l4_is_truncation() {
        let y = LpSpace::new(3, 4.0).unwrap();
        let t = lin(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0], e(2), y);
        let p = HomogeneousMap::from_linear(orthogonal_kernel_projector(&t));
        let b = construct_h(&t, p, metric_projector(&range(&t))).unwrap();
        let out = b.th().eval(&DVector::from_vec(vec![0.7, -1.2, 5.0])).unwrap();
        assert!((out - DVector::from_vec(vec![0.7, -1.2])).norm() < 1e-10);
    }

    #[test]
    fn scalar_column_into_l4_matches_bisection_root() {
        let y = LpSpace::new(3, 4.0).unwrap();
        let t = lin(3, 1, &[1.0, 1.0, 1.0], e(1), y);
        let f = |c: f64| (1.0 - c).powi(3) - 2.0 * c.powi(3);
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        let x = metric_geninv_pointwise(&t, &LpVector::from_slice(y, &[1.0, 0.0, 0.0]).unwrap()).unwrap();
        assert!((x.coords()[0] - 0.5 * (lo + hi)).abs() < 1e-10);
    }

    #[test]
    fn injective_consistent_system_is_solved_exactly() {
        let y = LpSpace::new(3, 3.0).unwrap();
        let x = LpSpace::new(2, 1.5).unwrap();
        let t = lin(3, 2, &[1.0, 2.0, 0.0, 1.0, -1.0, 0.5], x, y);
        let target = t.apply(&DVector::from_vec(vec![0.3, -0.8]));
        let sol = metric_geninv_pointwise(&t, &LpVector::new(y, target.clone()).unwrap()).unwrap();
        assert!((t.apply(sol.coords()) - target).norm() < 1e-10);
    }

    #[test]
    fn zero_operator_is_rejected() {
        let t = LinearMap::zeros(e(2), e(2));
        assert!(matches!(metric_geninv(&t), Err(Error::ZeroOperator)));
    }

    #[test]
    fn two_particular_solutions_agree() {
        let t = lin(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0], e(3), e(2));
        let a = linalg::lstsq(t.matrix(), &DVector::from_vec(vec![1.0, 2.0]));
        let b = linalg::basic_solution(t.matrix(), &DVector::from_vec(vec![1.0, 2.0]));
        assert!((&a - &b).norm() > 1e-3);
        let p = orthogonal_kernel_projector(&t);
        let ra = &a - p.apply(&a);
        let rb = &b - p.apply(&b);
        assert!((ra - rb).norm() < 1e-10);
    }

    #[test]
    fn inconsistent_q_is_a_mismatch() {
        let t = lin(2, 2, &[1.0, 0.0, 0.0, 0.0], e(2), e(2));
        let p = HomogeneousMap::from_linear(orthogonal_kernel_projector(&t));
        let err = construct_h(&t, p, HomogeneousMap::identity(e(2))).unwrap_err();
        assert!(matches!(err, Error::ProjectorMismatch(_)));
    }

    #[test]
    fn metric_bundle_identities_in_mixed_norms() {
        let x = LpSpace::new(3, 3.0).unwrap();
        let y = LpSpace::new(4, 1.5).unwrap();
        let t = lin(
            4,
            3,
            &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 2.0, 2.0, -1.0, 1.0],
            x,
            y,
        );
        let b = metric_geninv(&t).unwrap();
        let mut rng = rng_for(3, "ids");
        let r = b.check_identities(100, &mut rng).unwrap();
        assert!(r.holds(1e-8), "{r:?}");
        assert!(b.check_species(20, &mut rng).unwrap());
        let c = metric_certificates(&b, 10, 30, &mut rng).unwrap();
        assert!(c.holds(1e-9), "{c:?}");
        let m = check_modulus_bound(&b, 20, &mut rng).unwrap();
        assert!(m.holds(), "{m:?}");
    }

    #[test]
    fn composition_formula_reproduces_metric_inverse() {
        let x = LpSpace::new(3, 4.0).unwrap();
        let y = LpSpace::new(3, 3.0).unwrap();
        let t = lin(3, 3, &[1.0, 2.0, 3.0, 0.0, 1.0, 1.0, 1.0, 3.0, 4.0], x, y);
        let mut rng = rng_for(5, "cor");
        let ql = quasi_linear_geninv(&t, &oblique_kernel_projector(&t, &mut rng)).unwrap();
        let tm = tm_from_th(&ql).unwrap();
        let direct = metric_geninv(&t).unwrap();
        assert!(pointwise_defect(&tm, direct.th(), 50, &mut rng).unwrap() < 1e-8);
        let fixed = tm_from_th(&direct).unwrap();
        assert!(pointwise_defect(&fixed, direct.th(), 50, &mut rng).unwrap() < 1e-8);
    }

    #[test]
    fn quasi_linear_bundle_is_quasi_additive_on_range() {
        let y = LpSpace::new(3, 4.0).unwrap();
        let t = lin(3, 2, &[1.0, 0.5, 0.2, 1.0, 1.0, -1.0], e(2), y);
        let b = quasi_linear_geninv(&t, &LinearMap::zeros(e(2), e(2))).unwrap();
        let mut rng = rng_for(6, "ql");
        assert!(
            check_quasi_additive(b.th(), b.range(), 64, 1e-8, &mut rng)
                .unwrap()
                .holds
        );
        assert!(b.check_identities(100, &mut rng).unwrap().holds(1e-8));
        // Left inverse after projection.
        for _ in 0..20 {
            let v = random_normal(&mut rng, 3);
            let x = b.th().eval(&v).unwrap();
            let qv = b.q().eval(&v).unwrap();
            assert!((t.apply(&x) - qv).norm() < 1e-9);
        }
    }

    #[test]
    fn non_projector_is_rejected() {
        let t = lin(2, 2, &[1.0, 0.0, 0.0, 0.0], e(2), e(2));
        let bad = LinearMap::identity(e(2)).scaled(0.5);
        assert!(quasi_linear_geninv(&t, &bad).is_err());
    }
}
