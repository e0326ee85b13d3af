//! Perturbations `T̄ = T + dT` of an operator with a known generalized
//! inverse: stability, the perturbed inverse, and the subspace transport it
//! induces.
//!
//! Everything here rests on the map `A = Th ∘ dT` being linear, which holds
//! when `Th` is quasi-additive on `R(dT)`. That hypothesis is certified on
//! samples and then `A` is materialized once per scenario.

mod bounds;
mod equivalence;

pub use bounds::*;
pub use equivalence::*;

use std::sync::OnceLock;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geninv::{GenInverseBundle, Species};
use crate::operators::{
    check_quasi_additive, compose, invert_i_plus_homogeneous, invert_linear, materialize_linear, HomogeneousMap,
    LinearMap,
};
use crate::sampling::{random_in_span, random_normal, rng_for, CheckRng};
use crate::subspace::{image, kernel, range, subspace_equal, Subspace, SUBSPACE_TOL};

/// Tolerance of the linearity certificate for `Th ∘ dT`.
pub const LINEARITY_TOL: f64 = 1e-8;

/// Relative tolerance for sampled membership in a linear subspace.
pub const MEMBERSHIP_TOL: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct PerturbationScenario {
    t: LinearMap,
    dt: LinearMap,
    bundle: GenInverseBundle,
    tbar: LinearMap,
    th_dt: OnceLock<Result<LinearMap>>,
}

impl PerturbationScenario {
    pub fn new(bundle: GenInverseBundle, dt: LinearMap) -> Result<Self> {
        let t = bundle.t().clone();
        if dt.domain() != t.domain() || dt.codomain() != t.codomain() {
            return Err(Error::SpaceMismatch {
                context: "PerturbationScenario::new",
                detail: "dT must act between the spaces of T".into(),
            });
        }
        let tbar = t.plus(&dt)?;
        Ok(PerturbationScenario {
            t,
            dt,
            bundle,
            tbar,
            th_dt: OnceLock::new(),
        })
    }

    pub fn t(&self) -> &LinearMap {
        &self.t
    }

    pub fn dt(&self) -> &LinearMap {
        &self.dt
    }

    pub fn tbar(&self) -> &LinearMap {
        &self.tbar
    }

    pub fn bundle(&self) -> &GenInverseBundle {
        &self.bundle
    }

    pub fn th(&self) -> &HomogeneousMap {
        self.bundle.th()
    }

    /// Matrix of `Th ∘ dT`, certified and cached.
    pub fn th_dt(&self) -> Result<LinearMap> {
        self.th_dt
            .get_or_init(|| compute_th_dt(self.bundle.th(), &self.dt))
            .clone()
    }

    /// `I + Th dT`.
    pub fn i_plus_a(&self) -> Result<LinearMap> {
        LinearMap::identity(self.t.domain()).plus(&self.th_dt()?)
    }

    pub fn i_plus_a_inverse(&self) -> Result<LinearMap> {
        invert_linear(&self.i_plus_a()?)
    }

    /// `Phi = (I + Th dT)^{-1} Th`, defined whether or not the perturbation
    /// is stable.
    pub fn phi(&self) -> Result<HomogeneousMap> {
        let inv = HomogeneousMap::from_linear(self.i_plus_a_inverse()?);
        Ok(compose(&inv, self.bundle.th())?.with_label("Phi"))
    }

    /// `(I + dT Th)^{-1}` in the closed form `I - dT Phi`.
    pub fn g(&self) -> Result<HomogeneousMap> {
        invert_i_plus_homogeneous(&self.dt, self.bundle.th(), &self.phi()?)
    }

    /// `I + dT Th`.
    pub fn i_plus_dt_th(&self) -> Result<HomogeneousMap> {
        let dt_th = compose(&HomogeneousMap::from_linear(self.dt.clone()), self.bundle.th())?;
        HomogeneousMap::identity(self.t.codomain()).add(&dt_th)
    }
}

fn compute_th_dt(th: &HomogeneousMap, dt: &LinearMap) -> Result<LinearMap> {
    let x = dt.domain();
    if dt.is_zero() {
        return Ok(LinearMap::zeros(x, x));
    }
    if th.as_linear().is_none() {
        let mut rng = rng_for(0x7464, "linearize");
        let qa = check_quasi_additive(th, &range(dt), 64, LINEARITY_TOL, &mut rng)?;
        if !qa.holds {
            let (a, b) = qa.counterexample.unwrap_or_default();
            return Err(Error::CertificateFailure {
                x: a.iter().cloned().collect(),
                y: b.iter().cloned().collect(),
                defect: qa.worst_defect,
            });
        }
    }
    let h = compose(th, &HomogeneousMap::from_linear(dt.clone()))?;
    materialize_linear(&h, LINEARITY_TOL)
}

/// Matrix of `Th ∘ dT`; fails with a certificate error when `Th` is not
/// quasi-additive on `R(dT)`.
pub fn linearize_th_dt(s: &PerturbationScenario) -> Result<LinearMap> {
    s.th_dt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Holds,
    Fails,
    Undecidable,
}

impl Verdict {
    pub fn from_bool(b: bool) -> Self {
        if b {
            Verdict::Holds
        } else {
            Verdict::Fails
        }
    }
}

/// Exact test `(I + Th dT) N(T̄) = N(T)`.
pub fn stability_exact(s: &PerturbationScenario) -> Result<bool> {
    let ipa = s.i_plus_a()?;
    invert_linear(&ipa)?;
    let img = image(&ipa, &kernel(s.tbar()))?;
    Ok(subspace_equal(&img, &kernel(s.t()), SUBSPACE_TOL))
}

/// Outcome of the direct test of `R(T̄) ∩ N(Th) = {0}`.
#[derive(Debug, Clone)]
pub struct IntersectionTest {
    pub verdict: Verdict,
    pub method: &'static str,
    /// A nonzero `y in R(T̄)` with `Th(y) = 0`, when one was found.
    pub witness: Option<DVector<f64>>,
}

/// Searches `R(T̄) ∩ N(Th)` for a nonzero element.
///
/// `y = T̄x` lies in `N(Th)` iff `x in N(Th ∘ T̄)`. When `Th ∘ T̄` is
/// certified linear the search is over a basis of its kernel plus random
/// combinations; otherwise, when `Q` is linear, `N(Th) = N(Q)` is a
/// subspace; otherwise the ratio `||Th(T̄x)|| / ||T̄x||` is minimized from
/// random starts.
pub fn intersection_test(s: &PerturbationScenario, samples: usize, rng: &mut CheckRng) -> Result<IntersectionTest> {
    let th = s.th();
    let tbar = s.tbar();
    let ys = tbar.codomain();
    let tbar_map = HomogeneousMap::from_linear(tbar.clone());
    let th_tbar = compose(th, &tbar_map)?;
    let tbar_scale = crate::linalg::spectral_norm(tbar.matrix()).max(f64::MIN_POSITIVE);

    if let Ok(m) = materialize_linear(&th_tbar, LINEARITY_TOL) {
        let k = kernel(&m);
        let mut worst: Option<(f64, DVector<f64>)> = None;
        let mut consider = |x: DVector<f64>| {
            let y = tbar.apply(&x);
            let r = y.norm() / (tbar_scale * x.norm()).max(f64::MIN_POSITIVE);
            if worst.as_ref().is_none_or(|(w, _)| r > *w) {
                worst = Some((r, y));
            }
        };
        for j in 0..k.dim() {
            consider(k.basis().column(j).into_owned());
        }
        if k.dim() > 0 {
            for _ in 0..samples.min(64) {
                consider(random_in_span(rng, k.basis()));
            }
        }
        return Ok(match worst {
            Some((r, y)) if r > MEMBERSHIP_TOL => IntersectionTest {
                verdict: Verdict::Fails,
                method: "kernel of the linear map Th T̄",
                witness: Some(y),
            },
            _ => IntersectionTest {
                verdict: Verdict::Holds,
                method: "kernel of the linear map Th T̄",
                witness: None,
            },
        });
    }

    if let Ok(q) = materialize_linear(s.bundle().q(), LINEARITY_TOL) {
        let nq = kernel(&q);
        let rt = range(tbar);
        let meet = crate::subspace::trivial_intersection(&rt, &nq, SUBSPACE_TOL);
        return Ok(IntersectionTest {
            verdict: Verdict::from_bool(meet),
            method: "R(T̄) against the subspace N(Q)",
            witness: None,
        });
    }

    // Nonlinear search over the row space of T̄.
    let row = crate::linalg::column_space(&tbar.matrix().transpose());
    let r = row.ncols();
    if r == 0 {
        return Ok(IntersectionTest {
            verdict: Verdict::Holds,
            method: "T̄ = 0",
            witness: None,
        });
    }
    let xs = tbar.domain();
    let ratio = |c: &DVector<f64>| -> Result<f64> {
        let x = &row * c;
        let y = tbar.apply(&x);
        Ok(xs.norm_of(&th.eval(&y)?) / ys.norm_of(&y).max(f64::MIN_POSITIVE))
    };
    let mut best = (f64::INFINITY, DVector::zeros(r));
    for _ in 0..samples.clamp(8, 64) {
        let c = crate::sampling::random_unit_normal(rng, r);
        let f = ratio(&c)?;
        if f < best.0 {
            best = (f, c);
        }
    }
    let (mut f, mut c) = best;
    let mut step = 0.2;
    let mut fails = 0;
    while step > 1e-9 && fails < 400 && f > 1e-12 {
        let trial = (&c + crate::sampling::random_unit_normal(rng, r) * step).normalize();
        let ft = ratio(&trial)?;
        if ft < f {
            f = ft;
            c = trial;
        } else {
            fails += 1;
            if fails % 10 == 0 {
                step *= 0.5;
            }
        }
    }
    let th_scale = crate::operators::norm_estimate(th, 16)?.value.max(f64::MIN_POSITIVE);
    let found = f <= MEMBERSHIP_TOL * th_scale;
    Ok(IntersectionTest {
        verdict: if found { Verdict::Fails } else { Verdict::Undecidable },
        method: "minimization of ||Th(T̄x)|| / ||T̄x||",
        witness: if found { Some(tbar.apply(&(&row * c))) } else { None },
    })
}

/// Stability of the perturbation, decided by the exact kernel transport test
/// and cross-checked by the direct intersection search. The two routes must
/// agree whenever the second one is decided.
pub fn stable_perturbation(s: &PerturbationScenario, samples: usize, rng: &mut CheckRng) -> Result<bool> {
    let exact = stability_exact(s)?;
    let direct = intersection_test(s, samples, rng)?;
    match direct.verdict {
        Verdict::Undecidable => {}
        v if v != Verdict::from_bool(exact) => {
            return Err(Error::RouteDisagreement(format!(
                "kernel transport says stable = {exact}; {} says {v:?}",
                direct.method
            )));
        }
        _ => {}
    }
    Ok(exact)
}

/// Number of samples used to validate a perturbed bundle on construction.
pub const VALIDATION_SAMPLES: usize = 64;

/// Generalized inverse `Phi` of `T̄` with `P̄ = (I + Th dT)^{-1} P` and
/// `Q̄ = T̄ Phi`.
pub fn perturbed_h(s: &PerturbationScenario) -> Result<GenInverseBundle> {
    let inv = s.i_plus_a_inverse()?;
    let mut rng = rng_for(0x7068, "perturbed_h");
    if !stable_perturbation(s, VALIDATION_SAMPLES, &mut rng)? {
        return Err(Error::StabilityViolation(
            "R(T̄) meets N(Th): (I + Th dT) N(T̄) differs from N(T)".into(),
        ));
    }
    let bundle = perturbed_parts(s, &inv)?;
    let report = bundle.check_identities(VALIDATION_SAMPLES, &mut rng)?;
    if !report.holds(1e-8) {
        return Err(Error::StabilityViolation(format!(
            "Phi fails the generalized-inverse identities for T̄ (defect {:.3e})",
            report.worst()
        )));
    }
    Ok(bundle)
}

/// The perturbed bundle assembled without any stability test.
pub(crate) fn perturbed_parts(s: &PerturbationScenario, inv: &LinearMap) -> Result<GenInverseBundle> {
    let inv_map = HomogeneousMap::from_linear(inv.clone());
    let phi = compose(&inv_map, s.th())?.with_label("Phi");
    let pbar = compose(&inv_map, s.bundle().p())?.with_label("P̄");
    let qbar = compose(&HomogeneousMap::from_linear(s.tbar().clone()), &phi)?.with_label("Q̄");
    let species = match s.bundle().species() {
        Species::QuasiLinear => Species::QuasiLinear,
        _ => Species::Homogeneous,
    };
    Ok(GenInverseBundle::from_parts(s.tbar().clone(), phi, pbar, qbar, species))
}

/// Sampled `R(Phi) = R(Th)` and `N(Phi) = N(Th)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeNullCheck {
    pub range_defect: f64,
    pub null_defect: f64,
}

impl RangeNullCheck {
    pub fn holds(&self, tol: f64) -> bool {
        self.range_defect <= tol && self.null_defect <= tol
    }
}

/// Mutual membership tests: `x in R(Th)` iff `P x = 0`, `w in R(Phi)` iff
/// `P̄ w = 0`; `g - Q g in N(Th)` and `g - Q̄ g in N(Phi)`.
pub fn check_phi_ranges(
    s: &PerturbationScenario,
    perturbed: &GenInverseBundle,
    samples: usize,
    rng: &mut CheckRng,
) -> Result<RangeNullCheck> {
    let xs = s.t().domain();
    let ys = s.t().codomain();
    let b = s.bundle();
    let mut range_defect = 0.0f64;
    let mut null_defect = 0.0f64;
    for _ in 0..samples {
        let y = random_normal(rng, ys.dim);
        let x = perturbed.th().eval(&y)?;
        range_defect = range_defect.max(xs.norm_of(&b.p().eval(&x)?) / xs.norm_of(&x).max(f64::MIN_POSITIVE));
        let w = b.th().eval(&y)?;
        range_defect = range_defect.max(xs.norm_of(&perturbed.p().eval(&w)?) / xs.norm_of(&w).max(f64::MIN_POSITIVE));

        let g = random_normal(rng, ys.dim);
        let n1 = &g - b.q().eval(&g)?;
        null_defect = null_defect.max(xs.norm_of(&perturbed.th().eval(&n1)?) / ys.norm_of(&g));
        let n2 = &g - perturbed.q().eval(&g)?;
        null_defect = null_defect.max(xs.norm_of(&b.th().eval(&n2)?) / ys.norm_of(&g));
    }
    Ok(RangeNullCheck {
        range_defect,
        null_defect,
    })
}

/// Worst round-trip defect of `G = I - dT Phi` against `I + dT Th`, both ways.
pub fn inverse_roundtrip(s: &PerturbationScenario, samples: usize, rng: &mut CheckRng) -> Result<f64> {
    let ys = s.t().codomain();
    let g = s.g()?;
    let f = s.i_plus_dt_th()?;
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let y = random_normal(rng, ys.dim);
        let ny = ys.norm_of(&y);
        worst = worst.max(ys.norm_of(&(f.eval(&g.eval(&y)?)? - &y)) / ny);
        worst = worst.max(ys.norm_of(&(g.eval(&f.eval(&y)?)? - &y)) / ny);
    }
    Ok(worst)
}

/// Worst pointwise gap between the two expressions `(I + Th dT)^{-1} Th` and
/// `Th (I + dT Th)^{-1}`.
pub fn phi_formula_consistency(s: &PerturbationScenario, samples: usize, rng: &mut CheckRng) -> Result<f64> {
    let phi = s.phi()?;
    let other = compose(s.th(), &s.g()?)?;
    crate::geninv::pointwise_defect(&phi, &other, samples, rng)
}

/// Exact `N(T̄) = (I + Th dT)^{-1} N(T)`.
pub fn kernel_transport(s: &PerturbationScenario) -> Result<bool> {
    let inv = s.i_plus_a_inverse()?;
    let img = image(&inv, &kernel(s.t()))?;
    Ok(subspace_equal(&kernel(s.tbar()), &img, SUBSPACE_TOL))
}

/// Sampled two-sided inclusion `R(T̄) = (I + dT Th) R(T)`: forward images of
/// `R(T)` land in `R(T̄)`, and `G` maps `R(T̄)` back into `R(T)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeTransport {
    pub forward_defect: f64,
    pub backward_defect: f64,
}

impl RangeTransport {
    pub fn holds(&self) -> bool {
        self.forward_defect <= MEMBERSHIP_TOL && self.backward_defect <= MEMBERSHIP_TOL
    }
}

pub fn range_transport(s: &PerturbationScenario, samples: usize, rng: &mut CheckRng) -> Result<RangeTransport> {
    let r_t = range(s.t());
    let r_tbar = range(s.tbar());
    let f = s.i_plus_dt_th()?;
    let g = s.g()?;
    let mut out = RangeTransport {
        forward_defect: 0.0,
        backward_defect: 0.0,
    };
    for _ in 0..samples {
        if r_t.dim() > 0 {
            let r = random_in_span(rng, r_t.basis());
            let y = f.eval(&r)?;
            out.forward_defect = out.forward_defect.max(relative_residual(&r_tbar, &y));
        }
        if r_tbar.dim() > 0 {
            let y = random_in_span(rng, r_tbar.basis());
            let back = g.eval(&y)?;
            out.backward_defect = out.backward_defect.max(relative_residual(&r_t, &back));
        }
    }
    Ok(out)
}

/// Euclidean distance of `v` from `sub`, relative to `||v||`.
pub(crate) fn relative_residual(sub: &Subspace, v: &DVector<f64>) -> f64 {
    let n = v.norm();
    if n == 0.0 {
        return 0.0;
    }
    sub.euclidean_residual(v).norm() / n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geninv::{metric_geninv, quasi_linear_geninv};
    use crate::space::LpSpace;
    use nalgebra::DMatrix;

    fn e(n: usize) -> LpSpace {
        LpSpace::euclidean(n)
    }

    fn diag_case() -> PerturbationScenario {
        let t = LinearMap::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]), e(2), e(2)).unwrap();
        let dt = LinearMap::new(DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 0.5]), e(2), e(2)).unwrap();
        PerturbationScenario::new(metric_geninv(&t).unwrap(), dt).unwrap()
    }

    fn f2_case(eps: f64) -> PerturbationScenario {
        let y = LpSpace::new(3, 4.0).unwrap();
        let t = LinearMap::new(
            DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 0.0, 1.0, 1.0, 1.0, 3.0, 4.0]),
            e(3),
            y,
        )
        .unwrap();
        let dt = t.scaled(eps);
        PerturbationScenario::new(metric_geninv(&t).unwrap(), dt).unwrap()
    }

    #[test]
    fn zero_perturbation_linearizes_to_zero() {
        let s = f2_case(0.0);
        assert!(linearize_th_dt(&s).unwrap().is_zero());
        let mut rng = rng_for(1, "z");
        assert!(stable_perturbation(&s, 32, &mut rng).unwrap());
        let phi = perturbed_h(&s).unwrap();
        assert!(crate::geninv::pointwise_defect(phi.th(), s.th(), 32, &mut rng).unwrap() < 1e-12);
    }

    #[test]
    fn scaled_perturbation_linearizes_to_scaled_complement() {
        let s = f2_case(0.1);
        let a = linearize_th_dt(&s).unwrap();
        let n = kernel(s.t());
        let expected = (DMatrix::identity(3, 3) - n.euclidean_projector()) * 0.1;
        assert!((a.matrix() - expected).amax() < 1e-9);
    }

    #[test]
    fn scaled_perturbation_divides_the_inverse() {
        let s = f2_case(0.1);
        let phi = perturbed_h(&s).unwrap();
        let direct = metric_geninv(s.tbar()).unwrap();
        let mut rng = rng_for(2, "s");
        for _ in 0..20 {
            let y = random_normal(&mut rng, 3);
            let a = phi.th().eval(&y).unwrap();
            let b = s.th().eval(&y).unwrap() / 1.1;
            assert!((&a - &b).norm() < 1e-9 * b.norm().max(1.0));
            assert!((direct.th().eval(&y).unwrap() - &b).norm() < 1e-9 * b.norm().max(1.0));
        }
    }

    #[test]
    fn rank_increase_is_unstable() {
        let s = diag_case();
        let mut rng = rng_for(3, "d");
        assert!(!stable_perturbation(&s, 32, &mut rng).unwrap());
        assert!(matches!(perturbed_h(&s), Err(Error::StabilityViolation(_))));
        let direct = intersection_test(&s, 32, &mut rng).unwrap();
        assert_eq!(direct.verdict, Verdict::Fails);
    }

    #[test]
    fn closed_form_inverse_round_trips() {
        let s = f2_case(0.2);
        let mut rng = rng_for(4, "g");
        assert!(inverse_roundtrip(&s, 50, &mut rng).unwrap() < 1e-9);
        assert!(phi_formula_consistency(&s, 50, &mut rng).unwrap() < 1e-9);
        assert!(kernel_transport(&s).unwrap());
        assert!(range_transport(&s, 50, &mut rng).unwrap().holds());
        let pb = perturbed_h(&s).unwrap();
        assert!(check_phi_ranges(&s, &pb, 50, &mut rng).unwrap().holds(1e-8));
    }

    #[test]
    fn nonlinear_th_off_its_range_is_not_certified() {
        // Projections onto hyperplanes are linear in every lp space, so the
        // range must have codimension at least two.
        let y = LpSpace::new(3, 4.0).unwrap();
        let t = LinearMap::new(DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]), e(2), y).unwrap();
        let q = DMatrix::from_row_slice(3, 2, &[0.0, 0.1, 0.2, 0.0, 0.0, 0.3]);
        let dt = LinearMap::new(q, e(2), y).unwrap();
        let s = PerturbationScenario::new(metric_geninv(&t).unwrap(), dt).unwrap();
        assert!(matches!(linearize_th_dt(&s), Err(Error::CertificateFailure { .. })));
    }

    #[test]
    fn quasi_linear_scenario_keeps_species() {
        let y = LpSpace::new(3, 3.0).unwrap();
        let t = LinearMap::new(DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]), e(2), y).unwrap();
        let b = quasi_linear_geninv(&t, &LinearMap::zeros(e(2), e(2))).unwrap();
        let s = PerturbationScenario::new(b, t.scaled(0.05)).unwrap();
        assert_eq!(perturbed_h(&s).unwrap().species(), Species::QuasiLinear);
    }
}
