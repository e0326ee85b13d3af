//! Norm bounds for perturbed generalized inverses.
//!
//! Every comparison is `observed <= bound` where `observed` is exact or a
//! sampled lower bound and `bound` is built from certified upper bounds only,
//! so a reported violation is a genuine counterexample.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{stability_exact, PerturbationScenario, Verdict};
use crate::error::{Error, Result};
use crate::geninv::{metric_geninv, pointwise_defect, Species};
use crate::operators::{
    certified_matrix_bound, certified_norm_bound, check_quasi_additive, compose, invert_linear, materialize_linear,
    norm_estimate, CertifiedBound, HomogeneousMap, LinearMap, NormKind,
};
use crate::projection::{metric_projector, metric_residual};
use crate::sampling::{random_normal, CheckRng};
use crate::subspace::{contains, kernel, range, subspace_equal, SUBSPACE_TOL};

/// Relative slack on the large side of every bound comparison.
pub const BOUND_RTOL: f64 = 1e-9;

/// Sample budget for norm estimates.
pub const NORM_BUDGET: usize = 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundStatus {
    Satisfied,
    Violated,
    Inapplicable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sidedness {
    /// Sampled lower bound on the left, certified upper bound on the right.
    SampledLeCertified,
    /// Both sides exact up to rounding.
    Exact,
    /// A pointwise inequality tested at each sample.
    Pointwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    AtMost,
    AtLeast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisCheck {
    pub name: String,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubCheck {
    pub name: String,
    pub bound: f64,
    pub observed: f64,
    pub relation: Relation,
    pub sidedness: Sidedness,
    pub holds: bool,
}

impl SubCheck {
    fn new(name: &str, observed: f64, relation: Relation, bound: f64, sidedness: Sidedness) -> Self {
        let holds = match relation {
            Relation::AtMost => le(observed, bound),
            Relation::AtLeast => le(bound, observed),
        };
        SubCheck {
            name: name.into(),
            bound,
            observed,
            relation,
            sidedness,
            holds,
        }
    }
}

fn le(a: f64, b: f64) -> bool {
    a <= b + BOUND_RTOL * b.abs().max(1e-3)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub name: String,
    pub hypotheses: Vec<HypothesisCheck>,
    pub bound_value: f64,
    pub bound_certificate: String,
    pub observed_value: f64,
    pub observed_kind: NormKind,
    pub sidedness: Sidedness,
    pub status: BoundStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda2: Option<f64>,
    pub sub_checks: Vec<SubCheck>,
    /// Informational values that are not part of the pass/fail decision.
    pub extras: Vec<(String, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<Vec<f64>>,
}

impl BoundReport {
    fn inapplicable(name: &str, hypotheses: Vec<HypothesisCheck>, note: String) -> Self {
        BoundReport {
            name: name.into(),
            hypotheses,
            bound_value: f64::NAN,
            bound_certificate: String::new(),
            observed_value: f64::NAN,
            observed_kind: NormKind::SampledLowerBound,
            sidedness: Sidedness::SampledLeCertified,
            status: BoundStatus::Inapplicable,
            lambda1: None,
            lambda2: None,
            sub_checks: Vec::new(),
            extras: Vec::new(),
            note: Some(note),
            counterexample: None,
        }
    }

    fn decide(
        name: &str,
        hypotheses: Vec<HypothesisCheck>,
        observed: (f64, NormKind),
        bound: CertifiedBound,
        sub_checks: Vec<SubCheck>,
    ) -> Self {
        let sidedness = match observed.1 {
            NormKind::Exact => Sidedness::Exact,
            NormKind::SampledLowerBound => Sidedness::SampledLeCertified,
        };
        let ok = le(observed.0, bound.value) && sub_checks.iter().all(|c| c.holds);
        BoundReport {
            name: name.into(),
            hypotheses,
            bound_value: bound.value,
            bound_certificate: bound.certificate,
            observed_value: observed.0,
            observed_kind: observed.1,
            sidedness,
            status: if ok {
                BoundStatus::Satisfied
            } else {
                BoundStatus::Violated
            },
            lambda1: None,
            lambda2: None,
            sub_checks,
            extras: Vec::new(),
            note: None,
            counterexample: None,
        }
    }

    /// Applicable and violated.
    pub fn violated(&self) -> bool {
        self.status == BoundStatus::Violated
    }
}

fn hyp(name: &str, ok: bool) -> HypothesisCheck {
    HypothesisCheck {
        name: name.into(),
        verdict: Verdict::from_bool(ok),
    }
}

/// Exact or sampled-below estimate of a ratio `||D|| / ||H||`, where the
/// denominator uses a certified upper bound.
fn relative_norm(d: &HomogeneousMap, h: &HomogeneousMap) -> Result<Option<(f64, NormKind, f64)>> {
    let Some(u) = certified_norm_bound(h) else {
        return Ok(None);
    };
    let est = norm_estimate(d, NORM_BUDGET)?;
    let kind = if est.kind == NormKind::Exact && h.as_linear().is_some() && d.as_linear().is_some() {
        let both_euclidean = h.domain().norm.is_euclidean() && h.codomain().norm.is_euclidean();
        if both_euclidean {
            NormKind::Exact
        } else {
            NormKind::SampledLowerBound
        }
    } else {
        NormKind::SampledLowerBound
    };
    Ok(Some((est.value / u.value, kind, u.value)))
}

/// Outcome of a sufficient-condition check for the existence of a perturbed
/// inverse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImplicationReport {
    pub name: String,
    pub hypotheses: Vec<HypothesisCheck>,
    pub applicable: bool,
    /// Whether the perturbed inverse was constructed.
    pub conclusion: Verdict,
    pub norm_bound: Option<CertifiedBound>,
}

impl ImplicationReport {
    pub fn satisfied(&self) -> bool {
        !self.applicable || self.conclusion == Verdict::Holds
    }
}

/// If `N(T) ⊂ N(dT)` or `R(dT) ⊂ R(T)`, and `||Th dT|| < 1` is certified,
/// the perturbed inverse must exist.
pub fn existence_check(s: &PerturbationScenario) -> Result<ImplicationReport> {
    let kernel_in = contains(&kernel(s.dt()), &kernel(s.t()), SUBSPACE_TOL);
    let range_in = contains(&range(s.t()), &range(s.dt()), SUBSPACE_TOL);
    let a = s.th_dt();
    let bound = a.as_ref().ok().map(certified_matrix_bound);
    let small = bound.as_ref().is_some_and(|b| b.value < 1.0);
    let hypotheses = vec![
        hyp("N(T) ⊂ N(dT)", kernel_in),
        hyp("R(dT) ⊂ R(T)", range_in),
        hyp("Th quasi-additive on R(dT)", a.is_ok()),
        hyp("||Th dT|| < 1 (certified)", small),
    ];
    let applicable = (kernel_in || range_in) && small;
    let conclusion = if a.is_ok() {
        Verdict::from_bool(super::perturbed_h(s).is_ok())
    } else {
        Verdict::Undecidable
    };
    Ok(ImplicationReport {
        name: "containment implies a perturbed inverse".into(),
        hypotheses,
        applicable,
        conclusion,
        norm_bound: bound,
    })
}

pub const PERTURBED_METRIC_NORM: &str = "metric inverse norm after perturbation";

/// `T̄^M = (I - pi_N(T̄)) (I + T^M dT)^{-1} T^M pi_R(T̄)`, cross-checked
/// against the direct metric inverse of `T̄`, and the bound
/// `||T̄^M|| <= 2 ||T^M|| / (1 - ||T^M dT||)`.
pub fn perturbed_metric_norm_bound(
    s: &PerturbationScenario,
    samples: usize,
    rng: &mut CheckRng,
) -> Result<(Option<HomogeneousMap>, BoundReport)> {
    let metric = s.bundle().species() == Species::Metric;
    let a = s.th_dt().ok();
    let ua = a.as_ref().map(certified_matrix_bound);
    let small = ua.as_ref().is_some_and(|b| b.value < 1.0);
    let stable = if small {
        stability_exact(s).unwrap_or(false)
    } else {
        false
    };
    let hypotheses = vec![
        hyp("metric inverse", metric),
        hyp("T^M quasi-additive on R(dT)", a.is_some()),
        hyp("||T^M dT|| < 1 (certified)", small),
        hyp("R(T̄) ∩ N(T^M) = {0}", stable),
    ];
    if !(metric && small && stable) {
        return Ok((
            None,
            BoundReport::inapplicable(PERTURBED_METRIC_NORM, hypotheses, "hypotheses not met".into()),
        ));
    }
    let ua = ua.expect("checked");
    let inv = HomogeneousMap::from_linear(s.i_plus_a_inverse()?);
    let tbar = s.tbar();
    let inner = compose(&compose(&inv, s.th())?, &metric_projector(&range(tbar)))?;
    let tbar_m = compose(&metric_residual(&kernel(tbar)), &inner)?.with_label("T̄^M (composition)");
    let direct = metric_geninv(tbar)?;
    let agree = pointwise_defect(&tbar_m, direct.th(), samples, rng)?;

    let Some(um) = certified_norm_bound(s.th()) else {
        return Ok((
            Some(tbar_m),
            BoundReport::inapplicable(
                PERTURBED_METRIC_NORM,
                hypotheses,
                "no certified bound for ||T^M||".into(),
            ),
        ));
    };
    let est = norm_estimate(direct.th(), NORM_BUDGET)?;
    let bound = CertifiedBound::new(
        2.0 * um.value / (1.0 - ua.value),
        format!(
            "2 U(T^M) / (1 - U(T^M dT)); U(T^M): {}; U(T^M dT): {}",
            um.certificate, ua.certificate
        ),
    );
    let subs = vec![SubCheck::new(
        "composition equals direct metric inverse",
        agree,
        Relation::AtMost,
        1e-8,
        Sidedness::Pointwise,
    )];
    let mut rep = BoundReport::decide(PERTURBED_METRIC_NORM, hypotheses, (est.value, est.kind), bound, subs);
    rep.extras.push(("U(T^M)".into(), um.value));
    rep.extras.push(("U(T^M dT)".into(), ua.value));
    if rep.violated() {
        rep.counterexample = Some(est.witness.iter().cloned().collect());
    }
    Ok((Some(tbar_m), rep))
}

pub const SANDWICH: &str = "two-parameter perturbation sandwich";

/// Samples the hypothesis `||Ax|| <= l1 ||x|| + l2 ||(I + A)x||`; when it
/// holds, tests invertibility of `I + A` and both two-sided chains.
pub fn sandwich_check(
    a: &LinearMap,
    lambda1: f64,
    lambda2: f64,
    samples: usize,
    rng: &mut CheckRng,
) -> Result<BoundReport> {
    for (n, l) in [("lambda1", lambda1), ("lambda2", lambda2)] {
        if !(0.0..1.0).contains(&l) {
            return Err(Error::HypothesisViolation(format!("{n} = {l} is outside [0, 1)")));
        }
    }
    let xs = a.domain();
    let n = xs.dim;
    let ipa = LinearMap::identity(xs).plus(a)?;
    let mut points: Vec<DVector<f64>> = (0..n)
        .map(|j| {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            e
        })
        .collect();
    points.extend((0..samples).map(|_| random_normal(rng, n)));

    let mut worst_excess = f64::NEG_INFINITY;
    let mut worst_x = None;
    for x in &points {
        let nx = xs.norm_of(x);
        let lhs = xs.norm_of(&a.apply(x));
        let rhs = lambda1 * nx + lambda2 * xs.norm_of(&ipa.apply(x));
        let excess = (lhs - rhs) / nx;
        if excess > worst_excess {
            worst_excess = excess;
            worst_x = Some(x.clone());
        }
    }
    let hypothesis_ok = worst_excess <= BOUND_RTOL;
    let mut hypotheses = vec![hyp("||Ax|| <= l1 ||x|| + l2 ||(I + A)x|| on samples", hypothesis_ok)];
    if !hypothesis_ok {
        let mut r = BoundReport::inapplicable(
            SANDWICH,
            hypotheses,
            format!("hypothesis exceeded by {worst_excess:.3e}"),
        );
        r.counterexample = worst_x.map(|x| x.iter().cloned().collect());
        r.lambda1 = Some(lambda1);
        r.lambda2 = Some(lambda2);
        return Ok(r);
    }
    let inv = invert_linear(&ipa);
    hypotheses.push(hyp("I + A invertible", inv.is_ok()));
    let Ok(inv) = inv else {
        let mut r = BoundReport::decide(
            SANDWICH,
            hypotheses,
            (f64::INFINITY, NormKind::SampledLowerBound),
            CertifiedBound::new((1.0 + lambda2) / (1.0 - lambda1), "(1 + l2) / (1 - l1)"),
            Vec::new(),
        );
        r.status = BoundStatus::Violated;
        r.note = Some("I + A is singular although the hypothesis holds on samples".into());
        return Ok(r);
    };

    let (mut f_min, mut f_max, mut g_min, mut g_max) = (f64::INFINITY, 0.0f64, f64::INFINITY, 0.0f64);
    for x in &points {
        let nx = xs.norm_of(x);
        let f = xs.norm_of(&ipa.apply(x)) / nx;
        let g = xs.norm_of(&inv.apply(x)) / nx;
        f_min = f_min.min(f);
        f_max = f_max.max(f);
        g_min = g_min.min(g);
        g_max = g_max.max(g);
    }
    let (l1, l2) = (lambda1, lambda2);
    let subs = vec![
        SubCheck::new(
            "||(I+A)x|| / ||x|| lower",
            f_min,
            Relation::AtLeast,
            (1.0 - l1) / (1.0 + l2),
            Sidedness::Pointwise,
        ),
        SubCheck::new(
            "||(I+A)x|| / ||x|| upper",
            f_max,
            Relation::AtMost,
            (1.0 + l1) / (1.0 - l2),
            Sidedness::Pointwise,
        ),
        SubCheck::new(
            "||(I+A)^-1 x|| / ||x|| lower",
            g_min,
            Relation::AtLeast,
            (1.0 - l2) / (1.0 + l1),
            Sidedness::Pointwise,
        ),
        SubCheck::new(
            "||(I+A)^-1 x|| / ||x|| upper",
            g_max,
            Relation::AtMost,
            (1.0 + l2) / (1.0 - l1),
            Sidedness::Pointwise,
        ),
    ];
    let est = norm_estimate(&HomogeneousMap::from_linear(inv), NORM_BUDGET)?;
    let mut r = BoundReport::decide(
        SANDWICH,
        hypotheses,
        (est.value, est.kind),
        CertifiedBound::new((1.0 + l2) / (1.0 - l1), "(1 + l2) / (1 - l1)"),
        subs,
    );
    r.lambda1 = Some(l1);
    r.lambda2 = Some(l2);
    Ok(r)
}

/// A pair `(l1, l2)` with `||Ax|| <= l1 ||x|| + l2 ||(I + A)x||` for all `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lambdas {
    pub lambda1: f64,
    pub lambda2: f64,
    pub certificate: String,
}

/// Value of `(2 + l1)(1 + l2) / ((1 - l1)(1 - l2))`.
pub fn lambda_error_factor(lambda1: f64, lambda2: f64) -> f64 {
    (2.0 + lambda1) * (1.0 + lambda2) / ((1.0 - lambda1) * (1.0 - lambda2))
}

/// Certified lower bound of `inf ||(I + A)x|| / ||x||`.
fn lower_modulus(ipa: &LinearMap) -> f64 {
    if ipa.domain().norm.is_euclidean() {
        return crate::linalg::smallest_singular_value(ipa.matrix()) * (1.0 - 1e-12);
    }
    match invert_linear(ipa) {
        Ok(inv) => 1.0 / certified_matrix_bound(&inv).value,
        Err(_) => 0.0,
    }
}

/// Searches a grid of `l2 in [0, 1)`. For each, `l1 = max(0, U(A) - l2 L)`
/// with `U(A)` a certified bound of `||A||` and `L` a certified lower bound
/// of `inf ||(I + A)x|| / ||x||`; this over-estimates the least admissible
/// `l1`. The pair `(0, U(A (I + A)^{-1}))` is also tried. Returns the
/// feasible pair minimizing the relative-error expression.
pub fn find_lambdas(a: &LinearMap, grid: usize) -> Result<Lambdas> {
    let xs = a.domain();
    let ua = certified_matrix_bound(a).value;
    let ipa = LinearMap::identity(xs).plus(a)?;
    let low = lower_modulus(&ipa);
    let mut best: Option<Lambdas> = None;
    let mut consider = |l1: f64, l2: f64, cert: String| {
        if !(0.0..1.0).contains(&l1) || !(0.0..1.0).contains(&l2) {
            return;
        }
        let v = lambda_error_factor(l1, l2);
        if best
            .as_ref()
            .is_none_or(|b| v < lambda_error_factor(b.lambda1, b.lambda2))
        {
            best = Some(Lambdas {
                lambda1: l1,
                lambda2: l2,
                certificate: cert,
            });
        }
    };
    let grid = grid.max(1);
    for k in 0..grid {
        let l2 = k as f64 / grid as f64;
        let l1 = (ua - l2 * low).max(0.0);
        consider(
            l1,
            l2,
            format!("U(A) - l2 * inf||(I+A)x||/||x||, l2 on a {grid}-point grid"),
        );
    }
    if let Ok(inv) = invert_linear(&ipa) {
        let m = a.after(&inv)?;
        consider(
            0.0,
            certified_matrix_bound(&m).value,
            "l1 = 0, l2 = U(A (I + A)^-1)".into(),
        );
    }
    best.ok_or(Error::NoFeasiblePair)
}

pub const QUASI_LINEAR_ERROR: &str = "quasi-linear inverse relative error";

/// Relative error `||Upsilon - Th|| / ||Th||` of `Upsilon = (I + A)^{-1} Th`
/// against the two-parameter bound, with `(l1, l2)` from [`find_lambdas`].
pub fn quasi_linear_error_bound(s: &PerturbationScenario, grid: usize) -> Result<BoundReport> {
    let p_linear = materialize_linear(s.bundle().p(), super::LINEARITY_TOL).is_ok();
    let a = s.th_dt();
    let mut hypotheses = vec![hyp("P linear", p_linear), hyp("Th quasi-additive on R(dT)", a.is_ok())];
    let (Ok(a), true) = (a, p_linear) else {
        return Ok(BoundReport::inapplicable(
            QUASI_LINEAR_ERROR,
            hypotheses,
            "not a quasi-linear scenario".into(),
        ));
    };
    let lambdas = match find_lambdas(&a, grid) {
        Ok(l) => l,
        Err(e) => {
            hypotheses.push(hyp("feasible (l1, l2)", false));
            return Ok(BoundReport::inapplicable(QUASI_LINEAR_ERROR, hypotheses, e.to_string()));
        }
    };
    hypotheses.push(hyp("feasible (l1, l2)", true));
    let stable = stability_exact(s).unwrap_or(false);
    let inv = s.i_plus_a_inverse()?;
    let th = s.th();
    let upsilon = compose(&HomogeneousMap::from_linear(inv.clone()), th)?;
    let diff = upsilon.sub(th)?;
    let Some((observed, kind, _)) = relative_norm(&diff, th)? else {
        return Ok(BoundReport::inapplicable(
            QUASI_LINEAR_ERROR,
            hypotheses,
            "no certified bound for ||Th||".into(),
        ));
    };
    let chain = certified_matrix_bound(&inv).value * certified_matrix_bound(&a).value;
    let subs = vec![SubCheck::new(
        "relative error <= U((I+A)^-1) U(A)",
        observed,
        Relation::AtMost,
        chain,
        if kind == NormKind::Exact {
            Sidedness::Exact
        } else {
            Sidedness::SampledLeCertified
        },
    )];
    let bound = CertifiedBound::new(
        lambda_error_factor(lambdas.lambda1, lambdas.lambda2),
        format!("(2 + l1)(1 + l2) / ((1 - l1)(1 - l2)); {}", lambdas.certificate),
    );
    let mut r = BoundReport::decide(QUASI_LINEAR_ERROR, hypotheses, (observed, kind), bound, subs);
    r.lambda1 = Some(lambdas.lambda1);
    r.lambda2 = Some(lambdas.lambda2);
    r.extras.push(("stable".into(), if stable { 1.0 } else { 0.0 }));
    Ok(r)
}

pub const ALIGNED_METRIC_ERROR: &str = "metric inverse relative error under aligned perturbation";

/// Under `R(dT) ⊂ R(T)`, `N(T) ⊂ N(dT)` and `||T^M dT|| < 1`:
/// `T̄^M = (I + T^M dT)^{-1} T^M`, the intertwining identities of `T̄` hold
/// as matrix identities, `R(T̄) = R(T)`, `N(T̄) = N(T)`, and the relative
/// error is at most `||T^M dT|| / (1 - ||T^M dT||)`.
pub fn aligned_metric_error_bound(
    s: &PerturbationScenario,
    samples: usize,
    rng: &mut CheckRng,
) -> Result<(HomogeneousMap, BoundReport)> {
    if s.bundle().species() != Species::Metric {
        return Err(Error::HypothesisViolation("the bundle is not a metric inverse".into()));
    }
    if !contains(&range(s.t()), &range(s.dt()), SUBSPACE_TOL) {
        return Err(Error::HypothesisViolation("R(dT) is not contained in R(T)".into()));
    }
    if !contains(&kernel(s.dt()), &kernel(s.t()), SUBSPACE_TOL) {
        return Err(Error::HypothesisViolation("N(T) is not contained in N(dT)".into()));
    }
    let th = s.th();
    let qa = check_quasi_additive(th, s.bundle().range(), 64, super::LINEARITY_TOL, rng)?;
    if !qa.holds {
        return Err(Error::HypothesisViolation(format!(
            "T^M is not quasi-additive on R(T) (defect {:.3e})",
            qa.worst_defect
        )));
    }
    let a = s.th_dt()?;
    let ua = certified_matrix_bound(&a);
    if ua.value >= 1.0 {
        return Err(Error::HypothesisViolation(format!(
            "no certificate for ||T^M dT|| < 1 (best bound {:.6})",
            ua.value
        )));
    }
    let hypotheses = vec![
        hyp("R(dT) ⊂ R(T)", true),
        hyp("N(T) ⊂ N(dT)", true),
        hyp("T^M quasi-additive on R(T)", true),
        hyp("||T^M dT|| < 1 (certified)", true),
    ];
    let t = s.t();
    let tbar = s.tbar();
    let scale = tbar.matrix().amax().max(t.matrix().amax());
    let right = t.after(&s.i_plus_a()?)?;
    let ident_right = (tbar.matrix() - right.matrix()).amax() / scale;
    let left_map = compose(&s.i_plus_dt_th()?, &HomogeneousMap::from_linear(t.clone()))?;
    let ident_left = match materialize_linear(&left_map, super::LINEARITY_TOL) {
        Ok(l) => (tbar.matrix() - l.matrix()).amax() / scale,
        Err(_) => f64::INFINITY,
    };
    let same_range = subspace_equal(&range(tbar), &range(t), SUBSPACE_TOL);
    let same_kernel = subspace_equal(&kernel(tbar), &kernel(t), SUBSPACE_TOL);

    let inv = HomogeneousMap::from_linear(s.i_plus_a_inverse()?);
    let tbar_m = compose(&inv, th)?.with_label("T̄^M");
    let direct = metric_geninv(tbar)?;
    let agree = pointwise_defect(&tbar_m, direct.th(), samples, rng)?;

    let diff = tbar_m.sub(th)?;
    let Some((observed, kind, _)) = relative_norm(&diff, th)? else {
        return Err(Error::HypothesisViolation("no certified bound for ||T^M||".into()));
    };
    let bound = CertifiedBound::new(
        ua.value / (1.0 - ua.value),
        format!("U / (1 - U) with U = U(T^M dT): {}", ua.certificate),
    );
    let exact = Sidedness::Exact;
    let subs = vec![
        SubCheck::new("T̄ = T (I + T^M dT)", ident_right, Relation::AtMost, 1e-10, exact),
        SubCheck::new("T̄ = (I + dT T^M) T", ident_left, Relation::AtMost, 1e-10, exact),
        SubCheck::new(
            "R(T̄) = R(T)",
            if same_range { 0.0 } else { 1.0 },
            Relation::AtMost,
            0.0,
            exact,
        ),
        SubCheck::new(
            "N(T̄) = N(T)",
            if same_kernel { 0.0 } else { 1.0 },
            Relation::AtMost,
            0.0,
            exact,
        ),
        SubCheck::new(
            "(I + T^M dT)^-1 T^M equals direct metric inverse",
            agree,
            Relation::AtMost,
            1e-8,
            Sidedness::Pointwise,
        ),
    ];
    let mut r = BoundReport::decide(ALIGNED_METRIC_ERROR, hypotheses, (observed, kind), bound, subs);
    let (lo, hi) = pointwise_ratio_range(&diff, th, samples.min(256), rng)?;
    r.extras.push(("pointwise relative error min".into(), lo));
    r.extras.push(("pointwise relative error max".into(), hi));
    r.extras.push(("U(T^M dT)".into(), ua.value));
    Ok((tbar_m, r))
}

/// Range of `||D y|| / ||H y||` over samples with `H y != 0`.
pub fn pointwise_ratio_range(
    d: &HomogeneousMap,
    h: &HomogeneousMap,
    samples: usize,
    rng: &mut CheckRng,
) -> Result<(f64, f64)> {
    let ys = h.domain();
    let xs = h.codomain();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for _ in 0..samples {
        let y = random_normal(rng, ys.dim);
        let hy = xs.norm_of(&h.eval(&y)?);
        if hy <= 1e-12 * ys.norm_of(&y) {
            continue;
        }
        let r = xs.norm_of(&d.eval(&y)?) / hy;
        lo = lo.min(r);
        hi = hi.max(r);
    }
    Ok((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geninv::metric_geninv;
    use crate::sampling::rng_for;
    use crate::space::LpSpace;
    use nalgebra::DMatrix;

    fn e(n: usize) -> LpSpace {
        LpSpace::euclidean(n)
    }

    #[test]
    fn sandwich_scalar_and_zero_cases() {
        let mut rng = rng_for(1, "l");
        let zero = LinearMap::zeros(e(3), e(3));
        let r = sandwich_check(&zero, 0.0, 0.0, 50, &mut rng).unwrap();
        assert_eq!(r.status, BoundStatus::Satisfied);
        assert!((r.observed_value - 1.0).abs() < 1e-12);

        let half = LinearMap::identity(e(3)).scaled(-0.5);
        let r = sandwich_check(&half, 0.5, 0.0, 50, &mut rng).unwrap();
        assert_eq!(r.status, BoundStatus::Satisfied, "{r:#?}");
        let lower = &r.sub_checks[0];
        assert!((lower.observed - 0.5).abs() < 1e-12 && (lower.bound - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sandwich_rejects_a_false_hypothesis() {
        let mut rng = rng_for(2, "l");
        let a = LinearMap::identity(e(2)).scaled(0.5);
        let r = sandwich_check(&a, 0.1, 0.0, 20, &mut rng).unwrap();
        assert_eq!(r.status, BoundStatus::Inapplicable);
        assert!(r.counterexample.is_some());
        assert!(sandwich_check(&a, 1.0, 0.0, 20, &mut rng).is_err());
    }

    #[test]
    fn lambda_examples() {
        let zero = find_lambdas(&LinearMap::zeros(e(2), e(2)), 20).unwrap();
        assert_eq!((zero.lambda1, zero.lambda2), (0.0, 0.0));
        let half = find_lambdas(&LinearMap::identity(e(2)).scaled(-0.5), 20).unwrap();
        assert!((half.lambda1 - 0.5).abs() < 1e-9 && half.lambda2 == 0.0);
        let a = LinearMap::new(DMatrix::from_row_slice(2, 2, &[0.3, 0.0, 0.0, -0.1]), e(2), e(2)).unwrap();
        let l = find_lambdas(&a, 20).unwrap();
        assert!(lambda_error_factor(l.lambda1, l.lambda2) <= lambda_error_factor(0.3, 0.0) + 1e-9);
        assert!(matches!(
            find_lambdas(&LinearMap::identity(e(2)).scaled(-1.0), 20),
            Err(Error::NoFeasiblePair)
        ));
    }

    #[test]
    fn lambda_error_factor_arithmetic() {
        assert!((lambda_error_factor(0.0, 0.0) - 2.0).abs() < 1e-15);
        assert!((lambda_error_factor(0.3, 0.0) - 2.3 / 0.7).abs() < 1e-15);
    }

    #[test]
    fn scaled_perturbation_reproduces_closed_form_error() {
        let t = LinearMap::new(
            DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 0.0, 1.0, 1.0, 1.0, 3.0, 4.0]),
            e(3),
            e(3),
        )
        .unwrap();
        for eps in [0.01, 0.1, 0.3] {
            let s = PerturbationScenario::new(metric_geninv(&t).unwrap(), t.scaled(eps)).unwrap();
            let mut rng = rng_for(3, "c47");
            let (_, r) = aligned_metric_error_bound(&s, 100, &mut rng).unwrap();
            assert_eq!(r.status, BoundStatus::Satisfied, "{r:#?}");
            assert!(
                (r.observed_value - eps / (1.0 + eps)).abs() < 1e-9,
                "{}",
                r.observed_value
            );
            assert!((r.bound_value - eps / (1.0 - eps)).abs() < 1e-9);
        }
    }

    #[test]
    fn misaligned_perturbation_is_a_hypothesis_violation() {
        let t = LinearMap::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]), e(2), e(2)).unwrap();
        let dt = LinearMap::new(DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.1, 0.0]), e(2), e(2)).unwrap();
        let s = PerturbationScenario::new(metric_geninv(&t).unwrap(), dt).unwrap();
        let mut rng = rng_for(4, "c47");
        assert!(matches!(
            aligned_metric_error_bound(&s, 10, &mut rng),
            Err(Error::HypothesisViolation(_))
        ));
    }

    #[test]
    fn perturbed_metric_inverse_in_mixed_norms() {
        let y = LpSpace::new(3, 4.0).unwrap();
        let t = LinearMap::new(
            DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 0.0, 1.0, 1.0, 1.0, 3.0, 4.0]),
            e(3),
            y,
        )
        .unwrap();
        let s = PerturbationScenario::new(metric_geninv(&t).unwrap(), t.scaled(0.1)).unwrap();
        let mut rng = rng_for(5, "p36");
        let (m, r) = perturbed_metric_norm_bound(&s, 50, &mut rng).unwrap();
        assert_eq!(r.status, BoundStatus::Satisfied, "{r:#?}");
        let m = m.unwrap();
        for _ in 0..10 {
            let v = random_normal(&mut rng, 3);
            let a = m.eval(&v).unwrap();
            let b = s.th().eval(&v).unwrap() / 1.1;
            assert!((a - &b).norm() < 1e-8 * b.norm().max(1.0));
        }
        let c = existence_check(&s).unwrap();
        assert!(c.applicable && c.satisfied());
        let c46 = quasi_linear_error_bound(&s, 20).unwrap();
        assert_eq!(c46.status, BoundStatus::Satisfied, "{c46:#?}");
    }
}
