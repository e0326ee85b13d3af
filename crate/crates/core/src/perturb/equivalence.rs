//! Condition-by-condition evaluation of two equivalences: the
//! five characterizations of a stable perturbation, and the three
//! characterizations of a perturbed quasi-linear inverse.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{intersection_test, perturbed_parts, range_transport, PerturbationScenario, Verdict, MEMBERSHIP_TOL};
use crate::error::Result;
use crate::geninv::GenInverseBundle;
use crate::operators::{compose, invert_linear, materialize_linear, HomogeneousMap, LinearMap};
use crate::sampling::{random_normal, CheckRng};
use crate::subspace::{contains, image, kernel, range, subspace_equal, trivial_intersection, SUBSPACE_TOL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub name: String,
    pub verdict: Verdict,
    pub method: String,
    /// Largest observed defect for sampled conditions.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub defect: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<Vec<f64>>,
}

impl ConditionResult {
    fn new(name: &str, verdict: Verdict, method: &str) -> Self {
        ConditionResult {
            name: name.into(),
            verdict,
            method: method.into(),
            defect: None,
            counterexample: None,
        }
    }

    fn with_defect(mut self, d: f64) -> Self {
        self.defect = Some(d);
        self
    }

    fn with_counterexample(mut self, v: Option<DVector<f64>>) -> Self {
        self.counterexample = v.map(|v| v.iter().cloned().collect());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub name: String,
    pub conditions: Vec<ConditionResult>,
    /// Why the report is undecided, when a standing hypothesis failed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl EquivalenceReport {
    /// No condition is undecidable.
    pub fn decided(&self) -> bool {
        self.conditions.iter().all(|c| c.verdict != Verdict::Undecidable)
    }

    /// Decided and all verdicts equal.
    pub fn unanimous(&self) -> bool {
        self.decided() && self.conditions.windows(2).all(|w| w[0].verdict == w[1].verdict)
    }

    /// A decided report that is not unanimous contradicts the equivalence.
    pub fn split(&self) -> bool {
        self.decided() && !self.unanimous()
    }

    /// Common verdict of a unanimous report.
    pub fn verdict(&self) -> Verdict {
        if self.unanimous() {
            self.conditions[0].verdict
        } else {
            Verdict::Undecidable
        }
    }

    fn undecided(name: &str, names: &[&str], note: String) -> Self {
        EquivalenceReport {
            name: name.into(),
            conditions: names
                .iter()
                .map(|n| ConditionResult::new(n, Verdict::Undecidable, "standing hypothesis failed"))
                .collect(),
            note: Some(note),
        }
    }
}

pub const STABILITY_EQUIVALENCE: &str = "stable perturbation";
pub const STABILITY_CONDITIONS: [&str; 5] = [
    "Phi is a generalized inverse of T̄",
    "R(T̄) ∩ N(Th) = {0}",
    "R(T̄) = (I + dT Th) R(T)",
    "(I + Th dT) N(T̄) = N(T)",
    "(I + dT Th)^-1 T̄ N(T) ⊂ R(T)",
];

/// Evaluates the five conditions independently. Requires `Th ∘ dT` to be
/// certified linear and `I + Th dT` invertible; otherwise every condition is
/// undecidable.
pub fn stability_report(
    s: &PerturbationScenario,
    samples: usize,
    tol: f64,
    rng: &mut CheckRng,
) -> Result<EquivalenceReport> {
    let inv = match s.th_dt().and_then(|_| s.i_plus_a_inverse()) {
        Ok(inv) => inv,
        Err(e) => {
            return Ok(EquivalenceReport::undecided(
                STABILITY_EQUIVALENCE,
                &STABILITY_CONDITIONS,
                e.to_string(),
            ))
        }
    };
    let names = STABILITY_CONDITIONS;
    let mut conditions = Vec::with_capacity(5);

    // (1) identities for Phi against T̄.
    let parts = perturbed_parts(s, &inv)?;
    let d = two_identities(&parts, samples, rng)?;
    conditions.push(ConditionResult::new(names[0], Verdict::from_bool(d <= tol), "sampled identities").with_defect(d));

    // (2) direct intersection search.
    let it = intersection_test(s, samples, rng)?;
    conditions.push(ConditionResult::new(names[1], it.verdict, it.method).with_counterexample(it.witness));

    // (3) two-sided range inclusion.
    let rt = range_transport(s, samples, rng)?;
    conditions.push(
        ConditionResult::new(names[2], Verdict::from_bool(rt.holds()), "sampled two-sided inclusion")
            .with_defect(rt.forward_defect.max(rt.backward_defect)),
    );

    // (4) exact kernel transport.
    let ipa = s.i_plus_a()?;
    let img = image(&ipa, &kernel(s.tbar()))?;
    let exact = subspace_equal(&img, &kernel(s.t()), SUBSPACE_TOL);
    conditions.push(ConditionResult::new(
        names[3],
        Verdict::from_bool(exact),
        "exact subspace equality",
    ));

    // (5) G T̄ maps N(T) into R(T).
    let n_t = kernel(s.t());
    let r_t = range(s.t());
    let g = s.g()?;
    let mut worst = 0.0f64;
    let mut witness = None;
    let scale = s.tbar().matrix().norm();
    let mut probe = |x: DVector<f64>| -> Result<()> {
        let y = g.eval(&s.tbar().apply(&x))?;
        // Relative to the input size, so that T̄x ≈ 0 does not amplify noise.
        let d = r_t.euclidean_residual(&y).norm() / (scale * x.norm()).max(y.norm()).max(f64::MIN_POSITIVE);
        if d > worst {
            worst = d;
            witness = Some(x);
        }
        Ok(())
    };
    for j in 0..n_t.dim() {
        probe(n_t.basis().column(j).into_owned())?;
    }
    if n_t.dim() > 0 {
        for _ in 0..samples.min(64) {
            probe(crate::sampling::random_in_span(rng, n_t.basis()))?;
        }
    }
    let holds5 = worst <= MEMBERSHIP_TOL;
    conditions.push(
        ConditionResult::new(
            names[4],
            Verdict::from_bool(holds5),
            "kernel basis and random combinations",
        )
        .with_defect(worst)
        .with_counterexample(if holds5 { None } else { witness }),
    );

    Ok(EquivalenceReport {
        name: STABILITY_EQUIVALENCE.into(),
        conditions,
        note: None,
    })
}

/// Worst relative defect of `T̄ Phi T̄ = T̄` and `Phi T̄ Phi = Phi`.
fn two_identities(b: &GenInverseBundle, samples: usize, rng: &mut CheckRng) -> Result<f64> {
    let r = b.check_identities(samples, rng)?;
    Ok(r.defects[0].max(r.defects[1]))
}

pub const SPLITTING_EQUIVALENCE: &str = "perturbed quasi-linear inverse";
pub const SPLITTING_CONDITIONS: [&str; 3] = [
    "I + Th dT invertible and R(T̄) ∩ N(Th) = {0}",
    "Upsilon is a quasi-linear generalized inverse of T̄",
    "X = N(T̄) + R(Th) and Y = R(T̄) + N(Th) (direct sums)",
];

/// Evaluates the three conditions for a bundle whose `P` is linear.
pub fn splitting_report(
    s: &PerturbationScenario,
    samples: usize,
    tol: f64,
    rng: &mut CheckRng,
) -> Result<EquivalenceReport> {
    let names = SPLITTING_CONDITIONS;
    let a = match s.th_dt() {
        Ok(a) => a,
        Err(e) => {
            return Ok(EquivalenceReport::undecided(
                SPLITTING_EQUIVALENCE,
                &names,
                e.to_string(),
            ))
        }
    };
    let p = match materialize_linear(s.bundle().p(), super::LINEARITY_TOL) {
        Ok(p) => p,
        Err(_) => {
            return Ok(EquivalenceReport::undecided(
                SPLITTING_EQUIVALENCE,
                &names,
                "P is not linear, so the bundle is not quasi-linear".into(),
            ))
        }
    };
    let xs = s.t().domain();
    let tbar = s.tbar();
    let n_tbar = kernel(tbar);
    // F = Th T̄ = (I - P) + A.
    let f = LinearMap::identity(xs).minus(&p)?.plus(&a)?;
    let n_f = kernel(&f);
    let unique = contains(&n_tbar, &n_f, SUBSPACE_TOL);
    let inv = s.i_plus_a().and_then(|m| invert_linear(&m));
    let mut conditions = Vec::with_capacity(3);

    conditions.push(ConditionResult::new(
        names[0],
        Verdict::from_bool(inv.is_ok() && unique),
        "invertibility and N(Th T̄) ⊂ N(T̄)",
    ));

    // (2)
    let c2 = match &inv {
        Err(_) => ConditionResult::new(names[1], Verdict::Fails, "I + Th dT is singular"),
        Ok(inv) => {
            let parts = perturbed_parts(s, inv)?;
            let ids = parts.check_identities(samples, rng)?;
            let pbar = inv.after(&p)?;
            let pm = pbar.matrix();
            let idem = (pm * pm - pm).amax() <= 1e-9 * pm.amax().max(1.0);
            let onto = subspace_equal(&range(&pbar), &n_tbar, SUBSPACE_TOL);
            let qbar = parts.q();
            let ys = tbar.codomain();
            let mut q_defect = 0.0f64;
            for _ in 0..samples.min(256) {
                let y = random_normal(rng, ys.dim);
                let qy = qbar.eval(&y)?;
                let qqy = qbar.eval(&qy)?;
                q_defect = q_defect.max(ys.norm_of(&(qqy - &qy)) / ys.norm_of(&y));
            }
            let d = ids.worst().max(q_defect);
            ConditionResult::new(
                names[1],
                Verdict::from_bool(d <= tol && idem && onto),
                "sampled identities, exact linear P̄, sampled idempotent Q̄",
            )
            .with_defect(d)
        }
    };
    conditions.push(c2);

    // (3)
    let r_th = kernel(&p);
    let x_split = n_tbar.dim() + r_th.dim() == xs.dim && trivial_intersection(&n_tbar, &r_th, SUBSPACE_TOL);
    let th = s.th();
    let ys = tbar.codomain();
    let f_pinv = crate::linalg::pseudo_inverse(f.matrix());
    let mut y_defect = 0.0f64;
    for _ in 0..samples.min(256) {
        let y = random_normal(rng, ys.dim);
        let thy = th.eval(&y)?;
        let x = &f_pinv * &thy;
        let solve_defect = xs.norm_of(&(f.apply(&x) - &thy)) / xs.norm_of(&thy).max(ys.norm_of(&y));
        let w = &y - tbar.apply(&x);
        let null_defect = xs.norm_of(&th.eval(&w)?) / ys.norm_of(&y);
        y_defect = y_defect.max(solve_defect).max(null_defect);
    }
    let y_split = y_defect <= tol.max(MEMBERSHIP_TOL) && unique;
    conditions.push(
        ConditionResult::new(
            names[2],
            Verdict::from_bool(x_split && y_split),
            "exact X-splitting; sampled Y-splitting with exact uniqueness",
        )
        .with_defect(y_defect),
    );

    Ok(EquivalenceReport {
        name: SPLITTING_EQUIVALENCE.into(),
        conditions,
        note: None,
    })
}

/// `Th ∘ T̄` as a homogeneous map, for diagnostics.
pub fn th_after_tbar(s: &PerturbationScenario) -> Result<HomogeneousMap> {
    compose(s.th(), &HomogeneousMap::from_linear(s.tbar().clone()))
}
