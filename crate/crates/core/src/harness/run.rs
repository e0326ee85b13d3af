use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{Expectation, Family, Perturbation, ScenarioConfig};
use super::generate::{generate, PostCondition};
use crate::error::Error;
use crate::geninv::{metric_geninv, pointwise_defect, tm_from_th, Species, IDENTITY_NAMES};
use crate::operators::{materialize_linear, HomogeneousMap, LinearMap};
use crate::oracle;
use crate::perturb::{
    aligned_metric_error_bound, check_phi_ranges, existence_check, find_lambdas, inverse_roundtrip, kernel_transport,
    perturbed_h, perturbed_metric_norm_bound, phi_formula_consistency, pointwise_ratio_range, quasi_linear_error_bound,
    range_transport, sandwich_check, splitting_report, stability_exact, stability_report, BoundReport, BoundStatus,
    EquivalenceReport, ImplicationReport, PerturbationScenario, Relation, Sidedness, Verdict, LINEARITY_TOL,
};
use crate::projection::{metric_projector, metric_residual};
use crate::sampling::{rng_for, CheckRng};
use crate::subspace::{contains, kernel, range, SUBSPACE_TOL};

/// Grid size for the lambda search.
const LAMBDA_GRID: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckVerdict {
    Pass,
    Fail,
    Undecidable,
    Inapplicable,
}

/// One line of the flat report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub scenario: String,
    pub check: String,
    pub bound: Option<f64>,
    pub observed: Option<f64>,
    pub sidedness: String,
    pub verdict: CheckVerdict,
}

/// Scenario outcome; the derived order is the exit-code precedence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Pass,
    Violation,
    SolverFailure,
    InvalidConfig,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Pass => 0,
            Outcome::Violation => 1,
            Outcome::InvalidConfig => 2,
            Outcome::SolverFailure => 3,
        }
    }

    /// Invalid configuration outranks solver failure, which outranks a
    /// violation.
    pub fn combine(self, other: Outcome) -> Outcome {
        self.max(other)
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides the identity tolerance of every scenario.
    pub tol: Option<f64>,
    /// Overrides the seed of every scenario.
    pub seed: Option<u64>,
    /// Records wall-clock time; off by default so reports are reproducible.
    pub timing: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub id: String,
    pub config: ScenarioConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub species: Option<Species>,
    pub postconditions: Vec<PostCondition>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stability: Option<EquivalenceReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub splitting: Option<EquivalenceReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub existence: Option<ImplicationReport>,
    pub bounds: Vec<BoundReport>,
    pub checks: Vec<CheckRow>,
    pub outcome: Outcome,
    pub failures: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing_ms: Option<f64>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.outcome == Outcome::Pass
    }
}

fn sidedness_name(s: Sidedness) -> &'static str {
    match s {
        Sidedness::SampledLeCertified => "sampled_le_certified",
        Sidedness::Exact => "exact",
        Sidedness::Pointwise => "pointwise",
    }
}

fn verdict_of(v: Verdict) -> CheckVerdict {
    match v {
        Verdict::Holds => CheckVerdict::Pass,
        Verdict::Fails => CheckVerdict::Fail,
        Verdict::Undecidable => CheckVerdict::Undecidable,
    }
}

struct Recorder {
    id: String,
    rows: Vec<CheckRow>,
    failures: Vec<String>,
    solver_failure: bool,
}

impl Recorder {
    fn row(&mut self, check: &str, bound: Option<f64>, observed: Option<f64>, sidedness: &str, verdict: CheckVerdict) {
        if verdict == CheckVerdict::Fail {
            self.failures.push(check.into());
        }
        self.rows.push(CheckRow {
            scenario: self.id.clone(),
            check: check.into(),
            bound,
            observed,
            sidedness: sidedness.into(),
            verdict,
        });
    }

    fn at_most(&mut self, check: &str, observed: f64, bound: f64, sidedness: &str) {
        let v = if observed <= bound {
            CheckVerdict::Pass
        } else {
            CheckVerdict::Fail
        };
        self.row(check, Some(bound), Some(observed), sidedness, v);
    }

    fn flag(&mut self, check: &str, ok: bool) {
        let v = if ok { CheckVerdict::Pass } else { CheckVerdict::Fail };
        self.row(check, None, None, "exact", v);
    }

    fn error(&mut self, check: &str, e: &Error) {
        log::warn!("{}: {check}: {e}", self.id);
        if e.is_solver_failure() {
            self.solver_failure = true;
        }
        self.row(&format!("{check}: {e}"), None, None, "exact", CheckVerdict::Fail);
    }

    fn bound(&mut self, r: &BoundReport) {
        let verdict = match r.status {
            BoundStatus::Satisfied => CheckVerdict::Pass,
            BoundStatus::Violated => CheckVerdict::Fail,
            BoundStatus::Inapplicable => CheckVerdict::Inapplicable,
        };
        let (b, o) = if r.status == BoundStatus::Inapplicable {
            (None, None)
        } else {
            (Some(r.bound_value), Some(r.observed_value))
        };
        let name = format!("bound: {}", r.name);
        self.row(&name, b, o, sidedness_name(r.sidedness), verdict);
        for c in &r.sub_checks {
            let side = match c.relation {
                Relation::AtMost => sidedness_name(c.sidedness).to_string(),
                Relation::AtLeast => format!("{} (at least)", sidedness_name(c.sidedness)),
            };
            let v = if c.holds {
                CheckVerdict::Pass
            } else {
                CheckVerdict::Fail
            };
            self.row(
                &format!("{name} / {}", c.name),
                Some(c.bound),
                Some(c.observed),
                &side,
                v,
            );
        }
    }

    fn equivalence(&mut self, key: &str, r: &EquivalenceReport) {
        for (i, c) in r.conditions.iter().enumerate() {
            // Conditions may fail legitimately, so they bypass the failure
            // list; only a split is wrong.
            self.rows.push(CheckRow {
                scenario: self.id.clone(),
                check: format!("{key} ({}) {}", i + 1, c.name),
                bound: None,
                observed: c.defect,
                sidedness: c.method.clone(),
                verdict: verdict_of(c.verdict),
            });
        }
        let unanimous = !r.split();
        self.flag(&format!("{key}: decided conditions unanimous"), unanimous);
    }
}

fn euclidean(s: &PerturbationScenario) -> bool {
    s.t().domain().norm.is_euclidean() && s.t().codomain().norm.is_euclidean()
}

fn oracle_map(t: &LinearMap) -> crate::Result<HomogeneousMap> {
    let pinv = oracle::pseudo_inverse(t.matrix());
    Ok(HomogeneousMap::from_linear(LinearMap::new(
        pinv,
        t.codomain(),
        t.domain(),
    )?))
}

/// Executes every applicable check on the scenario described by `config`.
pub fn run(config: &ScenarioConfig, opts: &RunOptions) -> RunReport {
    let start = Instant::now();
    let mut config = config.clone();
    if let Some(t) = opts.tol {
        config.tolerances.identity = t;
    }
    if let Some(s) = opts.seed {
        config.seed = s;
    }
    let id = config.id();
    let mut rec = Recorder {
        id: id.clone(),
        rows: Vec::new(),
        failures: Vec::new(),
        solver_failure: false,
    };
    let mut report = RunReport {
        id: id.clone(),
        config: config.clone(),
        species: None,
        postconditions: Vec::new(),
        stability: None,
        splitting: None,
        existence: None,
        bounds: Vec::new(),
        checks: Vec::new(),
        outcome: Outcome::Pass,
        failures: Vec::new(),
        error: None,
        timing_ms: None,
    };
    let generated = match generate(&config) {
        Ok(g) => g,
        Err(e) => {
            report.outcome = if e.is_solver_failure() {
                Outcome::SolverFailure
            } else {
                Outcome::InvalidConfig
            };
            report.error = Some(e.to_string());
            return report;
        }
    };
    for pc in &generated.postconditions {
        rec.flag(&format!("generator: {}", pc.name), pc.holds);
    }
    report.postconditions = generated.postconditions.clone();
    let s = &generated.scenario;
    report.species = Some(s.bundle().species());
    log::info!("{id}: running {} samples", config.samples);

    scenario_checks(&config, s, &mut rec, &mut report);

    report.checks = std::mem::take(&mut rec.rows);
    report.failures = std::mem::take(&mut rec.failures);
    report.outcome = if rec.solver_failure {
        Outcome::SolverFailure
    } else if report.failures.is_empty() {
        Outcome::Pass
    } else {
        Outcome::Violation
    };
    if opts.timing {
        report.timing_ms = Some(start.elapsed().as_secs_f64() * 1e3);
    }
    log::info!("{id}: {:?} ({} checks)", report.outcome, report.checks.len());
    report
}

macro_rules! attempt {
    ($rec:expr, $name:expr, $e:expr) => {
        match $e {
            Ok(v) => Some(v),
            Err(err) => {
                $rec.error($name, &err);
                None
            }
        }
    };
}

fn scenario_checks(config: &ScenarioConfig, s: &PerturbationScenario, rec: &mut Recorder, report: &mut RunReport) {
    let samples = config.samples;
    let tol = config.tolerances.identity;
    let rng = &mut rng_for(config.seed, "run");
    let bundle = s.bundle();

    // The inverse of T itself.
    if let Some(ids) = attempt!(
        rec,
        "identities of the inverse of T",
        bundle.check_identities(samples, rng)
    ) {
        for (name, d) in IDENTITY_NAMES.iter().zip(ids.defects) {
            rec.at_most(&format!("inverse of T: {name}"), d, tol, "pointwise");
        }
    }
    if let Some(ok) = attempt!(rec, "species laws", bundle.check_species(samples.min(200), rng)) {
        rec.flag(&format!("inverse of T: {:?} laws", bundle.species()), ok);
    }
    let direct = attempt!(rec, "metric inverse of T", metric_geninv(s.t()));
    if let (Some(direct), Some(comp)) = (&direct, attempt!(rec, "composition formula", tm_from_th(bundle))) {
        if let Some(d) = attempt!(
            rec,
            "composition formula",
            pointwise_defect(&comp, direct.th(), samples, rng)
        ) {
            rec.at_most("(I - pi_N) Th pi_R equals the metric inverse", d, tol, "pointwise");
        }
    }
    if euclidean(s) {
        if let (Some(direct), Some(o)) = (&direct, attempt!(rec, "oracle", oracle_map(s.t()))) {
            if let Some(d) = attempt!(rec, "oracle", pointwise_defect(direct.th(), &o, samples, rng)) {
                rec.at_most(
                    "metric inverse of T equals the oracle pseudoinverse",
                    d,
                    config.tolerances.oracle,
                    "pointwise",
                );
            }
        }
    }

    // Standing hypothesis: Th is additive along R(dT).
    let certificate = s.th_dt();
    match &certificate {
        Ok(_) => rec.row(
            "Th quasi-additive on R(dT)",
            None,
            None,
            "sampled certificate",
            CheckVerdict::Pass,
        ),
        Err(Error::CertificateFailure { defect, .. }) => rec.row(
            "Th quasi-additive on R(dT)",
            Some(LINEARITY_TOL),
            Some(*defect),
            "sampled certificate",
            CheckVerdict::Inapplicable,
        ),
        Err(e) => rec.error("Th quasi-additive on R(dT)", e),
    }
    let certified = certificate.is_ok();

    if let Some(r) = attempt!(rec, "stability equivalence", stability_report(s, samples, tol, rng)) {
        rec.equivalence("stability", &r);
        report.stability = Some(r);
    }
    let p_linear = materialize_linear(bundle.p(), LINEARITY_TOL).is_ok();
    if p_linear {
        if let Some(r) = attempt!(rec, "splitting equivalence", splitting_report(s, samples, tol, rng)) {
            rec.equivalence("splitting", &r);
            report.splitting = Some(r);
        }
    }
    expectation(config, report, rec);

    let stable = certified && matches!(stability_exact(s), Ok(true));
    if stable {
        perturbed_checks(config, s, rec, rng);
    }

    if let Some(c) = attempt!(rec, "existence under containment", existence_check(s)) {
        let v = if !c.applicable {
            CheckVerdict::Inapplicable
        } else if c.satisfied() {
            CheckVerdict::Pass
        } else {
            CheckVerdict::Fail
        };
        let bound = c.norm_bound.as_ref().map(|_| 1.0);
        let observed = c.norm_bound.as_ref().map(|b| b.value);
        rec.row(
            "containment and ||Th dT|| < 1 imply a perturbed inverse",
            bound,
            observed,
            "certified",
            v,
        );
        report.existence = Some(c);
    }

    bound_checks(config, s, rec, report, rng);
}

fn expectation(config: &ScenarioConfig, report: &RunReport, rec: &mut Recorder) {
    let verdicts: Vec<Verdict> = [&report.stability, &report.splitting]
        .into_iter()
        .flatten()
        .filter(|r| r.decided())
        .map(|r| r.verdict())
        .collect();
    match config.expect {
        Expectation::Any => {}
        Expectation::Violation => rec.flag(
            "expected violation: decided and failing",
            !verdicts.is_empty() && verdicts.iter().all(|v| *v == Verdict::Fails),
        ),
        Expectation::Stable => rec.flag(
            "expected stable: decided and holding",
            report
                .stability
                .as_ref()
                .is_some_and(|r| r.decided() && r.verdict() == Verdict::Holds),
        ),
    }
}

fn perturbed_checks(config: &ScenarioConfig, s: &PerturbationScenario, rec: &mut Recorder, rng: &mut CheckRng) {
    let samples = config.samples;
    let tol = config.tolerances.identity;
    let Some(pb) = attempt!(rec, "perturbed inverse", perturbed_h(s)) else {
        return;
    };
    if let Some(ids) = attempt!(
        rec,
        "identities of the perturbed inverse",
        pb.check_identities(samples, rng)
    ) {
        for (name, d) in IDENTITY_NAMES.iter().zip(ids.defects) {
            rec.at_most(&format!("perturbed inverse: {name}"), d, tol, "pointwise");
        }
    }
    if let Some(d) = attempt!(rec, "two expressions of Phi", phi_formula_consistency(s, samples, rng)) {
        rec.at_most("(I + Th dT)^-1 Th equals Th (I + dT Th)^-1", d, tol, "pointwise");
    }
    if let Some(d) = attempt!(rec, "closed-form inverse", inverse_roundtrip(s, samples, rng)) {
        rec.at_most("(I + dT Th)(I - dT Phi) round-trips", d, tol, "pointwise");
    }
    if let Some(ok) = attempt!(rec, "kernel transport", kernel_transport(s)) {
        rec.flag("N(T̄) = (I + Th dT)^-1 N(T)", ok);
    }
    if let Some(rt) = attempt!(rec, "range transport", range_transport(s, samples, rng)) {
        rec.at_most(
            "R(T̄) = (I + dT Th) R(T)",
            rt.forward_defect.max(rt.backward_defect),
            crate::perturb::MEMBERSHIP_TOL,
            "pointwise",
        );
    }
    if let Some(rn) = attempt!(rec, "ranges of Phi", check_phi_ranges(s, &pb, samples.min(200), rng)) {
        rec.at_most(
            "R(Phi) = R(Th)",
            rn.range_defect,
            crate::perturb::MEMBERSHIP_TOL,
            "pointwise",
        );
        rec.at_most(
            "N(Phi) = N(Th)",
            rn.null_defect,
            crate::perturb::MEMBERSHIP_TOL,
            "pointwise",
        );
    }

    if let Perturbation::ScaledT { epsilon } = config.perturbation {
        let expect = s.th().scale(1.0 / (1.0 + epsilon));
        if let Some(d) = attempt!(rec, "scaling", pointwise_defect(pb.th(), &expect, samples, rng)) {
            rec.at_most("Phi equals Th / (1 + epsilon)", d, tol, "pointwise");
        }
    }

    if euclidean(s) {
        let tbar = s.tbar();
        let Some(o) = attempt!(rec, "oracle", oracle_map(tbar)) else {
            return;
        };
        let inner = metric_projector(&range(tbar));
        let outer = metric_residual(&kernel(tbar));
        if let Some(comp) = attempt!(
            rec,
            "metric composition of Phi",
            pb.th().compose(&inner).and_then(|m| outer.compose(&m))
        ) {
            if let Some(d) = attempt!(rec, "oracle", pointwise_defect(&comp, &o, samples, rng)) {
                rec.at_most(
                    "(I - pi_N(T̄)) Phi pi_R(T̄) equals the oracle pseudoinverse of T̄",
                    d,
                    config.tolerances.oracle,
                    "pointwise",
                );
            }
        }
        let aligned = contains(&range(s.t()), &range(s.dt()), SUBSPACE_TOL)
            && contains(&kernel(s.dt()), &kernel(s.t()), SUBSPACE_TOL);
        if aligned && s.bundle().species() == Species::Metric {
            if let Some(d) = attempt!(rec, "oracle", pointwise_defect(pb.th(), &o, samples, rng)) {
                rec.at_most(
                    "Phi equals the oracle pseudoinverse of T̄",
                    d,
                    config.tolerances.oracle,
                    "pointwise",
                );
            }
        }
    }
}

fn bound_checks(
    config: &ScenarioConfig,
    s: &PerturbationScenario,
    rec: &mut Recorder,
    report: &mut RunReport,
    rng: &mut CheckRng,
) {
    let samples = config.samples;
    let metric = s.bundle().species() == Species::Metric;
    if metric {
        if let Some((_, r)) = attempt!(
            rec,
            "perturbed metric inverse norm",
            perturbed_metric_norm_bound(s, samples.min(200), rng)
        ) {
            rec.bound(&r);
            report.bounds.push(r);
        }
    }
    if let Some(r) = attempt!(
        rec,
        "quasi-linear relative error",
        quasi_linear_error_bound(s, LAMBDA_GRID)
    ) {
        rec.bound(&r);
        report.bounds.push(r);
    }
    if metric {
        match aligned_metric_error_bound(s, samples.min(200), rng) {
            Ok((tbar_m, r)) => {
                rec.bound(&r);
                closed_form(config, s, &tbar_m, &r, rec, rng);
                report.bounds.push(r);
            }
            Err(Error::HypothesisViolation(why)) => {
                rec.row(
                    &format!("bound: aligned metric relative error ({why})"),
                    None,
                    None,
                    "exact",
                    CheckVerdict::Inapplicable,
                );
            }
            Err(e) => rec.error("aligned metric relative error", &e),
        }
    }
    if let Ok(a) = s.th_dt() {
        match find_lambdas(&a, LAMBDA_GRID) {
            Ok(l) => {
                if let Some(r) = attempt!(rec, "sandwich", sandwich_check(&a, l.lambda1, l.lambda2, samples, rng)) {
                    rec.bound(&r);
                    report.bounds.push(r);
                }
            }
            Err(e) => rec.row(
                &format!("bound: sandwich ({e})"),
                None,
                None,
                "certified",
                CheckVerdict::Inapplicable,
            ),
        }
    }
}

/// For `dT = eps T` the relative error is `eps / (1 + eps)` at every point.
fn closed_form(
    config: &ScenarioConfig,
    s: &PerturbationScenario,
    tbar_m: &HomogeneousMap,
    r: &BoundReport,
    rec: &mut Recorder,
    rng: &mut CheckRng,
) {
    let Perturbation::ScaledT { epsilon } = config.perturbation else {
        return;
    };
    let expected = epsilon / (1.0 + epsilon);
    let ctol = config.tolerances.closed_form;
    let diff = match tbar_m.sub(s.th()) {
        Ok(d) => d,
        Err(e) => return rec.error("closed form", &e),
    };
    if let Some((lo, hi)) = attempt!(
        rec,
        "closed form",
        pointwise_ratio_range(&diff, s.th(), config.samples.min(200), rng)
    ) {
        let dev = (lo - expected).abs().max((hi - expected).abs());
        rec.at_most(
            "pointwise relative error equals eps / (1 + eps)",
            dev,
            ctol,
            "pointwise",
        );
    }
    if config.family == Family::F1 && epsilon > 0.0 {
        let dev = (r.observed_value - expected).abs();
        rec.at_most("relative error equals eps / (1 + eps)", dev, ctol, "exact");
        let bexp = epsilon / (1.0 - epsilon);
        rec.at_most(
            "bound equals eps / (1 - eps)",
            (r.bound_value - bexp).abs(),
            ctol,
            "exact",
        );
    }
}
