//! Acceptance criteria, one line per criterion. Runs without the libtest
//! harness so the lines print in order; exits nonzero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::DVector;
use rand::Rng;

use metric_geninv::geninv::{metric_geninv_pointwise, pointwise_defect, tm_from_th, Species};
use metric_geninv::harness::{
    generate, selftest, Expectation, Family, Perturbation, RunOptions, ScenarioConfig, SuiteReport,
};
use metric_geninv::operators::HomogeneousMap;
use metric_geninv::oracle;
use metric_geninv::perturb::{
    aligned_metric_error_bound, intersection_test, inverse_roundtrip, kernel_transport, perturbed_h,
    pointwise_ratio_range, stability_exact, PerturbationScenario, Verdict, STABILITY_CONDITIONS,
};
use metric_geninv::projection::{metric_projector, project, ProjectionOptions};
use metric_geninv::sampling::{random_in_span, random_normal, random_orthonormal, rng_for, CheckRng};
use metric_geninv::space::{LpSpace, LpVector};
use metric_geninv::subspace::{contains, kernel, range, Subspace, SUBSPACE_TOL};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(a.norm()).max(f64::MIN_POSITIVE)
}

/// The oracle `T⁺` as an evaluation object.
fn oracle_map(t: &metric_geninv::operators::LinearMap) -> HomogeneousMap {
    let pinv = oracle::pseudo_inverse(t.matrix());
    HomogeneousMap::new(
        t.codomain(),
        t.domain(),
        "oracle pseudoinverse",
        move |y: &DVector<f64>| Ok(&pinv * y),
    )
}

fn random_config(rng: &mut CheckRng, family: Family, seed: u64, perturbation: Perturbation) -> ScenarioConfig {
    let mut c = ScenarioConfig::skeleton(family, seed);
    c.perturbation = perturbation;
    loop {
        c.n = rng.random_range(2..=8);
        c.m = rng.random_range(2..=8);
        let (p, q) = match family {
            Family::F1 => (2.0, 2.0),
            Family::F2 => (2.0, [3.0, 4.0, 1.5][rng.random_range(0..3)]),
            _ => {
                let e = [1.5, 3.0, 4.0];
                (e[rng.random_range(0..3)], e[rng.random_range(0..3)])
            }
        };
        c.p = Some(p);
        c.q = Some(q);
        if c.validate().is_ok() {
            return c;
        }
    }
}

fn classical_reduction() -> Outcome {
    let start = Instant::now();
    let mut rng = rng_for(1, "acceptance/classical");
    let modes = [
        Perturbation::Zero,
        Perturbation::ScaledT { epsilon: 0.1 },
        Perturbation::TwoSided { epsilon: 0.1 },
        Perturbation::RangeAligned { epsilon: 0.1 },
        Perturbation::NullAligned { epsilon: 0.1 },
    ];
    let (mut worst, mut worst_perturbed, mut stable) = (0.0f64, 0.0f64, 0);
    for k in 0..50 {
        let c = random_config(&mut rng, Family::F1, 100 + k, modes[k as usize % modes.len()].clone());
        let g = generate(&c).map_err(|e| format!("{}: {e}", c.id()))?;
        let s = &g.scenario;
        let o = oracle_map(s.t());
        worst = worst.max(pointwise_defect(s.th(), &o, 1000, &mut rng).map_err(|e| e.to_string())?);
        if !stability_exact(s).map_err(|e| e.to_string())? {
            continue;
        }
        stable += 1;
        let pb = perturbed_h(s).map_err(|e| format!("{}: {e}", c.id()))?;
        let ob = oracle_map(s.tbar());
        // Phi is one generalized inverse of T̄; its Moore-Penrose normalization
        // must be the oracle's, and Phi itself is when ranges and kernels are kept.
        let mp = tm_from_th(&pb).map_err(|e| e.to_string())?;
        worst_perturbed = worst_perturbed.max(pointwise_defect(&mp, &ob, 1000, &mut rng).map_err(|e| e.to_string())?);
        let aligned = contains(&range(s.t()), &range(s.dt()), SUBSPACE_TOL)
            && contains(&kernel(s.dt()), &kernel(s.t()), SUBSPACE_TOL);
        if aligned {
            worst_perturbed =
                worst_perturbed.max(pointwise_defect(pb.th(), &ob, 1000, &mut rng).map_err(|e| e.to_string())?);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst <= 1e-8, || format!("T^M vs oracle defect {worst:.2e}"))?;
    ensure(worst_perturbed <= 1e-8, || {
        format!("perturbed inverse vs oracle defect {worst_perturbed:.2e}")
    })?;
    ensure(stable > 0, || "no stable scenario".into())?;
    ensure(secs < 30.0, || format!("runtime {secs:.1}s"))?;
    Ok(format!(
        "50 instances, worst defect {worst:.1e}; {stable} stable, perturbed defect {worst_perturbed:.1e}; {secs:.1}s"
    ))
}

fn projection_certificates() -> Outcome {
    let mut rng = rng_for(2, "acceptance/projection");
    let ps = [1.5, 2.0, 3.0, 4.0];
    let mut worst = [0.0f64; 5];
    for k in 0..200 {
        let p = ps[k % 4];
        let n = rng.random_range(2..=8);
        let dim = rng.random_range(1..n);
        let space = LpSpace::new(n, p).map_err(|e| e.to_string())?;
        let v = Subspace::span(space, &random_orthonormal(&mut rng, n, dim)).map_err(|e| e.to_string())?;
        let opts = ProjectionOptions::for_norm(space.norm);
        let pi = metric_projector(&v);
        let x = random_normal(&mut rng, n);
        let xv = LpVector::new(space, x.clone()).map_err(|e| e.to_string())?;
        let res = project(&xv, &v, &opts).map_err(|e| format!("p = {p}, n = {n}: {e}"))?;
        let px = res.projection.coords().clone();
        let eval = |y: &DVector<f64>| pi.eval(y).map_err(|e| e.to_string());
        let lambda: f64 = rng.random_range(-3.0..3.0);
        let z = random_in_span(&mut rng, v.basis());
        worst[0] = worst[0].max(res.optimality_gap);
        worst[1] = worst[1].max(rel(&eval(&px)?, &px));
        worst[2] = worst[2].max(rel(&eval(&(&x * lambda))?, &(&px * lambda)));
        worst[3] = worst[3].max(rel(&eval(&(&x + &z))?, &(&px + &z)));
        worst[4] = worst[4].max(space.norm_of(&px) / space.norm_of(&x));
    }
    let names = ["optimality gap", "idempotence", "homogeneity", "translation"];
    for (name, w) in names.iter().zip(worst) {
        ensure(w <= 1e-8, || format!("{name}: {w:.2e}"))?;
    }
    ensure(worst[4] <= 2.0, || format!("||pi x|| / ||x|| = {}", worst[4]))?;

    // Scalar cases against the one-dimensional bisection oracle.
    let expected = 1.0 / (1.0 + 2f64.powf(1.0 / 3.0));
    let x = DVector::from_vec(vec![1.0, 0.0, 0.0]);
    let ones = DVector::from_vec(vec![1.0, 1.0, 1.0]);
    let space = LpSpace::new(3, 4.0).map_err(|e| e.to_string())?;
    let line = Subspace::span_vectors(space, &[ones.clone()]).map_err(|e| e.to_string())?;
    let got = project(
        &LpVector::new(space, x.clone()).unwrap(),
        &line,
        &ProjectionOptions::for_norm(space.norm),
    )
    .map_err(|e| e.to_string())?;
    let scalar_dev = (got.projection.coords() - &ones * expected).amax();
    let oracle_dev = (oracle::line_projection(&x, &ones, 4.0) - &ones * expected).amax();
    let mut line_dev = 0.0f64;
    for k in 0..40 {
        let p = ps[k % 4];
        let n = rng.random_range(2..=8);
        let space = LpSpace::new(n, p).unwrap();
        let dir = random_normal(&mut rng, n);
        let x = random_normal(&mut rng, n);
        let l = Subspace::span_vectors(space, &[dir.clone()]).unwrap();
        let got = project(
            &LpVector::new(space, x.clone()).unwrap(),
            &l,
            &ProjectionOptions::for_norm(space.norm),
        )
        .map_err(|e| e.to_string())?;
        line_dev = line_dev.max(rel(got.projection.coords(), &oracle::line_projection(&x, &dir, p)));
    }
    ensure(scalar_dev <= 1e-8 && oracle_dev <= 1e-8, || {
        format!("(1,0,0) onto span(1,1,1) at p = 4: solver {scalar_dev:.2e}, oracle {oracle_dev:.2e}")
    })?;
    ensure(line_dev <= 1e-8, || {
        format!("line projections vs bisection: {line_dev:.2e}")
    })?;
    Ok(format!(
        "200 instances, gap {:.1e}, idempotence {:.1e}, homogeneity {:.1e}, translation {:.1e}, max ratio {:.3}; \
         scalar case {scalar_dev:.1e}, 40 lines {line_dev:.1e}",
        worst[0], worst[1], worst[2], worst[3], worst[4]
    ))
}

fn defining_identities() -> Outcome {
    let mut rng = rng_for(3, "acceptance/identities");
    let families = [Family::F1, Family::F2, Family::F3, Family::F4];
    let (mut worst, mut worst_comp) = (0.0f64, 0.0f64);
    let mut species = [0usize; 2];
    for k in 0..52u64 {
        let family = families[k as usize % 4];
        let c = random_config(&mut rng, family, 300 + k, Perturbation::Zero);
        let g = generate(&c).map_err(|e| format!("{}: {e}", c.id()))?;
        let b = g.scenario.bundle();
        let id = b
            .check_identities(1000, &mut rng)
            .map_err(|e| format!("{}: {e}", c.id()))?;
        worst = worst.max(id.worst());
        species[(b.species() == Species::Metric) as usize] += 1;
        let t = b.t().clone();
        let direct = HomogeneousMap::new(t.codomain(), t.domain(), "direct T^M", move |y: &DVector<f64>| {
            Ok(metric_geninv_pointwise(&t, &LpVector::new(t.codomain(), y.clone())?)?.into_coords())
        });
        let comp = tm_from_th(b).map_err(|e| e.to_string())?;
        let d = pointwise_defect(&comp, &direct, 200, &mut rng).map_err(|e| format!("{}: {e}", c.id()))?;
        worst_comp = worst_comp.max(d);
    }
    ensure(worst <= 1e-8, || format!("identity defect {worst:.2e}"))?;
    ensure(worst_comp <= 1e-8, || {
        format!("composition vs direct T^M {worst_comp:.2e}")
    })?;
    Ok(format!(
        "52 bundles ({} metric, {} quasi-linear) x 1000 vectors, worst {worst:.1e}; composition {worst_comp:.1e}",
        species[1], species[0]
    ))
}

fn unanimity(suite: &SuiteReport) -> Outcome {
    let engineered = suite
        .reports
        .iter()
        .filter(|r| {
            matches!(
                r.config.perturbation,
                Perturbation::Violation { .. } | Perturbation::RankDrop
            )
        })
        .count();
    ensure(suite.reports.len() >= 100, || {
        format!("only {} scenarios", suite.reports.len())
    })?;
    ensure(engineered >= 20, || format!("only {engineered} engineered violations"))?;
    let (mut stable, mut failing, mut route_pairs) = (0, 0, 0);
    for r in &suite.reports {
        for e in [&r.stability, &r.splitting].into_iter().flatten() {
            ensure(!e.split(), || format!("{}: split {}", r.id, e.name))?;
        }
        let Some(e) = &r.stability else { continue };
        if !e.decided() {
            continue;
        }
        match e.verdict() {
            Verdict::Holds => stable += 1,
            Verdict::Fails => failing += 1,
            Verdict::Undecidable => unreachable!("decided and unanimous"),
        }
        if r.config.expect == Expectation::Violation {
            ensure(e.verdict() == Verdict::Fails, || {
                format!("{}: engineered violation not failing", r.id)
            })?;
        }
        let sampled = &e.conditions[1];
        let exact = &e.conditions[3];
        debug_assert_eq!(sampled.name, STABILITY_CONDITIONS[1]);
        ensure(sampled.verdict == exact.verdict, || {
            format!("{}: routes disagree", r.id)
        })?;
        route_pairs += 1;
    }
    // An independent pass over freshly generated scenarios: exact kernel
    // transport against the direct intersection search.
    let mut rng = rng_for(4, "acceptance/routes");
    let mut direct_pairs = 0;
    for r in &suite.reports {
        let Ok(g) = generate(&r.config) else { continue };
        let s: &PerturbationScenario = &g.scenario;
        let (Ok(exact), Ok(direct)) = (stability_exact(s), intersection_test(s, 64, &mut rng)) else {
            continue;
        };
        if direct.verdict == Verdict::Undecidable {
            continue;
        }
        ensure(direct.verdict == Verdict::from_bool(exact), || {
            format!("{}: routes disagree", r.id)
        })?;
        direct_pairs += 1;
    }
    ensure(failing >= 20, || format!("only {failing} decided violations"))?;
    Ok(format!(
        "{} scenarios, {engineered} engineered violations; decided: {stable} all-hold, {failing} all-fail, 0 splits; \
         routes agree on {route_pairs} reports and {direct_pairs} direct pairs",
        suite.reports.len()
    ))
}

fn bound_suite(suite: &SuiteReport) -> Outcome {
    let mut checked = std::collections::BTreeMap::<String, usize>::new();
    for r in &suite.reports {
        for b in &r.bounds {
            ensure(!b.violated(), || {
                format!(
                    "{}: {} observed {:.3e} vs bound {:.3e}",
                    r.id, b.name, b.observed_value, b.bound_value
                )
            })?;
            *checked.entry(b.name.clone()).or_default() += 1;
        }
    }
    ensure(checked.len() >= 4, || {
        format!("only {} bound kinds exercised: {checked:?}", checked.len())
    })?;

    let mut rng = rng_for(5, "acceptance/closed-form");
    let mut worst = 0.0f64;
    for (k, eps) in [0.01, 0.1, 0.3].into_iter().enumerate() {
        for family in [Family::F1, Family::F2] {
            let c = random_config(&mut rng, family, 500 + k as u64, Perturbation::ScaledT { epsilon: eps });
            let g = generate(&c).map_err(|e| e.to_string())?;
            let s = &g.scenario;
            let (tbar_m, r) = aligned_metric_error_bound(s, 200, &mut rng).map_err(|e| format!("{}: {e}", c.id()))?;
            ensure(!r.violated(), || format!("{}: bound violated", c.id()))?;
            let expected = eps / (1.0 + eps);
            let diff = tbar_m.sub(s.th()).map_err(|e| e.to_string())?;
            let (lo, hi) = pointwise_ratio_range(&diff, s.th(), 200, &mut rng).map_err(|e| e.to_string())?;
            worst = worst.max((lo - expected).abs()).max((hi - expected).abs());
            if family == Family::F1 {
                worst = worst.max((r.observed_value - expected).abs());
                worst = worst.max((r.bound_value - eps / (1.0 - eps)).abs());
            }
        }
    }
    ensure(worst <= 1e-9, || format!("closed form deviation {worst:.2e}"))?;
    let kinds: Vec<String> = checked.iter().map(|(k, v)| format!("{k} x{v}")).collect();
    Ok(format!("{}; closed form within {worst:.1e}", kinds.join(", ")))
}

fn perturbation_formulas(suite: &SuiteReport) -> Outcome {
    let mut rng = rng_for(6, "acceptance/formulas");
    let (mut worst, mut stable) = (0.0f64, 0);
    for r in &suite.reports {
        let Ok(g) = generate(&r.config) else { continue };
        let s = &g.scenario;
        if !matches!(stability_exact(s), Ok(true)) {
            continue;
        }
        stable += 1;
        worst = worst.max(inverse_roundtrip(s, 1000, &mut rng).map_err(|e| format!("{}: {e}", r.id))?);
        ensure(kernel_transport(s).map_err(|e| e.to_string())?, || {
            format!("{}: N(T̄) not transported", r.id)
        })?;
    }
    ensure(worst <= 1e-8, || format!("round trip {worst:.2e}"))?;
    ensure(stable > 0, || "no stable scenario".into())?;
    Ok(format!(
        "{stable} stable scenarios, round trip {worst:.1e} on 1000 samples, kernel equality on all"
    ))
}

fn full_suite() -> (Outcome, Option<SuiteReport>) {
    let opts = RunOptions::default();
    let start = Instant::now();
    let first = match selftest(0, &opts, 1) {
        Ok(r) => r,
        Err(e) => return (Err(e.to_string()), None),
    };
    let secs = start.elapsed().as_secs_f64();
    let second = match selftest(0, &opts, 0) {
        Ok(r) => r,
        Err(e) => return (Err(e.to_string()), None),
    };
    let a = serde_json::to_string(&first).expect("serializable");
    let b = serde_json::to_string(&second).expect("serializable");
    let verdict = (|| {
        ensure(first.outcome.exit_code() == 0, || {
            let bad: Vec<_> = first
                .reports
                .iter()
                .filter(|r| !r.passed())
                .map(|r| r.id.clone())
                .collect();
            format!("selftest outcome {:?}: {bad:?}", first.outcome)
        })?;
        ensure(secs < 300.0, || format!("{secs:.1}s on one thread"))?;
        ensure(a == b, || "reports differ between runs".into())?;
        let dmax = first
            .reports
            .iter()
            .map(|r| r.config.n.max(r.config.m))
            .max()
            .unwrap_or(0);
        Ok(format!(
            "{} scenarios up to dimension {dmax}, {secs:.1}s on one thread, identical reports across runs",
            first.reports.len()
        ))
    })();
    (verdict, Some(first))
}

fn main() -> ExitCode {
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    results.push((1, "classical reduction", classical_reduction()));
    results.push((2, "projection certificates", projection_certificates()));
    results.push((3, "defining identities", defining_identities()));
    let (seven, suite) = full_suite();
    let missing = || Err("selftest did not run".to_string());
    results.push((
        4,
        "equivalence unanimity",
        suite.as_ref().map_or_else(missing, unanimity),
    ));
    results.push((5, "bound suite", suite.as_ref().map_or_else(missing, bound_suite)));
    results.push((
        6,
        "perturbation formulas",
        suite.as_ref().map_or_else(missing, perturbation_formulas),
    ));
    results.push((7, "full suite", seven));

    let mut failed = 0;
    for (k, name, r) in &results {
        match r {
            Ok(detail) => println!("criterion {k} ({name}): PASS  {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {k} ({name}): FAIL  {why}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
