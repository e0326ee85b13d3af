//! Scenario generation, execution and reporting behind the command-line tool.
//!
//! A scenario is a JSON [`ScenarioConfig`]; [`run`] turns it into a
//! [`RunReport`] whose flat [`CheckRow`]s are also the CSV output.

mod config;
mod generate;
mod run;

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

pub use config::{
    parse_document, Expectation, Family, Perturbation, ScenarioConfig, SpeciesChoice, Tolerances, DEFAULT_SAMPLES,
    MAX_DIM,
};
pub use generate::{generate, Generated, PostCondition};
pub use run::{run, CheckRow, CheckVerdict, Outcome, RunOptions, RunReport};

use crate::error::{Error, Result};
use crate::perturb::Verdict;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct SuiteSummary {
    pub scenarios: usize,
    pub passed: usize,
    /// Scenarios with a decided, unanimously failing equivalence report.
    pub decided_violations: usize,
    /// Scenarios with a decided, unanimously holding stability report.
    pub decided_stable: usize,
    /// Equivalence reports whose decided conditions disagree.
    pub splits: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub summary: SuiteSummary,
    pub outcome: Outcome,
    pub reports: Vec<RunReport>,
}

impl SuiteReport {
    pub fn exit_code(&self) -> i32 {
        self.outcome.exit_code()
    }
}

/// Runs every scenario on a pool of `jobs` threads (0 = one per core) and
/// returns the reports sorted by scenario id.
pub fn suite(configs: &[ScenarioConfig], opts: &RunOptions, jobs: usize) -> Result<SuiteReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let mut reports: Vec<RunReport> = pool.install(|| configs.par_iter().map(|c| run(c, opts)).collect());
    reports.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(summarize(reports))
}

pub fn summarize(reports: Vec<RunReport>) -> SuiteReport {
    let mut s = SuiteSummary {
        scenarios: reports.len(),
        ..Default::default()
    };
    let mut outcome = Outcome::Pass;
    for r in &reports {
        outcome = outcome.combine(r.outcome);
        s.passed += r.passed() as usize;
        let eqs: Vec<_> = [&r.stability, &r.splitting].into_iter().flatten().collect();
        s.splits += eqs.iter().filter(|e| e.split()).count();
        if eqs.iter().any(|e| e.decided() && e.verdict() == Verdict::Fails) {
            s.decided_violations += 1;
        }
        if r.stability
            .as_ref()
            .is_some_and(|e| e.decided() && e.verdict() == Verdict::Holds)
        {
            s.decided_stable += 1;
        }
    }
    SuiteReport {
        summary: s,
        outcome,
        reports,
    }
}

/// Samples per check in the built-in corpus.
pub const SELFTEST_SAMPLES: usize = DEFAULT_SAMPLES;

fn scenario(
    family: Family,
    (n, m): (usize, usize),
    (p, q): (f64, f64),
    perturbation: Perturbation,
    seed: u64,
    expect: Expectation,
) -> ScenarioConfig {
    let mut c = ScenarioConfig::skeleton(family, seed);
    c.n = n;
    c.m = m;
    c.p = Some(p);
    c.q = Some(q);
    c.perturbation = perturbation;
    c.samples = SELFTEST_SAMPLES;
    c.expect = expect;
    c
}

/// The built-in property corpus: every family and perturbation mode, with
/// engineered violations for both equivalences and a few 16-dimensional
/// cases.
pub fn selftest_corpus(base_seed: u64) -> Vec<ScenarioConfig> {
    use Perturbation as P;
    let any = Expectation::Any;
    let viol = Expectation::Violation;
    let mut out = Vec::new();
    let mut seed = base_seed;
    let mut next = || {
        seed = seed.wrapping_add(1);
        seed
    };

    let dims = [(3, 3), (4, 5), (5, 4), (6, 6), (7, 8), (8, 6)];
    let exps = [(1.5, 3.0), (3.0, 4.0), (4.0, 1.5), (2.0, 3.0)];
    for k in 0..14 {
        let d = dims[k % dims.len()];
        out.push(scenario(
            Family::F1,
            d,
            (2.0, 2.0),
            P::Violation {
                sigma: 0.3 + 0.1 * (k % 5) as f64,
            },
            next(),
            viol,
        ));
        let e = exps[k % exps.len()];
        out.push(scenario(Family::F4, d, e, P::Violation { sigma: 0.5 }, next(), viol));
    }

    let f1_modes = [
        P::Zero,
        P::ScaledT { epsilon: 0.01 },
        P::ScaledT { epsilon: 0.1 },
        P::ScaledT { epsilon: 0.3 },
        P::RangeAligned { epsilon: 0.1 },
        P::NullAligned { epsilon: 0.1 },
        P::TwoSided { epsilon: 0.05 },
    ];
    for (k, mode) in f1_modes.iter().enumerate() {
        for j in 0..2 {
            let d = dims[(k + 3 * j) % dims.len()];
            out.push(scenario(Family::F1, d, (2.0, 2.0), mode.clone(), next(), any));
        }
    }
    for k in 0..4 {
        out.push(scenario(Family::F1, dims[k + 1], (2.0, 2.0), P::RankDrop, next(), viol));
    }

    let f2_modes = [
        P::Zero,
        P::ScaledT { epsilon: 0.01 },
        P::ScaledT { epsilon: 0.1 },
        P::ScaledT { epsilon: 0.3 },
        P::RangeAligned { epsilon: 0.1 },
        P::TwoSided { epsilon: 0.1 },
        P::NullAligned { epsilon: 0.1 },
    ];
    for q in [3.0, 4.0] {
        for (k, mode) in f2_modes.iter().enumerate() {
            let d = [(4, 5), (5, 6), (3, 5), (6, 8)][k % 4];
            out.push(scenario(Family::F2, d, (2.0, q), mode.clone(), next(), any));
        }
        out.push(scenario(Family::F2, (4, 6), (2.0, q), P::RankDrop, next(), viol));
    }

    let f3_modes = [
        P::ScaledT { epsilon: 0.1 },
        P::RangeAligned { epsilon: 0.1 },
        P::TwoSided { epsilon: 0.1 },
        P::NullAligned { epsilon: 0.1 },
        P::RankDrop,
    ];
    for e in [(3.0, 1.5), (1.5, 4.0), (4.0, 3.0)] {
        for (k, mode) in f3_modes.iter().enumerate() {
            let d = [(3, 5), (4, 6), (2, 4), (5, 5), (3, 3)][k];
            let ex = if matches!(mode, P::RankDrop) { viol } else { any };
            out.push(scenario(Family::F3, d, e, mode.clone(), next(), ex));
        }
    }

    let f4_modes = [
        P::Zero,
        P::ScaledT { epsilon: 0.1 },
        P::RangeAligned { epsilon: 0.1 },
        P::NullAligned { epsilon: 0.1 },
        P::TwoSided { epsilon: 0.1 },
        P::RankDrop,
    ];
    for e in [(4.0, 3.0), (1.5, 1.5), (3.0, 4.0)] {
        for (k, mode) in f4_modes.iter().enumerate() {
            let d = dims[(k + 1) % dims.len()];
            let ex = if matches!(mode, P::RankDrop) { viol } else { any };
            out.push(scenario(Family::F4, d, e, mode.clone(), next(), ex));
        }
    }

    out.push(scenario(
        Family::F1,
        (16, 16),
        (2.0, 2.0),
        P::ScaledT { epsilon: 0.1 },
        next(),
        any,
    ));
    out.push(scenario(
        Family::F1,
        (16, 12),
        (2.0, 2.0),
        P::Violation { sigma: 0.5 },
        next(),
        viol,
    ));
    out.push(scenario(
        Family::F2,
        (12, 16),
        (2.0, 4.0),
        P::RangeAligned { epsilon: 0.1 },
        next(),
        any,
    ));
    out.push(scenario(
        Family::F3,
        (8, 16),
        (3.0, 1.5),
        P::TwoSided { epsilon: 0.1 },
        next(),
        any,
    ));
    out.push(scenario(
        Family::F4,
        (16, 14),
        (4.0, 3.0),
        P::Violation { sigma: 0.5 },
        next(),
        viol,
    ));
    out
}

pub fn selftest(base_seed: u64, opts: &RunOptions, jobs: usize) -> Result<SuiteReport> {
    suite(&selftest_corpus(base_seed), opts, jobs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            other => Err(format!("unknown format {other:?} (expected json or csv)")),
        }
    }
}

pub fn write_json<W: Write, T: Serialize>(w: &mut W, value: &T) -> std::io::Result<()> {
    serde_json::to_writer_pretty(&mut *w, value)?;
    writeln!(w)
}

/// One row per check: scenario, check, bound, observed, sidedness, verdict.
pub fn write_csv<W: Write>(w: W, reports: &[RunReport]) -> std::io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in reports {
        if r.checks.is_empty() {
            out.serialize(CheckRow {
                scenario: r.id.clone(),
                check: r.error.clone().unwrap_or_else(|| "no checks".into()),
                bound: None,
                observed: None,
                sidedness: String::new(),
                verdict: CheckVerdict::Fail,
            })?;
        }
        for c in &r.checks {
            out.serialize(c)?;
        }
    }
    out.flush()
}

pub fn write_reports<W: Write>(w: &mut W, format: Format, suite: &SuiteReport) -> std::io::Result<()> {
    match format {
        Format::Json => write_json(w, suite),
        Format::Csv => write_csv(w, &suite.reports),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_meets_its_quotas() {
        let c = selftest_corpus(0);
        assert!(c.len() >= 100, "{}", c.len());
        let v = c
            .iter()
            .filter(|s| matches!(s.perturbation, Perturbation::Violation { .. }))
            .count();
        assert!(v >= 20);
        for s in &c {
            s.validate().unwrap();
            assert!(s.n <= MAX_DIM && s.m <= MAX_DIM);
        }
        let mut ids: Vec<_> = c.iter().map(|s| s.id()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), c.len(), "scenario ids must be unique");
    }

    #[test]
    fn zero_perturbation_smoke() {
        let mut c = ScenarioConfig::skeleton(Family::F1, 5);
        c.perturbation = Perturbation::Zero;
        c.samples = 100;
        let r = run(&c, &RunOptions::default());
        assert!(r.passed(), "{:#?}", r.failures);
    }

    #[test]
    fn invalid_config_outcome() {
        let mut c = ScenarioConfig::skeleton(Family::F1, 5);
        c.q = Some(3.0);
        let r = run(&c, &RunOptions::default());
        assert_eq!(r.outcome, Outcome::InvalidConfig);
        assert_eq!(r.outcome.exit_code(), 2);
    }

    #[test]
    fn outcome_precedence() {
        assert_eq!(
            Outcome::Violation.combine(Outcome::SolverFailure),
            Outcome::SolverFailure
        );
        assert_eq!(
            Outcome::SolverFailure.combine(Outcome::InvalidConfig),
            Outcome::InvalidConfig
        );
        assert_eq!(Outcome::Pass.combine(Outcome::Violation), Outcome::Violation);
    }
}
