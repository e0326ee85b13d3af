use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 16;
pub const DEFAULT_SAMPLES: usize = 1000;

/// Operator family. Each one makes the quasi-additivity hypotheses
/// checkable-true for suitable perturbations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, PartialOrd, Ord)]
pub enum Family {
    /// Both spaces Euclidean; everything is linear.
    F1,
    /// Euclidean domain, `lq` codomain; the kernel projector is linear.
    F2,
    /// Injective `T`, any exponents; `P = 0`.
    F3,
    /// Coordinate-aligned range, so `pi_R` is a truncation.
    F4,
    #[serde(rename = "explicit")]
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeciesChoice {
    Metric,
    /// Linear (oblique) kernel projector, `Q = pi_R`.
    QuasiLinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Perturbation {
    Zero,
    ScaledT {
        epsilon: f64,
    },
    /// `R(dT) ⊂ R(T)`.
    RangeAligned {
        epsilon: f64,
    },
    /// `N(T) ⊂ N(dT)`.
    NullAligned {
        epsilon: f64,
    },
    /// Both containments.
    TwoSided {
        epsilon: f64,
    },
    /// Rank-one `dT` carrying a kernel vector of `T` onto `N(Q)`; never stable.
    Violation {
        #[serde(default = "default_sigma")]
        sigma: f64,
    },
    /// Rank-one `dT` that annihilates a vector of `R(Th)`; makes `I + Th dT`
    /// singular.
    RankDrop,
    Explicit {
        matrix: Vec<Vec<f64>>,
    },
}

fn default_sigma() -> f64 {
    0.5
}

impl Perturbation {
    pub fn mode(&self) -> &'static str {
        match self {
            Perturbation::Zero => "zero",
            Perturbation::ScaledT { .. } => "scaled_t",
            Perturbation::RangeAligned { .. } => "range_aligned",
            Perturbation::NullAligned { .. } => "null_aligned",
            Perturbation::TwoSided { .. } => "two_sided",
            Perturbation::Violation { .. } => "violation",
            Perturbation::RankDrop => "rank_drop",
            Perturbation::Explicit { .. } => "explicit",
        }
    }

    pub fn epsilon(&self) -> Option<f64> {
        match self {
            Perturbation::ScaledT { epsilon }
            | Perturbation::RangeAligned { epsilon }
            | Perturbation::NullAligned { epsilon }
            | Perturbation::TwoSided { epsilon } => Some(*epsilon),
            _ => None,
        }
    }
}

/// What a scenario is expected to show.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    /// No expectation on the verdicts; only consistency is checked.
    #[default]
    Any,
    Stable,
    /// The equivalences must be decided and fail unanimously.
    Violation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Relative defect allowed in identities and formula agreement.
    pub identity: f64,
    /// Agreement with the independent pseudoinverse oracle.
    pub oracle: f64,
    /// Agreement with closed-form scaling values.
    pub closed_form: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            identity: 1e-8,
            oracle: 1e-8,
            closed_form: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub family: Family,
    /// Domain dimension.
    pub n: usize,
    /// Codomain dimension.
    pub m: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub species: Option<SpeciesChoice>,
    pub perturbation: Perturbation,
    /// Row-major `m x n` operator for the explicit family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub expect: Expectation,
}

fn default_samples() -> usize {
    DEFAULT_SAMPLES
}

/// Parses one scenario, or a suite `{"scenarios": [...]}`.
pub fn parse_document(text: &str) -> Result<Vec<ScenarioConfig>> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let suite = value.as_object().is_some_and(|o| o.contains_key("scenarios"));
    if suite {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Suite {
            scenarios: Vec<ScenarioConfig>,
        }
        let s: Suite = serde_json::from_value(value).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Ok(s.scenarios)
    } else {
        let c: ScenarioConfig = serde_json::from_value(value).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Ok(vec![c])
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

impl ScenarioConfig {
    /// Skeleton for `family` with the default perturbation for it.
    pub fn skeleton(family: Family, seed: u64) -> Self {
        let (p, q) = match family {
            Family::F1 | Family::Explicit => (2.0, 2.0),
            Family::F2 => (2.0, 4.0),
            Family::F3 => (3.0, 1.5),
            Family::F4 => (4.0, 3.0),
        };
        ScenarioConfig {
            id: None,
            family,
            n: 4,
            m: 5,
            rank: None,
            p: Some(p),
            q: Some(q),
            species: None,
            perturbation: Perturbation::RangeAligned { epsilon: 0.1 },
            t: (family == Family::Explicit).then(|| {
                vec![
                    vec![1.0, 0.0, 0.0, 0.0],
                    vec![0.0, 1.0, 0.0, 0.0],
                    vec![1.0, 1.0, 0.0, 0.0],
                    vec![0.0, 0.0, 0.0, 0.0],
                    vec![0.0, 2.0, 0.0, 0.0],
                ]
            }),
            seed,
            samples: DEFAULT_SAMPLES,
            tolerances: Tolerances::default(),
            expect: Expectation::Any,
        }
    }

    pub fn p(&self) -> f64 {
        self.p.unwrap_or(2.0)
    }

    pub fn q(&self) -> f64 {
        self.q.unwrap_or(match self.family {
            Family::F2 => 4.0,
            _ => 2.0,
        })
    }

    pub fn species(&self) -> SpeciesChoice {
        self.species.unwrap_or(match self.family {
            Family::F4 => SpeciesChoice::QuasiLinear,
            _ => SpeciesChoice::Metric,
        })
    }

    /// Rank of the generated operator.
    pub fn rank(&self) -> usize {
        let k = self.n.min(self.m);
        self.rank.unwrap_or(match self.family {
            Family::F3 => self.n,
            // Metric projections onto hyperplanes are linear; keep the range
            // of codimension two so F2 exercises a nonlinear pi_R.
            Family::F2 => (self.n.saturating_sub(1)).min(self.m.saturating_sub(2)).max(1),
            _ => k.saturating_sub(1).max(1),
        })
    }

    pub fn id(&self) -> String {
        self.id.clone().unwrap_or_else(|| {
            format!(
                "{:?}-{}-n{}m{}-s{}",
                self.family,
                self.perturbation.mode(),
                self.n,
                self.m,
                self.seed
            )
            .to_lowercase()
        })
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.n, self.m);
        if n == 0 || m == 0 || n > MAX_DIM || m > MAX_DIM {
            return Err(invalid(format!(
                "dimensions must lie in 1..={MAX_DIM}, got n = {n}, m = {m}"
            )));
        }
        for (name, v) in [("p", self.p()), ("q", self.q())] {
            if !(v > 1.0 && v.is_finite()) {
                return Err(invalid(format!("{name} = {v} must lie in (1, inf)")));
            }
        }
        if self.samples == 0 {
            return Err(invalid("samples must be positive"));
        }
        let t = &self.tolerances;
        if [t.identity, t.oracle, t.closed_form].iter().any(|v| !(*v > 0.0)) {
            return Err(invalid("tolerances must be positive"));
        }
        let rank = self.rank();
        if self.family != Family::Explicit && (rank == 0 || rank > n.min(m)) {
            return Err(invalid(format!("rank {rank} must lie in 1..={}", n.min(m))));
        }
        match self.family {
            Family::F1 if self.p() != 2.0 || self.q() != 2.0 => {
                return Err(invalid("family F1 requires p = q = 2"));
            }
            Family::F2 if self.p() != 2.0 => return Err(invalid("family F2 requires p = 2")),
            Family::F3 if rank != n => return Err(invalid("family F3 requires an injective T (rank = n)")),
            Family::Explicit => {
                let rows = self
                    .t
                    .as_ref()
                    .ok_or_else(|| invalid("family explicit requires the matrix t"))?;
                check_matrix("t", rows, m, n)?;
            }
            _ => {}
        }
        if self.family != Family::Explicit && self.t.is_some() {
            return Err(invalid("t is only accepted for the explicit family"));
        }
        if let Some(e) = self.perturbation.epsilon() {
            if !(0.0..1.0).contains(&e) {
                return Err(invalid(format!("epsilon = {e} must lie in [0, 1)")));
            }
        }
        match &self.perturbation {
            Perturbation::Violation { sigma } => {
                if !(*sigma > 0.0 && sigma.is_finite()) {
                    return Err(invalid("violation sigma must be positive"));
                }
                if matches!(self.family, Family::F2 | Family::F3) {
                    return Err(invalid(
                        "violation mode needs a linear Q and a nontrivial kernel (families F1, F4, explicit)",
                    ));
                }
                if self.family != Family::Explicit && (rank >= n || rank >= m) {
                    return Err(invalid("violation mode needs rank < min(n, m)"));
                }
            }
            Perturbation::Explicit { matrix } => check_matrix("perturbation matrix", matrix, m, n)?,
            _ => {}
        }
        Ok(())
    }
}

fn check_matrix(name: &str, rows: &[Vec<f64>], m: usize, n: usize) -> Result<()> {
    if rows.len() != m || rows.iter().any(|r| r.len() != n) {
        return Err(invalid(format!("{name} must be {m} x {n}")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(invalid(format!("{name} has non-finite entries")));
    }
    Ok(())
}
