use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::config::{Family, Perturbation, ScenarioConfig, SpeciesChoice};
use crate::error::{Error, Result};
use crate::geninv::{metric_geninv, oblique_kernel_projector, quasi_linear_geninv, GenInverseBundle};
use crate::linalg::spectral_norm;
use crate::operators::{materialize_linear, LinearMap};
use crate::perturb::{PerturbationScenario, LINEARITY_TOL};
use crate::sampling::{random_in_span, random_matrix, random_normal, random_orthonormal, rng_for, uniform, CheckRng};
use crate::space::LpSpace;
use crate::subspace::{contains, kernel, range, subspace_equal, Subspace, SUBSPACE_TOL};

/// A property the generator promises, re-verified on the output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostCondition {
    pub name: String,
    pub holds: bool,
}

pub struct Generated {
    pub scenario: PerturbationScenario,
    pub postconditions: Vec<PostCondition>,
    /// Rows of the range for family F4.
    coordinate_rows: Option<Vec<usize>>,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

fn from_rows(rows: &[Vec<f64>], m: usize, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, n, |i, j| rows[i][j])
}

/// `U diag(s) V^T` with orthonormal `U`, `V` and singular values in `[0.5, 2]`.
fn well_conditioned(rng: &mut CheckRng, m: usize, n: usize, r: usize) -> DMatrix<f64> {
    let u = random_orthonormal(rng, m, r);
    let v = random_orthonormal(rng, n, r);
    let s = DMatrix::from_diagonal(&DVector::from_fn(r, |_, _| uniform(rng, 0.5, 2.0)));
    u * s * v.transpose()
}

fn operator(config: &ScenarioConfig, rng: &mut CheckRng) -> (DMatrix<f64>, Option<Vec<usize>>) {
    let (m, n, r) = (config.m, config.n, config.rank());
    match config.family {
        Family::F1 | Family::F2 | Family::F3 => (well_conditioned(rng, m, n, r), None),
        Family::F4 => {
            let mut rows = sample(rng, m, r).into_vec();
            rows.sort_unstable();
            let c = well_conditioned(rng, r, n, r);
            let mut t = DMatrix::zeros(m, n);
            for (k, &i) in rows.iter().enumerate() {
                t.set_row(i, &c.row(k));
            }
            (t, Some(rows))
        }
        Family::Explicit => (from_rows(config.t.as_ref().expect("validated"), m, n), None),
    }
}

fn bundle(config: &ScenarioConfig, t: &LinearMap, rng: &mut CheckRng) -> Result<GenInverseBundle> {
    match config.species() {
        SpeciesChoice::Metric => metric_geninv(t),
        SpeciesChoice::QuasiLinear => quasi_linear_geninv(t, &oblique_kernel_projector(t, rng)),
    }
}

/// Rescales `b` so that its spectral norm is `epsilon ||T||_2`.
fn scaled_like(b: DMatrix<f64>, t: &DMatrix<f64>, epsilon: f64) -> Result<DMatrix<f64>> {
    let nb = spectral_norm(&b);
    if nb == 0.0 {
        return Err(invalid("the requested perturbation shape is zero for this operator"));
    }
    Ok(b * (epsilon * spectral_norm(t) / nb))
}

fn perturbation(config: &ScenarioConfig, b: &GenInverseBundle, rng: &mut CheckRng) -> Result<(DMatrix<f64>, Witness)> {
    let t = b.t().matrix();
    let (m, n) = t.shape();
    let comp = DMatrix::identity(n, n) - b.kernel().euclidean_projector();
    let r_basis = b.range().basis();
    let out = match &config.perturbation {
        Perturbation::Zero => DMatrix::zeros(m, n),
        Perturbation::ScaledT { epsilon } => t * *epsilon,
        Perturbation::RangeAligned { epsilon } => {
            scaled_like(r_basis * random_matrix(rng, r_basis.ncols(), n), t, *epsilon)?
        }
        Perturbation::NullAligned { epsilon } => scaled_like(random_matrix(rng, m, n) * &comp, t, *epsilon)?,
        Perturbation::TwoSided { epsilon } => {
            scaled_like(r_basis * random_matrix(rng, r_basis.ncols(), n) * &comp, t, *epsilon)?
        }
        Perturbation::Violation { sigma } => {
            let q = materialize_linear(b.q(), LINEARITY_TOL).map_err(|_| invalid("violation mode needs a linear Q"))?;
            let nq = kernel(&q);
            let nt = b.kernel();
            if nq.is_trivial() || nt.is_trivial() {
                return Err(invalid("violation mode needs nontrivial N(T) and N(Q)"));
            }
            let u = random_in_span(rng, nq.basis());
            let v = random_in_span(rng, nt.basis());
            let scale = sigma * spectral_norm(t) / (u.norm() * v.norm());
            return Ok((&u * v.transpose() * scale, Witness::Violation { u, v }));
        }
        Perturbation::RankDrop => {
            let x0 = b.th().eval(&(t * random_normal(rng, n)))?;
            let phi = &x0 / x0.norm_squared();
            return Ok((-(t * &x0) * phi.transpose(), Witness::RankDrop(x0)));
        }
        Perturbation::Explicit { matrix } => from_rows(matrix, m, n),
    };
    Ok((out, Witness::None))
}

/// Vectors an engineered perturbation is built from.
enum Witness {
    None,
    RankDrop(DVector<f64>),
    Violation { u: DVector<f64>, v: DVector<f64> },
}

/// Deterministic scenario for `config`, with the family and mode promises
/// re-checked on the result.
pub fn generate(config: &ScenarioConfig) -> Result<Generated> {
    config.validate()?;
    let mut rng = rng_for(config.seed, "generate");
    let x = LpSpace::new(config.n, config.p())?;
    let y = LpSpace::new(config.m, config.q())?;
    let (tm, rows) = operator(config, &mut rng);
    let t = LinearMap::new(tm, x, y)?;
    let b = bundle(config, &t, &mut rng)?;
    let (dm, witness) = perturbation(config, &b, &mut rng)?;
    let dt = LinearMap::new(dm, x, y)?;
    let scenario = PerturbationScenario::new(b, dt)?;
    let mut g = Generated {
        scenario,
        postconditions: Vec::new(),
        coordinate_rows: rows,
    };
    g.postconditions = postconditions(config, &g, &witness)?;
    Ok(g)
}

fn postconditions(config: &ScenarioConfig, g: &Generated, witness: &Witness) -> Result<Vec<PostCondition>> {
    let s = &g.scenario;
    let mut out = Vec::new();
    let mut push = |name: &str, holds: bool| {
        out.push(PostCondition {
            name: name.into(),
            holds,
        })
    };
    match config.family {
        Family::F1 => push(
            "both spaces Euclidean",
            s.t().domain().norm.is_euclidean() && s.t().codomain().norm.is_euclidean(),
        ),
        Family::F2 => push("domain Euclidean", s.t().domain().norm.is_euclidean()),
        Family::F3 => push("N(T) = {0}", kernel(s.t()).is_trivial()),
        Family::F4 => {
            let rows = g.coordinate_rows.as_ref().expect("F4 records its rows");
            let coord = Subspace::coordinate(s.t().codomain(), rows)?;
            push(
                "R(T) coordinate-aligned",
                subspace_equal(&range(s.t()), &coord, SUBSPACE_TOL),
            );
        }
        Family::Explicit => {}
    }
    let range_in = || contains(&range(s.t()), &range(s.dt()), SUBSPACE_TOL);
    let kernel_in = || contains(&kernel(s.dt()), &kernel(s.t()), SUBSPACE_TOL);
    match &config.perturbation {
        Perturbation::ScaledT { .. } | Perturbation::TwoSided { .. } => {
            push("R(dT) ⊂ R(T)", range_in());
            push("N(T) ⊂ N(dT)", kernel_in());
        }
        Perturbation::RangeAligned { .. } => push("R(dT) ⊂ R(T)", range_in()),
        Perturbation::NullAligned { .. } => push("N(T) ⊂ N(dT)", kernel_in()),
        _ => {}
    }
    let scale = s.t().matrix().norm();
    match witness {
        Witness::Violation { u, v } => {
            push("v ∈ N(T)", s.t().apply(v).norm() <= 1e-10 * scale * v.norm());
            push("u ∈ N(Q)", s.bundle().q().eval(u)?.norm() <= 1e-8 * u.norm());
        }
        Witness::RankDrop(x0) => {
            push("T̄ x0 = 0", s.tbar().apply(x0).norm() <= 1e-10 * scale * x0.norm());
            push("x0 ∈ R(Th)", s.bundle().p().eval(x0)?.norm() <= 1e-8 * x0.norm());
        }
        Witness::None => {}
    }
    Ok(out)
}
