//! Randomized invariants. Each case draws a seed and builds its inputs from
//! it, so a shrunk failure is reproducible from the printed seed alone.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use metric_geninv::geninv::{metric_geninv, pointwise_defect};
use metric_geninv::harness::{generate, parse_document, Family, Outcome, Perturbation, ScenarioConfig};
use metric_geninv::linalg::{self, svd};
use metric_geninv::operators::{norm_estimate, HomogeneousMap, LinearMap};
use metric_geninv::oracle;
use metric_geninv::projection::{metric_projector, project, ProjectionOptions};
use metric_geninv::sampling::{random_in_span, random_matrix, random_normal, random_orthonormal, rng_for};
use metric_geninv::space::{dist_to_subspace, LpSpace, LpVector};
use metric_geninv::subspace::Subspace;

const EXPONENTS: [f64; 5] = [1.25, 1.5, 2.0, 3.0, 4.0];

fn rel(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn projection_is_a_homogeneous_idempotent_retraction(
        seed in any::<u64>(), n in 2usize..9, pk in 0usize..5, lambda in -4.0f64..4.0,
    ) {
        let mut rng = rng_for(seed, "prop/projection");
        let p = EXPONENTS[pk];
        let k = 1 + (seed as usize) % (n - 1);
        let space = LpSpace::new(n, p).unwrap();
        let v = Subspace::span(space, &random_orthonormal(&mut rng, n, k)).unwrap();
        let pi = metric_projector(&v);
        let x = random_normal(&mut rng, n);
        let px = pi.eval(&x).unwrap();
        prop_assert!(v.contains_vector(&px, 1e-10));
        prop_assert!(rel(&pi.eval(&px).unwrap(), &px) <= 1e-9);
        prop_assert!(rel(&pi.eval(&(&x * lambda)).unwrap(), &(&px * lambda)) <= 1e-9);
        let z = random_in_span(&mut rng, v.basis());
        prop_assert!(rel(&pi.eval(&(&x + &z)).unwrap(), &(&px + &z)) <= 1e-9);
        prop_assert!(space.norm_of(&px) <= 2.0 * space.norm_of(&x) * (1.0 + 1e-12));
    }

    #[test]
    fn projection_beats_every_competitor(seed in any::<u64>(), n in 2usize..8, pk in 0usize..5) {
        let mut rng = rng_for(seed, "prop/competitor");
        let p = EXPONENTS[pk];
        let space = LpSpace::new(n, p).unwrap();
        let v = Subspace::span(space, &random_orthonormal(&mut rng, n, n - 1)).unwrap();
        let x = LpVector::new(space, random_normal(&mut rng, n)).unwrap();
        let d = dist_to_subspace(&x, &v).unwrap();
        for _ in 0..32 {
            let w = random_in_span(&mut rng, v.basis());
            prop_assert!(d <= space.norm_of(&(x.coords() - w)) * (1.0 + 1e-12));
        }
        let res = project(&x, &v, &ProjectionOptions::for_norm(space.norm)).unwrap();
        prop_assert!((res.residual_norm - d).abs() <= 1e-12 * d.max(1.0));
    }

    #[test]
    fn svd_reconstructs_rank_deficient_matrices(seed in any::<u64>(), m in 1usize..9, n in 1usize..9) {
        let mut rng = rng_for(seed, "prop/svd");
        let r = 1 + (seed as usize) % m.min(n);
        let mut a = random_matrix(&mut rng, m, r) * random_matrix(&mut rng, r, n);
        // Zero rows are the case that motivated an in-house decomposition.
        if m > 1 {
            a.row_mut((seed as usize / 7) % m).fill(0.0);
        }
        let s = svd(&a);
        let (u, vt) = (s.u.unwrap(), s.v_t.unwrap());
        let back = &u * DMatrix::from_diagonal(&s.singular_values) * &vt;
        prop_assert!((&back - &a).norm() <= 1e-13 * a.norm().max(1.0));
        for w in s.singular_values.as_slice().windows(2) {
            prop_assert!(w[0] >= w[1]);
        }
        let rank = linalg::rank(&a);
        prop_assert!(rank <= r);
        let u_r = u.columns(0, rank);
        prop_assert!((u_r.transpose() * u_r - DMatrix::identity(rank, rank)).norm() <= 1e-12);
    }

    #[test]
    fn both_pseudoinverses_satisfy_the_penrose_equations(seed in any::<u64>(), m in 1usize..8, n in 1usize..8) {
        let mut rng = rng_for(seed, "prop/penrose");
        let r = 1 + (seed as usize) % m.min(n);
        let a = random_matrix(&mut rng, m, r) * random_matrix(&mut rng, r, n);
        for x in [linalg::pseudo_inverse(&a), oracle::pseudo_inverse(&a)] {
            let scale = a.norm() * x.norm();
            prop_assert!((&a * &x * &a - &a).norm() <= 1e-9 * a.norm() * scale);
            prop_assert!((&x * &a * &x - &x).norm() <= 1e-9 * x.norm() * scale);
            prop_assert!((&a * &x - (&a * &x).transpose()).norm() <= 1e-9 * scale);
            prop_assert!((&x * &a - (&x * &a).transpose()).norm() <= 1e-9 * scale);
        }
    }

    #[test]
    fn generated_bundles_satisfy_their_identities(seed in 0u64..10_000, fk in 0usize..4, n in 2usize..7, m in 2usize..7) {
        let family = [Family::F1, Family::F2, Family::F3, Family::F4][fk];
        let mut c = ScenarioConfig::skeleton(family, seed);
        c.n = n;
        c.m = m;
        prop_assume!(c.validate().is_ok());
        let g = generate(&c).unwrap();
        let mut rng = rng_for(seed, "prop/identities");
        let id = g.scenario.bundle().check_identities(200, &mut rng).unwrap();
        prop_assert!(id.holds(1e-8), "{}: {:?}", c.id(), id.defects);
    }

    #[test]
    fn euclidean_metric_inverse_is_the_pseudoinverse(seed in any::<u64>(), m in 1usize..7, n in 1usize..7) {
        let mut rng = rng_for(seed, "prop/euclidean");
        let r = 1 + (seed as usize) % m.min(n);
        let a = random_matrix(&mut rng, m, r) * random_matrix(&mut rng, r, n);
        let t = LinearMap::new(a.clone(), LpSpace::euclidean(n), LpSpace::euclidean(m)).unwrap();
        let b = metric_geninv(&t).unwrap();
        let pinv = oracle::pseudo_inverse(&a);
        let o = HomogeneousMap::new(t.codomain(), t.domain(), "oracle", move |y: &DVector<f64>| Ok(&pinv * y));
        prop_assert!(pointwise_defect(b.th(), &o, 50, &mut rng).unwrap() <= 1e-9);
    }

    #[test]
    fn sampled_norm_never_exceeds_the_certified_bound(seed in any::<u64>(), n in 2usize..7, pk in 0usize..5) {
        let mut rng = rng_for(seed, "prop/norm");
        let p = EXPONENTS[pk];
        let space = LpSpace::new(n, p).unwrap();
        let v = Subspace::span(space, &random_orthonormal(&mut rng, n, 1 + (seed as usize) % (n - 1))).unwrap();
        let est = norm_estimate(&metric_projector(&v), 24).unwrap();
        prop_assert!(est.value >= 1.0 - 1e-9 && est.value <= 2.0 + 1e-12);
    }

    #[test]
    fn configs_survive_a_json_round_trip(seed in any::<u64>(), fk in 0usize..4, eps in 0.0f64..0.9) {
        let family = [Family::F1, Family::F2, Family::F3, Family::F4][fk];
        let mut c = ScenarioConfig::skeleton(family, seed);
        c.perturbation = Perturbation::TwoSided { epsilon: eps };
        let text = serde_json::to_string(&c).unwrap();
        prop_assert_eq!(parse_document(&text).unwrap(), vec![c]);
    }

    #[test]
    fn outcome_combination_is_a_maximum(a in 0usize..4, b in 0usize..4) {
        let all = [Outcome::Pass, Outcome::Violation, Outcome::SolverFailure, Outcome::InvalidConfig];
        let (x, y) = (all[a], all[b]);
        prop_assert_eq!(x.combine(y), y.combine(x));
        prop_assert_eq!(x.combine(y), all[a.max(b)]);
    }
}
