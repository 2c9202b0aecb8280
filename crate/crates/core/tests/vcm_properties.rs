use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use vcqr::basis::{gram_eigen_diagnostic, make_basis, BasisKind, Domain, KnotVector, VcDesign};
use vcqr::qrsolve::OPT_TOL;
use vcqr::vcm::{fit_vcqr, linspace, Dataset};

fn sample(seed: u64, n: usize, noise: f64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let t: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let x = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { normal.sample(&mut rng) });
    let y = (0..n)
        .map(|i| (3.0 * t[i]).sin() + (1.0 + t[i]) * x[(i, 1)] + noise * normal.sample(&mut rng))
        .collect();
    Dataset::unnamed(t, x, y).unwrap().with_domain(Domain::unit()).unwrap()
}

fn design(knots: &[f64], kind: BasisKind) -> VcDesign {
    VcDesign::shared(1, make_basis(knots, 1, kind, Domain::unit()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn adding_a_knot_never_increases_objective(
        seed in any::<u64>(),
        tau in 0.1f64..0.9,
        mut knots in proptest::collection::vec(0.05f64..0.95, 0..3),
        extra in 0.05f64..0.95,
    ) {
        knots.sort_by(f64::total_cmp);
        knots.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
        prop_assume!(knots.iter().all(|k| (k - extra).abs() > 1e-3));
        let mut bigger = knots.clone();
        bigger.push(extra);
        bigger.sort_by(f64::total_cmp);
        let data = sample(seed, 60, 0.5);
        let small = fit_vcqr(&data, tau, &design(&knots, BasisKind::BSpline)).unwrap();
        let large = fit_vcqr(&data, tau, &design(&bigger, BasisKind::TruncatedPower)).unwrap();
        prop_assert!(large.fit.objective <= small.fit.objective + OPT_TOL * (1.0 + small.fit.objective));
    }

    #[test]
    fn coefficients_scale_with_response(seed in any::<u64>(), c in 0.1f64..20.0, tau in 0.1f64..0.9) {
        let data = sample(seed, 50, 0.5);
        let scaled = Dataset::unnamed(data.t.clone(), data.x.clone(), data.y.iter().map(|v| c * v).collect())
            .unwrap()
            .with_domain(Domain::unit())
            .unwrap();
        let d = design(&[0.3, 0.7], BasisKind::BSpline);
        let a = fit_vcqr(&data, tau, &d).unwrap();
        let b = fit_vcqr(&scaled, tau, &d).unwrap();
        for t in linspace(0.0, 1.0, 21) {
            for j in 0..2 {
                let (u, v) = (a.coefficient(j, t, 0).unwrap(), b.coefficient(j, t, 0).unwrap());
                prop_assert!((v - c * u).abs() <= 1e-7 * c * (1.0 + u.abs()), "j={} t={} {} vs {}", j, t, v, c * u);
            }
        }
    }
}

#[test]
fn quantile_levels_do_not_cross_on_large_samples() {
    let n = 2000;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let t: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let x = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { normal.sample(&mut rng) });
    let y = (0..n)
        .map(|i| 1.0 + 2.0 * x[(i, 1)] + normal.sample(&mut rng))
        .collect();
    let data = Dataset::unnamed(t, x, y).unwrap().with_domain(Domain::unit()).unwrap();
    let d = design(&[0.25, 0.5, 0.75], BasisKind::BSpline);
    let lo = fit_vcqr(&data, 0.25, &d).unwrap();
    let hi = fit_vcqr(&data, 0.75, &d).unwrap();
    for t in linspace(0.0, 1.0, 101) {
        assert!(
            hi.coefficient(0, t, 0).unwrap() >= lo.coefficient(0, t, 0).unwrap(),
            "crossing at t = {t}"
        );
    }
}

/// Scaled Gram eigenvalues stay inside the Gershgorin interval of the limiting
/// degree-1 B-spline mass matrix, `[k/(6(k+1)), k/(k+1)]`, as `n` and `k` grow.
#[test]
fn gram_eigenvalues_bounded_across_n() {
    let normal = Normal::new(0.0, 1.0).unwrap();
    for (s, n) in [200usize, 800, 3200, 12800].into_iter().enumerate() {
        let k = (n as f64).powf(0.2).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(s as u64);
        let pts: Vec<(f64, Vec<f64>)> = (0..n)
            .map(|_| (rng.random::<f64>(), vec![1.0, normal.sample(&mut rng)]))
            .collect();
        let basis = make_basis(
            KnotVector::equispaced(k, Domain::unit()).interior(),
            1,
            BasisKind::BSpline,
            Domain::unit(),
        )
        .unwrap();
        let g = gram_eigen_diagnostic(&VcDesign::shared(1, basis), &pts).unwrap();
        let h = k as f64 / (k + 1) as f64;
        assert!(g.min_eigenvalue >= 0.5 * h / 6.0, "n={n} min {}", g.min_eigenvalue);
        assert!(g.max_eigenvalue <= 1.5 * h, "n={n} max {}", g.max_eigenvalue);
    }
}
