use ineqlab_core::duality::{biconjugate_check, young_gap, TabulatedConvexFn};
use ineqlab_core::grid::{GridFunction, GridSpec};
use ineqlab_core::lp::{energy, grad_energy, grad_energy_dual, strong_convexity_gap};
use ineqlab_core::sobolev::{kappa_star, transfer_inequality_check, SobolevSystem};
use num_complex::Complex64;
use proptest::prelude::*;

const N: usize = 32;

fn spec() -> GridSpec {
    GridSpec::new(1, N, 3.0).unwrap()
}

fn field() -> impl Strategy<Value = GridFunction> {
    prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), N)
        .prop_map(|v| GridFunction::new(spec(), v.into_iter().map(|(a, b)| Complex64::new(a, b)).collect()).unwrap())
}

fn nonzero_field() -> impl Strategy<Value = GridFunction> {
    field().prop_filter("nonzero", |f| f.lp_norm(2.0).unwrap() > 1e-3)
}

/// Convex tabulated function from a sorted slope sequence.
fn convex_table() -> impl Strategy<Value = TabulatedConvexFn> {
    (prop::collection::vec(-5.0f64..5.0, 4..20), -3.0f64..3.0).prop_map(|(mut slopes, v0)| {
        slopes.sort_by(f64::total_cmp);
        let h = 0.25;
        let knots: Vec<f64> = (0..=slopes.len()).map(|i| -1.0 + h * i as f64).collect();
        let mut values = vec![v0];
        for s in &slopes {
            values.push(values.last().unwrap() + s * h);
        }
        TabulatedConvexFn::closed(knots, values).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn plancherel(f in field()) {
        let h = spec().spacing();
        let spectral: f64 = f.spectrum().iter().map(|c| c.norm_sqr()).sum::<f64>() * h / N as f64;
        let direct = f.lp_norm(2.0).unwrap().powi(2);
        prop_assert!((spectral - direct).abs() <= 1e-12 * direct.max(1e-300));
    }

    #[test]
    fn holder(f in field(), g in field(), p in 1.05f64..8.0) {
        let q = p / (p - 1.0);
        let lhs = f.pairing(&g).unwrap().abs();
        let rhs = 2.0 * f.lp_norm(p).unwrap() * g.lp_norm(q).unwrap();
        prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-300);
    }

    #[test]
    fn resample_round_trip(f in field()) {
        let up = f.resample(2 * N).unwrap();
        let back = up.resample(N).unwrap();
        let err = back.sub(&f).unwrap().lp_norm(f64::INFINITY).unwrap();
        prop_assert!(err <= 1e-12 * f.lp_norm(f64::INFINITY).unwrap().max(1e-300));
    }

    #[test]
    fn gradient_round_trip(f in nonzero_field(), p in 1.1f64..6.0) {
        let g = grad_energy(&f, p).unwrap();
        let q = p / (p - 1.0);
        prop_assert!((g.lp_norm(q).unwrap() / f.lp_norm(p).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!((f.pairing(&g).unwrap() / (2.0 * energy(&f, p).unwrap()) - 1.0).abs() < 1e-12);
        let back = grad_energy_dual(&g, p).unwrap();
        let err = back.sub(&f).unwrap().lp_norm(p).unwrap();
        prop_assert!(err <= 1e-10 * f.lp_norm(p).unwrap());
    }

    #[test]
    fn gradient_is_complex_homogeneous(f in nonzero_field(), p in 1.1f64..6.0, re in -2.0f64..2.0, im in 0.1f64..2.0) {
        let z = Complex64::new(re, im);
        let lhs = grad_energy(&f.scale(z), p).unwrap();
        let rhs = grad_energy(&f, p).unwrap().scale(z);
        let err = lhs.sub(&rhs).unwrap().lp_norm(f64::INFINITY).unwrap();
        prop_assert!(err <= 1e-11 * rhs.lp_norm(f64::INFINITY).unwrap());
    }

    #[test]
    fn uniform_convexity_margin(f1 in nonzero_field(), f2 in field(), p in 1.1f64..6.0) {
        let w = strong_convexity_gap(&f1, &f2, p).unwrap();
        prop_assert!(w.margin >= -1e-10 * w.scale(), "{:?}", w);
    }

    #[test]
    fn young_gap_is_nonnegative(f in convex_table(), xi in 0usize..20, y in -6.0f64..6.0) {
        let knots = f.knots();
        let x = knots[xi % knots.len()];
        let gap = young_gap(&f, x, y).unwrap();
        prop_assert!(gap >= -1e-12 * (1.0 + x.abs() * y.abs() + f.eval(x).unwrap().abs()));
    }

    #[test]
    fn biconjugate_within_slope_range_times_spacing(f in convex_table()) {
        // Interpolating f* between dual knots of spacing (slope range)/(m-1)
        // costs at most a quarter of that times the domain width.
        let (lo, hi) = f.slope_range();
        let bound = (hi - lo) * f.max_spacing();
        prop_assert!(biconjugate_check(&f).unwrap() <= bound * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn discrete_forms_are_exactly_conjugate(g in nonzero_field(), s in 0.5f64..2.0) {
        let sys = SobolevSystem::new(1, 0.25, s).unwrap();
        let t = transfer_inequality_check(&g, &sys).unwrap();
        prop_assert!(t.young_defect.abs() <= 1e-8 * t.scale);
        prop_assert!(t.slack >= -1e-10 * t.scale, "{:?}", t);
    }

    #[test]
    fn kappa_star_is_pure_and_monotone(k1 in 1e-6f64..10.0, k2 in 1e-6f64..10.0, s in 0.1f64..3.0) {
        let sys = SobolevSystem::new(3, 1.0, s).unwrap();
        let a = kappa_star(k1, &sys).unwrap();
        prop_assert_eq!(a.to_bits(), kappa_star(k1, &sys).unwrap().to_bits());
        let b = kappa_star(k2, &sys).unwrap();
        if k1 <= k2 {
            prop_assert!(a <= b);
        }
        prop_assert!(a > 0.0 && a <= 0.5 * sys.rho());
    }
}
