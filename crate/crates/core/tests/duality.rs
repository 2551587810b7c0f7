use ineqlab_core::duality::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grid(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    (0..=m).map(|i| lo + (hi - lo) * i as f64 / m as f64).collect()
}

fn parabola(lo: f64, hi: f64, m: usize) -> TabulatedConvexFn {
    TabulatedConvexFn::sample(grid(lo, hi, m), |x| x * x).unwrap()
}

#[test]
fn parabola_biconjugate_within_twice_spacing_squared() {
    for m in [16, 64, 256] {
        let f = parabola(-2.0, 2.0, m);
        let h = 4.0 / m as f64;
        let d = biconjugate_check(&f).unwrap();
        assert!(d <= 2.0 * h * h, "m = {m}: {d}");
    }
}

#[test]
fn parabola_conjugate_is_quarter_square() {
    let f = parabola(-4.0, 4.0, 160);
    let h = 0.05;
    let g = f.legendre(&grid(-6.0, 6.0, 120)).unwrap();
    for &y in &g.knots()[1..120] {
        let v = g.eval(y).unwrap();
        assert!((v - 0.25 * y * y).abs() <= h * h, "{y}");
    }
}

#[test]
fn abs_is_its_own_biconjugate() {
    let f = TabulatedConvexFn::sample(grid(-4.0, 4.0, 8), f64::abs).unwrap();
    assert_eq!(biconjugate_check(&f).unwrap(), 0.0);
    assert!(f.conjugate_at(0.3).unwrap().abs() < 1e-15);
    assert!(f.conjugate_at(1.0 + 1e-9).unwrap() > 0.0);
    let affine = TabulatedConvexFn::sample_with_affine_tails(grid(-4.0, 4.0, 8), f64::abs).unwrap();
    assert_eq!(affine.conjugate_at(1.5), None);
}

#[test]
fn point_indicator_is_fixed() {
    let f = TabulatedConvexFn::closed(vec![-1.0, 0.0, 1.0], vec![f64::INFINITY, 0.0, f64::INFINITY]).unwrap();
    let g = f.legendre(&grid(-2.0, 2.0, 8)).unwrap();
    for &y in g.knots() {
        assert_eq!(g.eval(y), Some(0.0));
    }
    assert_eq!(biconjugate_check(&f).unwrap(), 0.0);
}

#[test]
fn sqex_subgradients_and_young() {
    let e = TabulatedConvexFn::sample(grid(-2.0, 2.0, 40), f64::abs).unwrap();
    let f = TabulatedConvexFn::sample(grid(-2.0, 2.0, 40), |x| 2.0 * x.abs()).unwrap();
    let de = e.subgradient(0.0).unwrap();
    let df = f.subgradient(0.0).unwrap();
    assert_eq!((de.lo, de.hi), (-1.0, 1.0));
    assert_eq!((df.lo, df.hi), (-2.0, 2.0));
    assert!(de.is_subset_of(&df, 0.0) && !df.is_subset_of(&de, 0.0));
    assert_eq!(young_gap(&e, 0.0, 0.5).unwrap(), 0.0);
    let report = optimizer_duality_check(&e, &f, &grid(-2.0, 2.0, 40)).unwrap();
    assert_eq!(report.primal_optimizers, vec![0.0]);
    assert!(report.holds(), "{report:?}");
}

#[test]
fn parabola_young_examples() {
    let f = parabola(-3.0, 3.0, 60);
    assert!(young_gap(&f, 1.0, 2.0).unwrap().abs() < 1e-12);
    assert!((young_gap(&f, 1.0, 0.0).unwrap() - 1.0).abs() < 1e-12);
    let d = f.subgradient(1.0).unwrap();
    assert!((d.lo - 2.0).abs() <= 0.1 + 1e-12 && (d.hi - 2.0).abs() <= 0.1 + 1e-12);
}

#[test]
fn equal_functions_saturate_everywhere() {
    let e = parabola(-2.0, 2.0, 20);
    let dual = grid(-4.0, 4.0, 20);
    let r = optimizer_duality_check(&e, &e, &dual).unwrap();
    assert_eq!(r.primal_optimizers.len(), 21);
    assert_eq!(r.dual_optimizers.len(), 21);
    assert!(r.holds());
    let x = e.knots()[13];
    let g = deficit_duality_gaps(&e, &e, x, 2.0 * x).unwrap();
    assert!(g.primal.unwrap().abs() < 1e-12 && g.dual.unwrap().abs() < 1e-12);
}

#[test]
fn shifted_parabola_optimizers() {
    // F - E = (x - 1)^2 vanishes only at 1; E* - F* vanishes only at E'(1) = 2.
    let knots = grid(-3.0, 3.0, 60);
    let e = TabulatedConvexFn::sample(knots.clone(), |x| x * x).unwrap();
    let f = TabulatedConvexFn::sample(knots, |x| x * x + (x - 1.0) * (x - 1.0)).unwrap();
    let r = optimizer_duality_check(&e, &f, &grid(-6.0, 6.0, 60)).unwrap();
    assert_eq!(r.primal_optimizers.len(), 1);
    assert!((r.primal_optimizers[0] - 1.0).abs() < 1e-12);
    assert!(r.dual_optimizers.iter().all(|y| (y - 2.0).abs() <= 0.2 + 1e-12));
    assert!(r.holds(), "{r:?}");
}

#[test]
fn domination_is_required() {
    let e = parabola(-1.0, 1.0, 10);
    let f = TabulatedConvexFn::sample(grid(-1.0, 1.0, 10), |x| 0.5 * x * x).unwrap();
    assert!(matches!(
        optimizer_duality_check(&e, &f, &grid(-2.0, 2.0, 10)),
        Err(ineqlab_core::Error::NotDominated(_))
    ));
}

#[test]
fn abs_pair_gap_at_one() {
    let e = TabulatedConvexFn::sample(grid(-2.0, 2.0, 40), f64::abs).unwrap();
    let f = TabulatedConvexFn::sample(grid(-2.0, 2.0, 40), |x| 2.0 * x.abs()).unwrap();
    let g = deficit_duality_gaps(&e, &f, 1.0, 2.0).unwrap();
    assert!(g.primal.unwrap() >= 0.0);
    assert!(matches!(
        deficit_duality_gaps(&e, &f, 1.0, 0.3),
        Err(ineqlab_core::Error::PreconditionViolated { .. })
    ));
}

#[test]
fn order_reversal_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let knots = grid(-2.0, 2.0, 32);
    let dual = grid(-5.0, 5.0, 50);
    for _ in 0..50 {
        let a = rng.random_range(0.1..1.0);
        let b = rng.random_range(0.0..1.0);
        let e = TabulatedConvexFn::sample(knots.clone(), |x| a * x * x).unwrap();
        let f = TabulatedConvexFn::sample(knots.clone(), |x| a * x * x + b * x.abs()).unwrap();
        let (es, fs) = (e.legendre(&dual).unwrap(), f.legendre(&dual).unwrap());
        for &y in &dual {
            assert!(fs.eval(y).unwrap() <= es.eval(y).unwrap());
        }
    }
}

#[test]
fn lambda_convexity_carries_to_subgradient_monotonicity() {
    let f = TabulatedConvexFn::sample(grid(-2.0, 2.0, 80), |x| 1.5 * x * x + x.abs()).unwrap();
    let lambda = lambda_on_knots(&f);
    assert!(lambda >= 1.5 - 1e-9);
    assert!(monotonicity_margin(&f, lambda) >= -1e-12);
}

#[test]
fn rate_min_examples() {
    let k = grid(0.0, 2.0, 40);
    let sq = RateFn::sample(k.clone(), |t| t * t).unwrap();
    assert_eq!(rate_min(&sq, &sq).unwrap(), sq);
    let sq2 = RateFn::sample(k.clone(), |t| 2.0 * t * t).unwrap();
    let m = rate_min(&sq, &sq2).unwrap();
    for (a, b) in m.values().iter().zip(sq.values()) {
        assert!((a - b).abs() < 1e-14);
    }
    let cube = RateFn::sample(k.clone(), |t| t * t * t).unwrap();
    let m = rate_min(&sq, &cube).unwrap();
    let slopes = m.slopes();
    assert!(slopes.windows(2).all(|w| w[1] >= w[0]));
    for (i, v) in m.values().iter().enumerate() {
        assert!(*v <= sq.values()[i].min(cube.values()[i]) + 1e-14);
    }
}

#[test]
fn psi_examples() {
    let k = grid(0.0, 2.0, 40);
    let psi = psi_from_phi(&RateFn::sample(k.clone(), |t| 3.0 * t * t).unwrap()).unwrap();
    for (t, v) in psi.knots.iter().zip(&psi.values) {
        assert!((v - 3.0 * t).abs() < 1e-12);
    }
    assert!(psi.vanishes_at_zero);
    let psi = psi_from_phi(&RateFn::sample(k, |t| t * t * t).unwrap()).unwrap();
    assert!(psi.values.windows(2).all(|w| w[1] > w[0]));
}

/// inf over s in [0, t] of psi(t - s) + s on a grid of step h/1000 (h the
/// knot spacing), with psi the piecewise-linear interpolant of the table.
fn brute_hat(psi: &MonotoneTable, t: f64) -> f64 {
    let h = psi.knots[1] - psi.knots[0];
    let interp = |u: f64| {
        let k = &psi.knots;
        let i = k.partition_point(|&x| x <= u).clamp(1, k.len() - 1);
        let w = (u - k[i - 1]) / (k[i] - k[i - 1]);
        psi.values[i - 1] + w * (psi.values[i] - psi.values[i - 1])
    };
    let steps = (t / (h / 1000.0)).round() as usize;
    (0..=steps)
        .map(|j| {
            let s = (j as f64 * h / 1000.0).min(t);
            interp(t - s) + s
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn inf_convolution_matches_brute_force() {
    let k = grid(0.0, 2.0, 40);
    let tables = [
        (|t: f64| t) as fn(f64) -> f64,
        |t: f64| t * t,
        |t: f64| 2.0 * t,
    ];
    for psi_fn in tables {
        let psi = MonotoneTable {
            knots: k.clone(),
            values: k.iter().map(|&t| psi_fn(t)).collect(),
            vanishes_at_zero: true,
        };
        let hat = inf_convolution_hat(&psi).unwrap();
        for (t, v) in k.iter().zip(hat.values()) {
            assert!((v - brute_hat(&psi, *t)).abs() <= 1e-10, "t = {t}");
            assert!(*v <= psi_fn(*t) + 1e-15);
        }
    }
    let psi = MonotoneTable {
        knots: k.clone(),
        values: k.iter().map(|t| t * t).collect(),
        vanishes_at_zero: true,
    };
    let hat = inf_convolution_hat(&psi).unwrap();
    for (t, v) in k.iter().zip(hat.values()) {
        let exact = if *t <= 0.5 { t * t } else { t - 0.25 };
        assert!((v - exact).abs() < 1e-12);
    }
    assert!(!hat.is_strict());
}

#[test]
fn young_gap_sweep_is_nonnegative() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let f = TabulatedConvexFn::sample(grid(-3.0, 3.0, 120), |x| x.powi(4) / 4.0 + x.abs()).unwrap();
    for _ in 0..10_000 {
        let x = f.knots()[rng.random_range(0..121)];
        let y = rng.random_range(-30.0..30.0);
        let g = young_gap(&f, x, y).unwrap();
        assert!(g >= -1e-12, "{x} {y} {g}");
    }
}

#[test]
fn table_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.csv");
    let f = TabulatedConvexFn::sample_with_affine_tails(grid(-1.0, 1.0, 8), |x| x * x).unwrap();
    f.write_csv(&path).unwrap();
    assert_eq!(TabulatedConvexFn::read_csv(&path).unwrap(), f);
    let g = TabulatedConvexFn::closed(vec![0.0, 1.0, 2.0], vec![f64::INFINITY, 1.0, 3.0]).unwrap();
    g.write_csv(&path).unwrap();
    assert_eq!(TabulatedConvexFn::read_csv(&path).unwrap(), g);
}
