mod common;

use proptest::prelude::*;
use stgeyer::geometry::{EventPoint, NeighborIndex, PointPattern, SpacetimeWindow};
use stgeyer::io;
use stgeyer::model::{self, GeyerModel, ScaleComponent, TrendFunction};
use stgeyer::quadrature::{self, QuadratureGrid};

fn unit_points(max: usize) -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
    prop::collection::vec((0.0..=1.0f64, 0.0..=1.0f64, 0.0..=1.0f64), 0..max)
}

fn window() -> impl Strategy<Value = SpacetimeWindow> {
    (-2.0..2.0f64, 0.2..3.0f64, -2.0..2.0f64, 0.2..3.0f64, 0.0..5.0f64, 0.2..3.0f64).prop_map(
        |(x0, lx, y0, ly, t0, lt)| SpacetimeWindow::new([x0, x0 + lx], [y0, y0 + ly], [t0, t0 + lt]).unwrap(),
    )
}

fn scales() -> impl Strategy<Value = Vec<ScaleComponent>> {
    prop::collection::vec(
        (0.1..3.0f64, 0.02..0.5f64, 0.02..0.5f64, 0u8..4).prop_map(|(gamma, r, q, s)| ScaleComponent {
            gamma,
            r,
            q,
            s: s as f64,
        }),
        1..4,
    )
}

fn place(w: &SpacetimeWindow, u: &[(f64, f64, f64)]) -> Vec<EventPoint> {
    u.iter().map(|&(a, b, c)| w.from_unit(a, b, c)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn papangelou_is_density_ratio(w in window(), sc in scales(), u in unit_points(30), v in (0.0..=1.0f64, 0.0..=1.0f64, 0.0..=1.0f64)) {
        let m = GeyerModel::new(w, TrendFunction::constant(50.0), sc).unwrap();
        let x = PointPattern::new(w, place(&w, &u)).unwrap();
        let p = w.from_unit(v.0, v.1, v.2);
        let with = x.with_point(p).unwrap();
        let ratio = model::log_density_unnormalized(&m, &with).unwrap() - model::log_density_unnormalized(&m, &x).unwrap();
        let lp = model::log_papangelou(&m, &x, &p).unwrap();
        prop_assert!((ratio - lp).abs() <= 1e-9 * (1.0 + lp.abs()), "{ratio} vs {lp}");
    }

    #[test]
    fn log_density_ignores_order(sc in scales(), u in unit_points(30), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let w = SpacetimeWindow::unit();
        let m = GeyerModel::new(w, TrendFunction::constant(20.0), sc).unwrap();
        let pts = place(&w, &u);
        let mut shuffled = pts.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let a = model::log_density_unnormalized(&m, &PointPattern::new(w, pts).unwrap()).unwrap();
        let b = model::log_density_unnormalized(&m, &PointPattern::new(w, shuffled).unwrap()).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
    }

    #[test]
    fn statistics_are_bounded(sc in scales(), u in unit_points(40), v in (0.0..=1.0f64, 0.0..=1.0f64, 0.0..=1.0f64)) {
        let w = SpacetimeWindow::unit();
        let m = GeyerModel::new(w, TrendFunction::constant(20.0), sc).unwrap();
        let x = PointPattern::new(w, place(&w, &u)).unwrap();
        let p = w.from_unit(v.0, v.1, v.2);
        let s = model::sufficient_statistics(&m, &x, &p).unwrap();
        for (j, c) in m.scales.iter().enumerate() {
            let nb = common::brute_count(&[x.points(), &[p]].concat(), x.len(), c.r, c.q) as f64;
            prop_assert!(s[j] >= 0.0);
            prop_assert!(s[j] <= c.s + nb * c.s.min(1.0) + 1e-12);
            prop_assert!(s[j] <= (1.0 + c.s) * nb + 1e-12);
        }
    }

    #[test]
    fn index_count_matches_brute_force(u in unit_points(60), r in 0.01..0.6f64, q in 0.01..0.6f64, k in any::<prop::sample::Index>(), v in (0.0..=1.0f64, 0.0..=1.0f64, 0.0..=1.0f64)) {
        let w = SpacetimeWindow::unit();
        let mut pts = place(&w, &u);
        // Duplicate one entry so coincident points are exercised.
        if !pts.is_empty() {
            let d = pts[k.index(pts.len())];
            pts.push(d);
        }
        let x = PointPattern::new(w, pts.clone()).unwrap();
        let idx = NeighborIndex::new(&x, r, q).unwrap();
        let mut centres = vec![w.from_unit(v.0, v.1, v.2)];
        centres.extend(pts.iter().copied());
        for c in &centres {
            let brute = pts.iter().filter(|a| common::within(a, c, r, q)).count();
            prop_assert_eq!(idx.count(c, r, q, false).unwrap(), brute);
            let excl = pts.iter().filter(|a| *a != c && common::within(a, c, r, q)).count();
            prop_assert_eq!(idx.count(c, r, q, true).unwrap(), excl);
        }
    }

    #[test]
    fn counting_weights_conserve_volume(w in window(), u in unit_points(50), nx in 1usize..6, ny in 1usize..6, nt in 1usize..6, d in 1usize..3) {
        let x = PointPattern::new(w, place(&w, &u)).unwrap();
        let grid = QuadratureGrid::new(nx, ny, nt, d).unwrap();
        let s = quadrature::counting_weights(&x, grid, &TrendFunction::constant(1.0)).unwrap();
        prop_assert_eq!(s.n_dummy(), nx * ny * nt * d);
        prop_assert!((s.total_weight() - w.volume()).abs() <= 1e-10 * w.volume());
        prop_assert!(s.weights.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn pattern_csv_round_trips(w in window(), u in unit_points(40)) {
        let x = PointPattern::new(w, place(&w, &u)).unwrap();
        let text = io::pattern_csv_string(&x);
        let back = io::parse_pattern_csv(&text, None).unwrap();
        prop_assert_eq!(back, x);
    }
}
