use csdp_core::dtw::{
    dtw, dtw_windowed, expand_window, fastdtw, point_dist, reduce_by_half, Sequence, WarpPath, WarpWindow,
};
use proptest::prelude::*;

/// Minimum over every monotone path, enumerated one by one.
fn brute_force(x: &Sequence, y: &Sequence, allowed: &dyn Fn(usize, usize) -> bool) -> f64 {
    fn go(x: &Sequence, y: &Sequence, i: usize, j: usize, acc: f64, allowed: &dyn Fn(usize, usize) -> bool, best: &mut f64) {
        if !allowed(i, j) {
            return;
        }
        let acc = acc + point_dist(x.point(i), y.point(j)).unwrap();
        if i + 1 == x.len() && j + 1 == y.len() {
            *best = best.min(acc);
            return;
        }
        if i + 1 < x.len() && j + 1 < y.len() {
            go(x, y, i + 1, j + 1, acc, allowed, best);
        }
        if i + 1 < x.len() {
            go(x, y, i + 1, j, acc, allowed, best);
        }
        if j + 1 < y.len() {
            go(x, y, i, j + 1, acc, allowed, best);
        }
    }
    let mut best = f64::INFINITY;
    go(x, y, 0, 0, 0.0, allowed, &mut best);
    best
}

fn path_cost(x: &Sequence, y: &Sequence, p: &WarpPath) -> f64 {
    p.cells().iter().map(|&(i, j)| point_dist(x.point(i), y.point(j)).unwrap()).sum()
}

fn seq_strategy(max_len: usize, dim: usize) -> impl Strategy<Value = Sequence> {
    (1..=max_len).prop_flat_map(move |len| {
        prop::collection::vec(-5.0f64..5.0, len * dim).prop_map(move |v| Sequence::new(v, len, dim).unwrap())
    })
}

#[test]
fn brute_force_worked_examples() {
    let x = Sequence::univariate(&[1.0, 2.0, 3.0]).unwrap();
    let y = Sequence::univariate(&[1.0, 2.0, 2.0, 3.0]).unwrap();
    assert_eq!(brute_force(&x, &y, &|_, _| true), 0.0);
    let x = Sequence::univariate(&[0.0; 3]).unwrap();
    let y = Sequence::univariate(&[1.0; 3]).unwrap();
    assert_eq!(brute_force(&x, &y, &|_, _| true), 3.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn dtw_matches_enumeration(x in seq_strategy(7, 2), y in seq_strategy(7, 2)) {
        let r = dtw(&x, &y).unwrap();
        prop_assert!((r.cost - brute_force(&x, &y, &|_, _| true)).abs() <= 1e-12);
        prop_assert!(r.path.is_valid_for(x.len(), y.len()));
        prop_assert!((path_cost(&x, &y, &r.path) - r.cost).abs() <= 1e-9);
    }

    #[test]
    fn dtw_is_symmetric_and_nonnegative(x in seq_strategy(20, 3), y in seq_strategy(20, 3)) {
        let a = dtw(&x, &y).unwrap().cost;
        let b = dtw(&y, &x).unwrap().cost;
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        prop_assert_eq!(dtw(&x, &x).unwrap().cost, 0.0);
    }

    #[test]
    fn banded_dtw_matches_enumeration(x in seq_strategy(7, 1), y in seq_strategy(7, 1), band in 0usize..4) {
        let w = WarpWindow::sakoe_chiba(x.len(), y.len(), band).unwrap();
        let r = dtw_windowed(&x, &y, &w).unwrap();
        let oracle = brute_force(&x, &y, &|i, j| w.contains(i, j));
        prop_assert!((r.cost - oracle).abs() <= 1e-12);
        prop_assert!(r.cost >= dtw(&x, &y).unwrap().cost - 1e-12);
        prop_assert!(r.path.cells().iter().all(|&(i, j)| w.contains(i, j)));
    }

    #[test]
    fn full_window_equals_dtw(x in seq_strategy(15, 2), y in seq_strategy(15, 2)) {
        let w = WarpWindow::full(x.len(), y.len());
        prop_assert_eq!(dtw_windowed(&x, &y, &w).unwrap(), dtw(&x, &y).unwrap());
    }

    #[test]
    fn fastdtw_never_undercuts_dtw(x in seq_strategy(64, 1), y in seq_strategy(64, 1), radius in 0usize..3) {
        let f = fastdtw(&x, &y, radius).unwrap();
        let d = dtw(&x, &y).unwrap();
        prop_assert!(f.cost >= d.cost - 1e-9);
        prop_assert!(f.path.is_valid_for(x.len(), y.len()));
        prop_assert!((path_cost(&x, &y, &f.path) - f.cost).abs() <= 1e-9);
        if x.len().min(y.len()) <= radius + 2 {
            prop_assert_eq!(f, d);
        }
    }

    #[test]
    fn fastdtw_is_symmetric(x in seq_strategy(40, 2), y in seq_strategy(40, 2)) {
        let a = fastdtw(&x, &y, 1).unwrap();
        let b = fastdtw(&y, &x, 1).unwrap();
        prop_assert!((a.cost - b.cost).abs() <= 1e-9 * a.cost.max(1.0));
        prop_assert_eq!(a.path, b.path.transposed());
    }

    #[test]
    fn reduce_halves_length(x in seq_strategy(30, 2)) {
        prop_assume!(x.len() >= 2);
        let r = reduce_by_half(&x);
        prop_assert_eq!(r.len(), x.len().div_ceil(2));
        prop_assert_eq!(r.dim(), x.dim());
    }

    #[test]
    fn expanded_window_covers_projection(
        x in seq_strategy(20, 1),
        y in seq_strategy(20, 1),
        radius in 0usize..3,
    ) {
        prop_assume!(x.len() >= 2 && y.len() >= 2);
        let low = dtw(&reduce_by_half(&x), &reduce_by_half(&y)).unwrap().path;
        let w = expand_window(&low, x.len(), y.len(), radius);
        for &(i, j) in low.cells() {
            for (r, c) in [(2 * i, 2 * j), (2 * i + 1, 2 * j + 1)] {
                if r < x.len() && c < y.len() {
                    prop_assert!(w.contains(r, c));
                }
            }
        }
        prop_assert!(dtw_windowed(&x, &y, &w).is_ok());
    }
}
