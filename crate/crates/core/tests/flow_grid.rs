mod common;

use common::{brute_force_flows, random_trajectories, rng, series_from_fn, unit_grid};
use proptest::prelude::*;
use termcast_core::flow_grid::{
    build_flow_series, compute_inflow_outflow, minmax_apply, minmax_fit, minmax_invert, read_ufs, split_train_test,
    write_ufs, FlowSeries,
};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn inflow_outflow_matches_enumeration(seed in any::<u64>(), rows in 1usize..=8, cols in 1usize..=8) {
        let mut r = rng(seed);
        let trajs = random_trajectories(&mut r, rows, cols, 100, 0, 3600);
        let got = compute_inflow_outflow(&trajs, &unit_grid(rows, cols), 0).unwrap();
        prop_assert_eq!(got.values, brute_force_flows(&trajs, rows, cols, |_| true));
    }

    #[test]
    fn series_bins_match_enumeration(seed in any::<u64>()) {
        let mut r = rng(seed);
        let start = 1_700_000_000i64;
        let trajs = random_trajectories(&mut r, 4, 4, 50, start - 1800, 6 * 3600);
        let series = build_flow_series(&trajs, &unit_grid(4, 4), start as u64, start as u64 + 4 * 3600, 3600).unwrap();
        prop_assert_eq!(series.len(), 4);
        for (i, t) in series.tensors.iter().enumerate() {
            let lo = start + i as i64 * 3600;
            let want = brute_force_flows(&trajs, 4, 4, |p| p.timestamp >= lo && p.timestamp < lo + 3600);
            prop_assert_eq!(&t.values, &want);
        }
    }

    #[test]
    fn in_bounds_flows_are_conserved(seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut trajs = random_trajectories(&mut r, 5, 3, 60, 0, 100);
        for t in &mut trajs {
            for p in &mut t.points {
                p.lon = p.lon.clamp(0.0, 3.0);
                p.lat = p.lat.clamp(0.0, 5.0);
            }
        }
        let f = compute_inflow_outflow(&trajs, &unit_grid(5, 3), 0).unwrap();
        let inflow: f64 = f.values[..15].iter().sum();
        let outflow: f64 = f.values[15..].iter().sum();
        prop_assert_eq!(inflow, outflow);
    }

    #[test]
    fn normalization_round_trip(values in prop::collection::vec(-1e3f64..1e3, 2..200)) {
        let n = values.len();
        let s = series_from_fn(1, 1, n / 2, 3600, 0, |t, c| values[2 * t + c]);
        let p = minmax_fit(&s).unwrap();
        let lo = s.tensors.iter().flat_map(|t| t.values.iter().copied()).fold(f64::INFINITY, f64::min);
        let hi = s.tensors.iter().flat_map(|t| t.values.iter().copied()).fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!((p.min, p.max), (lo, hi));
        for t in &s.tensors {
            let back = minmax_invert(&minmax_apply(t, &p), &p);
            for (a, b) in back.values.iter().zip(&t.values) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
            if p.max > p.min {
                prop_assert!(minmax_apply(t, &p).values.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn split_is_a_partition(len in 1usize..300, fraction in 0.01f64..0.99) {
        let s = series_from_fn(2, 1, len, 1800, 1_704_067_200, |t, c| (t * 4 + c) as f64);
        let (train, test) = split_train_test(&s, fraction).unwrap();
        prop_assert_eq!(train.len(), (len as f64 * fraction).floor() as usize);
        let all: Vec<_> = train.tensors.iter().chain(&test.tensors).map(|t| t.values.clone()).collect();
        let orig: Vec<_> = s.tensors.iter().map(|t| t.values.clone()).collect();
        prop_assert_eq!(all, orig);
        prop_assert_eq!(test.start_time, s.time_of(train.len()));
        if !train.is_empty() && !test.is_empty() {
            prop_assert_eq!(train.concat(&test).unwrap(), s);
        }
    }

    #[test]
    fn ufs_round_trip_is_byte_identical(seed in any::<u64>(), len in 0usize..30) {
        let s = series_from_fn(3, 2, len, 900, 1_704_000_000 + seed % 1000, |t, c| ((t * 31 + c * 7) % 13) as f64 * 0.5);
        let mut first = Vec::new();
        write_ufs(&s, &mut first).unwrap();
        let back: FlowSeries = read_ufs(first.as_slice()).unwrap();
        let mut second = Vec::new();
        write_ufs(&back, &mut second).unwrap();
        prop_assert_eq!(first, second);
        prop_assert_eq!(back, s);
    }
}

#[test]
fn empty_range_gives_zero_tensors() {
    let s = build_flow_series(&[], &unit_grid(2, 2), 0, 24 * 3600, 3600).unwrap();
    assert_eq!(s.len(), 24);
    assert!(s.tensors.iter().all(|t| t.values.iter().all(|&v| v == 0.0)));
    let two_days = build_flow_series(&[], &unit_grid(2, 2), 0, 48 * 3600, 3600).unwrap();
    assert_eq!((two_days.len(), two_days.intervals_per_day), (48, 24));
}
