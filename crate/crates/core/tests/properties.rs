use proptest::prelude::*;
use tsgan_core::data::{filter_flat_windows, make_windows, ChannelSeries, FLOW, PRECIPITATION};
use tsgan_core::metrics::{histogram_estimate, joint_range, jsd_values, kld, quantile};

fn series(rain: Vec<f64>) -> ChannelSeries {
    let flow = rain.iter().map(|r| 1.0 + r).collect();
    ChannelSeries {
        names: vec![PRECIPITATION.into(), FLOW.into()],
        log1p: vec![false, false],
        values: vec![rain, flow],
    }
}

fn sample() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0f64..50.0, 1..200)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn jsd_is_symmetric_and_bounded(a in sample(), b in sample(), bins in 2usize..80) {
        let ab = jsd_values(&a, &b, bins).unwrap();
        let ba = jsd_values(&b, &a, bins).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(ab >= 0.0 && ab <= 2f64.ln() + 1e-8);
    }

    #[test]
    fn kld_is_non_negative(a in sample(), b in sample()) {
        let range = joint_range(&a, &b);
        let p = histogram_estimate(&a, 50, range).unwrap();
        let q = histogram_estimate(&b, 50, range).unwrap();
        prop_assert!(kld(&p, &q).unwrap() >= 0.0);
        prop_assert_eq!(kld(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn window_count_formula(n in 24usize..400, stride in 1usize..30) {
        let s = series((0..n).map(|i| (i % 7) as f64).collect());
        let w = make_windows(&s, 24, stride).unwrap();
        prop_assert_eq!(w.count(), (n - 24) / stride + 1);
        prop_assert_eq!(w.window(w.count() - 1)[0], s.values[0][(w.count() - 1) * stride]);
    }

    #[test]
    fn flat_filter_is_idempotent(rain in prop::collection::vec(prop_oneof![Just(0.0f64), 0.0f64..5.0], 24..120)) {
        let w = make_windows(&series(rain), 24, 1).unwrap();
        let once = filter_flat_windows(&w).unwrap();
        let twice = filter_flat_windows(&once).unwrap();
        prop_assert_eq!(once.count(), twice.count());
        prop_assert!(once.data().bit_eq(twice.data()));
    }

    #[test]
    fn quantile_stays_within_sample(v in sample(), q in 0.0f64..=1.0) {
        let x = quantile(&v, q).unwrap();
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(x >= lo && x <= hi);
    }
}
