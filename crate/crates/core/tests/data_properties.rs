use csdp_core::data::{
    parse_long_csv_str, split_semisupervised, to_long_csv_string, zscore_normalize, Dataset, Split, TimeSeries,
};
use proptest::prelude::*;

fn dataset_strategy() -> impl Strategy<Value = Dataset> {
    (2usize..6, 1usize..4, 1usize..9, 2usize..4).prop_flat_map(|(n, c, t, classes)| {
        (
            prop::collection::vec(prop::collection::vec(-1e6f64..1e6, c * t), n),
            prop::collection::vec(prop::option::of(0..classes), n),
            prop::collection::vec(any::<bool>(), n),
        )
            .prop_map(move |(values, labels, is_test)| {
                let series = values
                    .into_iter()
                    .enumerate()
                    .map(|(i, v)| TimeSeries::from_channels(v.chunks(t).map(<[f64]>::to_vec).collect(), i).unwrap())
                    .collect();
                let split = is_test.iter().map(|&b| if b { Split::Test } else { Split::Train }).collect();
                Dataset::new(series, labels, classes, split).unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn long_csv_round_trips(d in dataset_strategy()) {
        let back = parse_long_csv_str(&to_long_csv_string(&d)).unwrap();
        prop_assert_eq!(&back.series, &d.series);
        prop_assert_eq!(&back.labels, &d.labels);
        prop_assert_eq!(&back.split, &d.split);
        prop_assert_eq!(&back.label_mask, &d.label_mask);
    }

    #[test]
    fn zscore_is_idempotent(d in dataset_strategy()) {
        let once = zscore_normalize(&d);
        let twice = zscore_normalize(&once);
        for (a, b) in once.series.iter().zip(&twice.series) {
            for (x, y) in a.values.data().iter().zip(b.values.data()) {
                prop_assert!((x - y).abs() <= 1e-10, "{} vs {}", x, y);
            }
        }
    }

    #[test]
    fn split_keeps_a_share_of_every_class(
        per_class in prop::collection::vec(1usize..30, 2..5),
        fraction in 0.01f64..=1.0,
        seed in any::<u64>(),
    ) {
        let mut series = Vec::new();
        let mut labels = Vec::new();
        for (c, &count) in per_class.iter().enumerate() {
            for _ in 0..count {
                series.push(TimeSeries::from_channels(vec![vec![0.0; 3]], series.len()).unwrap());
                labels.push(Some(c));
            }
        }
        let n = series.len();
        let d = Dataset::new(series, labels, per_class.len(), vec![Split::Train; n]).unwrap();
        let s = split_semisupervised(&d, fraction, seed).unwrap();
        for (c, &count) in per_class.iter().enumerate() {
            let kept = s.labeled_indices.iter().filter(|&&i| d.labels[i] == Some(c)).count();
            let expect = ((fraction * count as f64).round() as usize).clamp(1, count);
            prop_assert_eq!(kept, expect);
        }
        prop_assert_eq!(s.labeled_indices.len() + s.unlabeled_indices.len(), n);
        prop_assert!(s.labeled_indices.iter().all(|i| s.unlabeled_indices.binary_search(i).is_err()));
    }
}
