use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, Split};

/// Partition of the train split into labeled and unlabeled series.
/// Both index lists are sorted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemiSplit {
    pub labeled_indices: Vec<usize>,
    pub unlabeled_indices: Vec<usize>,
    pub fraction: f64,
}

/// Per class, keeps `max(1, round(fraction * count))` labeled train series,
/// chosen by a seeded shuffle.
pub fn split_semisupervised(d: &Dataset, fraction: f64, seed: u64) -> Result<SemiSplit, DataError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DataError::Invalid(format!("label fraction {fraction} outside (0, 1]")));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); d.classes];
    for i in d.indices_of(Split::Train) {
        if let Some(l) = d.labels[i] {
            by_class[l].push(i);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labeled = Vec::new();
    for (c, mut members) in by_class.into_iter().enumerate() {
        if members.is_empty() {
            return Err(DataError::ClassAbsent(c));
        }
        let keep = ((fraction * members.len() as f64).round() as usize).clamp(1, members.len());
        members.shuffle(&mut rng);
        labeled.extend_from_slice(&members[..keep]);
    }
    labeled.sort_unstable();
    let unlabeled = d
        .indices_of(Split::Train)
        .into_iter()
        .filter(|i| labeled.binary_search(i).is_err())
        .collect();
    Ok(SemiSplit {
        labeled_indices: labeled,
        unlabeled_indices: unlabeled,
        fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TimeSeries;

    fn balanced(per_class: usize, classes: usize) -> Dataset {
        let n = per_class * classes;
        let series = (0..n)
            .map(|i| TimeSeries::from_channels(vec![vec![i as f64, 0.0]], i).unwrap())
            .collect();
        let labels = (0..n).map(|i| Some(i % classes)).collect();
        Dataset::new(series, labels, classes, vec![Split::Train; n]).unwrap()
    }

    fn per_class(d: &Dataset, s: &SemiSplit) -> Vec<usize> {
        let mut counts = vec![0; d.classes];
        for &i in &s.labeled_indices {
            counts[d.labels[i].unwrap()] += 1;
        }
        counts
    }

    #[test]
    fn full_fraction_labels_everything() {
        let d = balanced(4, 3);
        let s = split_semisupervised(&d, 1.0, 0).unwrap();
        assert_eq!(s.labeled_indices, (0..12).collect::<Vec<_>>());
        assert!(s.unlabeled_indices.is_empty());
    }

    #[test]
    fn ten_percent_of_twenty() {
        let d = balanced(20, 3);
        let s = split_semisupervised(&d, 0.10, 1).unwrap();
        assert_eq!(per_class(&d, &s), vec![2, 2, 2]);
        assert_eq!(s.unlabeled_indices.len(), 54);
    }

    #[test]
    fn floor_of_one_per_class() {
        let d = balanced(5, 3);
        let s = split_semisupervised(&d, 0.05, 2).unwrap();
        assert_eq!(per_class(&d, &s), vec![1, 1, 1]);
    }

    #[test]
    fn absent_class_is_an_error() {
        let mut d = balanced(3, 2);
        d.classes = 3;
        d.class_names.push("2".into());
        assert!(matches!(split_semisupervised(&d, 0.5, 0), Err(DataError::ClassAbsent(2))));
    }

    #[test]
    fn test_series_are_never_labeled() {
        let mut d = balanced(4, 2);
        for i in 4..8 {
            d.split[i] = Split::Test;
            d.label_mask[i] = false;
        }
        let s = split_semisupervised(&d, 1.0, 0).unwrap();
        assert!(s.labeled_indices.iter().all(|&i| i < 4));
        d.apply_split(&s);
        assert_eq!(d.label_mask, vec![true, true, true, true, false, false, false, false]);
    }

    #[test]
    fn rejects_bad_fraction() {
        let d = balanced(2, 2);
        assert!(split_semisupervised(&d, 0.0, 0).is_err());
        assert!(split_semisupervised(&d, 1.5, 0).is_err());
    }
}
