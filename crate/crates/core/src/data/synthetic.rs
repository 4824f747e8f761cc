//! Seeded synthetic datasets for tests, demos and the acceptance suite.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Dataset, Split, TimeSeries};

#[derive(Debug, Clone)]
pub struct SinusoidSpec {
    /// Cycles per series for each class; the class count is its length.
    pub frequencies: Vec<f64>,
    pub channels: usize,
    pub length: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub noise_std: f64,
}

impl Default for SinusoidSpec {
    fn default() -> Self {
        Self {
            frequencies: vec![2.0, 5.0, 9.0],
            channels: 2,
            length: 128,
            train_per_class: 20,
            test_per_class: 20,
            noise_std: 0.1,
        }
    }
}

/// Class `k` is a sinusoid at `frequencies[k]` cycles per series with a
/// random phase and amplitude jitter per series; each channel is shifted by a
/// quarter period from the previous one. Series are interleaved by class and
/// the train block precedes the test block.
pub fn sinusoids(spec: &SinusoidSpec, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.noise_std).expect("noise std is finite");
    let classes = spec.frequencies.len();
    let mut series = Vec::new();
    let mut labels = Vec::new();
    let mut split = Vec::new();
    for (tag, per_class) in [(Split::Train, spec.train_per_class), (Split::Test, spec.test_per_class)] {
        for _ in 0..per_class {
            for (k, &f) in spec.frequencies.iter().enumerate() {
                let phase = rng.random_range(0.0..2.0 * PI);
                let amp = rng.random_range(0.8..1.2);
                let chans = (0..spec.channels)
                    .map(|c| {
                        (0..spec.length)
                            .map(|t| {
                                let x = 2.0 * PI * f * t as f64 / spec.length as f64 + phase + c as f64 * PI / 2.0;
                                amp * x.sin() + noise.sample(&mut rng)
                            })
                            .collect()
                    })
                    .collect();
                let id = series.len();
                series.push(TimeSeries::from_channels(chans, id).expect("finite synthetic values"));
                labels.push(Some(k));
                split.push(tag);
            }
        }
    }
    Dataset::new(series, labels, classes, split).expect("well-formed synthetic dataset")
}

/// The default 3-class, 2-channel, length-128 set with 60 train and 60 test series.
pub fn three_class(seed: u64) -> Dataset {
    sinusoids(&SinusoidSpec::default(), seed)
}

/// Twelve separable training series (3 classes × 4), all labeled.
pub fn toy12(seed: u64) -> Dataset {
    sinusoids(
        &SinusoidSpec {
            frequencies: vec![1.0, 3.0, 6.0],
            channels: 2,
            length: 64,
            train_per_class: 4,
            test_per_class: 0,
            noise_std: 0.1,
        },
        seed,
    )
}

/// Gaussian random walks with no class structure; labels cycle through
/// `classes`.
pub fn random_walks(n: usize, channels: usize, length: usize, classes: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step = Normal::new(0.0, 1.0).expect("unit normal");
    let series = (0..n)
        .map(|i| {
            let chans = (0..channels)
                .map(|_| {
                    let mut acc = 0.0;
                    (0..length)
                        .map(|_| {
                            acc += step.sample(&mut rng);
                            acc
                        })
                        .collect()
                })
                .collect();
            TimeSeries::from_channels(chans, i).expect("finite walk")
        })
        .collect();
    let labels = (0..n).map(|i| Some(i % classes)).collect();
    Dataset::new(series, labels, classes, vec![Split::Train; n]).expect("well-formed walk dataset")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_class_shape() {
        let d = three_class(0);
        assert_eq!(d.len(), 120);
        assert_eq!(d.channels(), 2);
        assert_eq!(d.max_len(), 128);
        assert_eq!(d.train_indices().len(), 60);
        assert_eq!(d.classes, 3);
        for c in 0..3 {
            assert_eq!(d.train_indices().iter().filter(|&&i| d.labels[i] == Some(c)).count(), 20);
        }
    }

    #[test]
    fn seeded() {
        assert_eq!(three_class(4), three_class(4));
        assert_ne!(three_class(4), three_class(5));
    }

    #[test]
    fn toy_is_all_train() {
        let d = toy12(0);
        assert_eq!(d.len(), 12);
        assert!(d.label_mask.iter().all(|&m| m));
    }
}
