//! In-memory dataset model, loaders, normalization and semi-supervised splits.

mod long_csv;
mod split;
pub mod synthetic;
mod ts;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::Tensor;

pub use long_csv::{parse_long_csv, parse_long_csv_str, to_long_csv_string, write_long_csv};
pub use split::{split_semisupervised, SemiSplit};
pub use ts::{parse_ts, parse_ts_str};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("missing cell (series_id {series_id}, channel {channel}, time_index {time_index})")]
    MissingCell {
        series_id: usize,
        channel: usize,
        time_index: usize,
    },
    #[error("duplicate cell (series_id {series_id}, channel {channel}, time_index {time_index})")]
    DuplicateCell {
        series_id: usize,
        channel: usize,
        time_index: usize,
    },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("class {0} has no labeled series in the train split")]
    ClassAbsent(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// One multivariate sample, stored as a `channels × length` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub values: Tensor,
    pub series_id: usize,
}

impl TimeSeries {
    pub fn new(values: Tensor, series_id: usize) -> Result<Self, DataError> {
        let (c, t) = values
            .dims2()
            .ok_or_else(|| DataError::Invalid(format!("series {series_id}: values must be 2-D")))?;
        if c == 0 || t == 0 {
            return Err(DataError::Invalid(format!("series {series_id}: empty ({c}×{t})")));
        }
        if !values.all_finite() {
            return Err(DataError::Invalid(format!("series {series_id}: non-finite value")));
        }
        Ok(Self { values, series_id })
    }

    pub fn from_channels(channels: Vec<Vec<f64>>, series_id: usize) -> Result<Self, DataError> {
        let values = Tensor::from_rows(&channels)
            .map_err(|_| DataError::Invalid(format!("series {series_id}: channels differ in length")))?;
        Self::new(values, series_id)
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn len(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        self.values.row(c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub series: Vec<TimeSeries>,
    /// Ground-truth label per series, when known.
    pub labels: Vec<Option<usize>>,
    pub classes: usize,
    /// Original class tokens, indexed by class id.
    pub class_names: Vec<String>,
    pub split: Vec<Split>,
    /// True where the label may be used for training.
    pub label_mask: Vec<bool>,
}

impl Dataset {
    /// Builds a dataset whose label mask exposes every labeled train series.
    pub fn new(
        series: Vec<TimeSeries>,
        labels: Vec<Option<usize>>,
        classes: usize,
        split: Vec<Split>,
    ) -> Result<Self, DataError> {
        let label_mask = labels
            .iter()
            .zip(&split)
            .map(|(l, s)| l.is_some() && *s == Split::Train)
            .collect();
        let class_names = (0..classes).map(|c| c.to_string()).collect();
        let d = Self {
            series,
            labels,
            classes,
            class_names,
            split,
            label_mask,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let n = self.series.len();
        if n < 2 {
            return Err(DataError::Invalid(format!("need at least 2 series, got {n}")));
        }
        if self.classes < 2 {
            return Err(DataError::Invalid(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.labels.len() != n || self.split.len() != n || self.label_mask.len() != n {
            return Err(DataError::Invalid("per-series vectors differ in length".into()));
        }
        if self.class_names.len() != self.classes {
            return Err(DataError::Invalid("class name count differs from class count".into()));
        }
        let c = self.series[0].channels();
        for s in &self.series {
            if s.channels() != c {
                return Err(DataError::Invalid(format!(
                    "series {} has {} channels, expected {c}",
                    s.series_id,
                    s.channels()
                )));
            }
        }
        for (i, l) in self.labels.iter().enumerate() {
            if let Some(l) = l {
                if *l >= self.classes {
                    return Err(DataError::Invalid(format!("label {l} of series {i} outside [0, {})", self.classes)));
                }
            } else if self.label_mask[i] {
                return Err(DataError::Invalid(format!("series {i} is marked visible but has no label")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.series[0].channels()
    }

    pub fn max_len(&self) -> usize {
        self.series.iter().map(TimeSeries::len).max().unwrap_or(0)
    }

    pub fn indices_of(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == split).collect()
    }

    pub fn train_indices(&self) -> Vec<usize> {
        self.indices_of(Split::Train)
    }

    pub fn test_indices(&self) -> Vec<usize> {
        self.indices_of(Split::Test)
    }

    /// Train series whose label is visible to training.
    pub fn visible_label_indices(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.split[i] == Split::Train && self.label_mask[i])
            .collect()
    }

    /// Appends `other` (e.g. a test file) with series ids renumbered after ours.
    /// Class names are unified by token.
    pub fn concat(mut self, other: Dataset) -> Result<Dataset, DataError> {
        let mut remap = Vec::with_capacity(other.classes);
        for name in &other.class_names {
            let id = match self.class_names.iter().position(|n| n == name) {
                Some(id) => id,
                None => {
                    self.class_names.push(name.clone());
                    self.class_names.len() - 1
                }
            };
            remap.push(id);
        }
        self.classes = self.class_names.len();
        let offset = self.series.iter().map(|s| s.series_id + 1).max().unwrap_or(0);
        for (i, mut s) in other.series.into_iter().enumerate() {
            s.series_id += offset;
            self.series.push(s);
            self.labels.push(other.labels[i].map(|l| remap[l]));
            self.split.push(other.split[i]);
            self.label_mask.push(other.label_mask[i]);
        }
        self.validate()?;
        Ok(self)
    }

    /// Reorders series by `perm` (new position `k` holds old series `perm[k]`).
    pub fn permuted(&self, perm: &[usize]) -> Dataset {
        Dataset {
            series: perm.iter().map(|&i| self.series[i].clone()).collect(),
            labels: perm.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            class_names: self.class_names.clone(),
            split: perm.iter().map(|&i| self.split[i]).collect(),
            label_mask: perm.iter().map(|&i| self.label_mask[i]).collect(),
        }
    }

    pub fn apply_split(&mut self, s: &SemiSplit) {
        for (i, m) in self.label_mask.iter_mut().enumerate() {
            *m = self.split[i] == Split::Train && self.labels[i].is_some() && s.labeled_indices.binary_search(&i).is_ok();
        }
    }
}

/// Per series and channel: subtract the mean and divide by the population
/// standard deviation. Channels with std below `1e-8` become zeros.
pub fn zscore_normalize(d: &Dataset) -> Dataset {
    let mut out = d.clone();
    for s in &mut out.series {
        let (c, t) = s.values.dims2().expect("2-D series");
        let data = s.values.data_mut();
        for ch in 0..c {
            let row = &mut data[ch * t..(ch + 1) * t];
            let mean = row.iter().sum::<f64>() / t as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t as f64;
            let std = var.sqrt();
            if std < 1e-8 {
                row.fill(0.0);
            } else {
                for v in row.iter_mut() {
                    *v = (*v - mean) / std;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_channel(values: &[f64]) -> Dataset {
        let a = TimeSeries::from_channels(vec![values.to_vec()], 0).unwrap();
        let b = TimeSeries::from_channels(vec![values.to_vec()], 1).unwrap();
        Dataset::new(vec![a, b], vec![Some(0), Some(1)], 2, vec![Split::Train; 2]).unwrap()
    }

    #[test]
    fn zscore_of_one_two_three() {
        let d = zscore_normalize(&one_channel(&[1.0, 2.0, 3.0]));
        let expect = [-1.224744871391589, 0.0, 1.224744871391589];
        for (v, e) in d.series[0].channel(0).iter().zip(expect) {
            assert!((v - e).abs() < 1e-12);
        }
    }

    #[test]
    fn zscore_constant_channel_is_zero() {
        let d = zscore_normalize(&one_channel(&[5.0, 5.0, 5.0]));
        assert_eq!(d.series[0].channel(0), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn zscore_is_idempotent() {
        let once = zscore_normalize(&one_channel(&[0.3, -1.7, 2.2, 9.0, 0.1]));
        let twice = zscore_normalize(&once);
        for (a, b) in once.series[0].channel(0).iter().zip(twice.series[0].channel(0)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_finite_and_ragged() {
        assert!(TimeSeries::from_channels(vec![vec![1.0, f64::NAN]], 0).is_err());
        assert!(TimeSeries::from_channels(vec![vec![1.0, 2.0], vec![1.0]], 0).is_err());
    }

    #[test]
    fn rejects_label_out_of_range() {
        let a = TimeSeries::from_channels(vec![vec![1.0]], 0).unwrap();
        let b = TimeSeries::from_channels(vec![vec![1.0]], 1).unwrap();
        assert!(Dataset::new(vec![a, b], vec![Some(0), Some(2)], 2, vec![Split::Train; 2]).is_err());
    }

    #[test]
    fn concat_unifies_class_names() {
        let mut train = one_channel(&[1.0, 2.0]);
        train.class_names = vec!["a".into(), "b".into()];
        let mut test = one_channel(&[3.0, 4.0]);
        test.class_names = vec!["b".into(), "a".into()];
        test.split = vec![Split::Test; 2];
        test.label_mask = vec![false; 2];
        let all = train.concat(test).unwrap();
        assert_eq!(all.len(), 4);
        assert_eq!(all.labels, vec![Some(0), Some(1), Some(1), Some(0)]);
        assert_eq!(all.series[3].series_id, 3);
    }
}
