//! Long-form CSV: one row per `(series_id, channel, time_index)` cell.
//!
//! Header: `series_id,channel,time_index,value,label,split`. `label` is the
//! integer class id, or empty for an unlabeled series. Every series must
//! provide a dense `channels × length` grid.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use super::{DataError, Dataset, Split, TimeSeries};
use crate::numerics::Tensor;

const HEADER: [&str; 6] = ["series_id", "channel", "time_index", "value", "label", "split"];

#[derive(Debug, Deserialize)]
struct Row {
    series_id: usize,
    channel: usize,
    time_index: usize,
    value: f64,
    label: String,
    split: String,
}

#[derive(Default)]
struct SeriesAcc {
    cells: BTreeMap<(usize, usize), f64>,
    label: Option<Option<usize>>,
    split: Option<Split>,
}

pub fn parse_long_csv(path: &Path) -> Result<Dataset, DataError> {
    parse_long_csv_str(&fs::read_to_string(path)?)
}

pub fn parse_long_csv_str(text: &str) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = rdr.headers()?.clone();
    if header.iter().map(str::trim).ne(HEADER.iter().copied()) {
        return Err(DataError::Parse {
            line: 1,
            msg: format!("expected header {:?}", HEADER.join(",")),
        });
    }

    let mut acc: BTreeMap<usize, SeriesAcc> = BTreeMap::new();
    for (i, rec) in rdr.deserialize::<Row>().enumerate() {
        let line = i + 2;
        let row = rec?;
        if !row.value.is_finite() {
            return Err(DataError::Parse {
                line,
                msg: "non-finite value".into(),
            });
        }
        let label = match row.label.trim() {
            "" => None,
            tok => Some(tok.parse::<usize>().map_err(|_| DataError::Parse {
                line,
                msg: format!("label {tok:?} is not a class id"),
            })?),
        };
        let split: Split = row.split.parse().map_err(|msg| DataError::Parse { line, msg })?;
        let entry = acc.entry(row.series_id).or_default();
        if *entry.label.get_or_insert(label) != label || *entry.split.get_or_insert(split) != split {
            return Err(DataError::Parse {
                line,
                msg: format!("series {} changes label or split", row.series_id),
            });
        }
        if entry.cells.insert((row.channel, row.time_index), row.value).is_some() {
            return Err(DataError::DuplicateCell {
                series_id: row.series_id,
                channel: row.channel,
                time_index: row.time_index,
            });
        }
    }

    let channels = acc
        .values()
        .flat_map(|s| s.cells.keys().map(|&(c, _)| c + 1))
        .max()
        .ok_or_else(|| DataError::Invalid("no rows".into()))?;
    let mut series = Vec::with_capacity(acc.len());
    let mut labels = Vec::with_capacity(acc.len());
    let mut splits = Vec::with_capacity(acc.len());
    for (id, s) in acc {
        let len = s.cells.keys().map(|&(_, t)| t + 1).max().unwrap_or(0);
        let mut data = Vec::with_capacity(channels * len);
        for c in 0..channels {
            for t in 0..len {
                let v = s.cells.get(&(c, t)).ok_or(DataError::MissingCell {
                    series_id: id,
                    channel: c,
                    time_index: t,
                })?;
                data.push(*v);
            }
        }
        let values = Tensor::new(data, vec![channels, len]).map_err(|e| DataError::Invalid(e.to_string()))?;
        series.push(TimeSeries::new(values, id)?);
        labels.push(s.label.flatten());
        splits.push(s.split.unwrap_or(Split::Train));
    }
    let classes = labels.iter().flatten().map(|l| l + 1).max().unwrap_or(0).max(2);
    Dataset::new(series, labels, classes, splits)
}

pub fn to_long_csv_string(d: &Dataset) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HEADER).expect("in-memory write");
    for (i, s) in d.series.iter().enumerate() {
        let label = d.labels[i].map(|l| l.to_string()).unwrap_or_default();
        let id = s.series_id.to_string();
        for c in 0..s.channels() {
            let ch = c.to_string();
            for (t, v) in s.channel(c).iter().enumerate() {
                w.write_record([
                    id.as_str(),
                    ch.as_str(),
                    &t.to_string(),
                    &v.to_string(),
                    &label,
                    d.split[i].as_str(),
                ])
                .expect("in-memory write");
            }
        }
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

pub fn write_long_csv(d: &Dataset, path: &Path) -> Result<(), DataError> {
    fs::write(path, to_long_csv_string(d))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEAD: &str = "series_id,channel,time_index,value,label,split\n";

    #[test]
    fn single_series() {
        let text = format!("{HEAD}0,0,0,1,0,train\n0,0,1,2,0,train\n0,0,2,3,0,train\n1,0,0,5,1,test\n");
        let d = parse_long_csv_str(&text).unwrap();
        assert_eq!(d.series[0].values.shape(), &[1, 3]);
        assert_eq!(d.series[0].channel(0), &[1.0, 2.0, 3.0]);
        assert_eq!(d.split, vec![Split::Train, Split::Test]);
        assert_eq!(d.label_mask, vec![true, false]);
    }

    #[test]
    fn variable_lengths_are_accepted() {
        let mut text = HEAD.to_string();
        for t in 0..3 {
            text += &format!("0,0,{t},{t},0,train\n");
        }
        for t in 0..5 {
            text += &format!("1,0,{t},{t},,train\n");
        }
        let d = parse_long_csv_str(&text).unwrap();
        assert_eq!(d.series[0].len(), 3);
        assert_eq!(d.series[1].len(), 5);
        assert_eq!(d.labels[1], None);
    }

    #[test]
    fn gap_is_reported() {
        let text = format!("{HEAD}0,0,0,1,0,train\n0,0,2,3,0,train\n1,0,0,1,1,train\n");
        match parse_long_csv_str(&text) {
            Err(DataError::MissingCell {
                series_id: 0,
                channel: 0,
                time_index: 1,
            }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_is_reported() {
        let text = format!("{HEAD}0,0,0,1,0,train\n0,0,0,2,0,train\n1,0,0,1,1,train\n");
        assert!(matches!(parse_long_csv_str(&text), Err(DataError::DuplicateCell { .. })));
    }

    #[test]
    fn wrong_header_is_rejected() {
        assert!(parse_long_csv_str("a,b,c\n1,2,3\n").is_err());
    }
}
