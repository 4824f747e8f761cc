//! Loader for the sectioned `.ts` text format used by the UEA/UCR archives.
//!
//! Only the directives needed for multivariate classification files are
//! interpreted: `@problemName`, `@dimensions`, `@seriesLength`, `@classLabel`
//! and `@data`. Other directives are skipped with a warning.

use std::fs;
use std::path::Path;

use log::warn;

use super::{DataError, Dataset, Split, TimeSeries};

pub fn parse_ts(path: &Path, split: Split) -> Result<Dataset, DataError> {
    parse_ts_str(&fs::read_to_string(path)?, split)
}

fn err(line: usize, msg: impl Into<String>) -> DataError {
    DataError::Parse { line, msg: msg.into() }
}

pub fn parse_ts_str(text: &str, split: Split) -> Result<Dataset, DataError> {
    let mut dimensions: Option<usize> = None;
    let mut class_names: Option<Vec<String>> = None;
    let mut in_data = false;
    let mut series = Vec::new();
    let mut labels = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !in_data {
            if !line.starts_with('@') {
                return Err(err(lineno, format!("expected a directive, found {line:?}")));
            }
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap_or_default().to_ascii_lowercase();
            let rest: Vec<&str> = parts.collect();
            match key.as_str() {
                "@problemname" => {}
                "@dimensions" => {
                    let v = rest
                        .first()
                        .and_then(|s| s.parse::<usize>().ok())
                        .filter(|&v| v >= 1)
                        .ok_or_else(|| err(lineno, "@dimensions needs a positive integer"))?;
                    dimensions = Some(v);
                }
                "@serieslength" => {
                    rest.first()
                        .and_then(|s| s.parse::<usize>().ok())
                        .ok_or_else(|| err(lineno, "@seriesLength needs an integer"))?;
                }
                "@classlabel" => match rest.first().map(|s| s.to_ascii_lowercase()) {
                    Some(flag) if flag == "true" => {
                        let names: Vec<String> = rest[1..].iter().map(|s| s.to_string()).collect();
                        if names.len() < 2 {
                            return Err(err(lineno, "@classLabel must list at least two classes"));
                        }
                        class_names = Some(names);
                    }
                    Some(flag) if flag == "false" => {
                        return Err(err(lineno, "files without class labels are not supported"));
                    }
                    _ => return Err(err(lineno, "malformed @classLabel directive")),
                },
                "@data" => {
                    if class_names.is_none() {
                        return Err(err(lineno, "@data before @classLabel"));
                    }
                    in_data = true;
                }
                other => warn!("line {lineno}: ignoring directive {other}"),
            }
            continue;
        }

        let names = class_names.as_ref().expect("checked at @data");
        let fields: Vec<&str> = line.split(':').collect();
        if fields.len() < 2 {
            return Err(err(lineno, "data line needs at least one channel and a class label"));
        }
        let (label_tok, channel_fields) = fields.split_last().expect("non-empty");
        let dims = *dimensions.get_or_insert(channel_fields.len());
        if channel_fields.len() != dims {
            return Err(err(
                lineno,
                format!("{} channels, expected {dims}", channel_fields.len()),
            ));
        }
        let label_tok = label_tok.trim();
        let label = names
            .iter()
            .position(|n| n == label_tok)
            .ok_or_else(|| err(lineno, format!("unknown class label {label_tok:?}")))?;
        let mut channels = Vec::with_capacity(dims);
        for (c, field) in channel_fields.iter().enumerate() {
            let values = field
                .split(',')
                .map(|v| {
                    let v = v.trim();
                    v.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| err(lineno, format!("channel {c}: bad value {v:?}")))
                })
                .collect::<Result<Vec<f64>, _>>()?;
            channels.push(values);
        }
        if channels.iter().any(|c| c.len() != channels[0].len()) {
            return Err(err(lineno, "channels have different lengths"));
        }
        let id = series.len();
        series.push(TimeSeries::from_channels(channels, id).map_err(|e| err(lineno, e.to_string()))?);
        labels.push(Some(label));
    }

    if !in_data {
        return Err(err(text.lines().count(), "missing @data section"));
    }
    let class_names = class_names.expect("checked at @data");
    let n = series.len();
    let mut d = Dataset::new(series, labels, class_names.len(), vec![split; n])?;
    d.class_names = class_names;
    Ok(d)
}
