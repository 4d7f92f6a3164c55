//! CSV stream format: header row, `timestamp` first, feature columns, and
//! an optional trailing `label` column holding 0/1. Missing feature cells
//! are empty strings or a `NaN` literal.

use std::path::Path;

use super::PmuStream;
use crate::error::{Error, Result};

pub fn read_stream_csv(path: &Path) -> Result<PmuStream> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.is_empty() || headers.get(0) != Some("timestamp") {
        return Err(Error::Data(format!(
            "{}: first column must be 'timestamp'",
            path.display()
        )));
    }
    let has_label = headers.iter().last() == Some("label");
    let n_features = headers.len() - 1 - usize::from(has_label);
    if n_features == 0 {
        return Err(Error::Data(format!("{}: no feature columns", path.display())));
    }

    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    let mut labels = if has_label { Some(Vec::new()) } else { None };
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let ts: f64 = record
            .get(0)
            .unwrap_or_default()
            .trim()
            .parse()
            .map_err(|_| Error::Data(format!("{}: bad timestamp on row {}", path.display(), line + 2)))?;
        timestamps.push(ts);
        for i in 0..n_features {
            let cell = record.get(1 + i).unwrap_or_default().trim();
            let v = if cell.is_empty() || cell.eq_ignore_ascii_case("nan") {
                f64::NAN
            } else {
                cell.parse().map_err(|_| {
                    Error::Data(format!(
                        "{}: bad value '{cell}' at row {}, column {}",
                        path.display(),
                        line + 2,
                        i + 2
                    ))
                })?
            };
            values.push(v);
        }
        if let Some(l) = labels.as_mut() {
            let cell = record.get(1 + n_features).unwrap_or_default().trim();
            let flag = match cell {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::Data(format!(
                        "{}: label must be 0 or 1, got '{other}' on row {}",
                        path.display(),
                        line + 2
                    )))
                }
            };
            l.push(flag);
        }
    }
    PmuStream::new(timestamps, n_features, values, labels)
}

/// Write a stream with generic `f0..fN` headers unless names are given.
pub fn write_stream_csv(
    path: &Path,
    stream: &PmuStream,
    feature_names: Option<&[String]>,
) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["timestamp".to_string()];
    match feature_names {
        Some(names) => {
            if names.len() != stream.n_features() {
                return Err(Error::Contract(format!(
                    "{} feature names for {} features",
                    names.len(),
                    stream.n_features()
                )));
            }
            header.extend(names.iter().cloned());
        }
        None => header.extend((0..stream.n_features()).map(|i| format!("f{i}"))),
    }
    if stream.has_labels() {
        header.push("label".into());
    }
    writer.write_record(&header)?;

    let mut record = Vec::with_capacity(header.len());
    for i in 0..stream.n_frames() {
        record.clear();
        record.push(format!("{}", stream.timestamps()[i]));
        for &v in stream.row(i) {
            record.push(if v.is_nan() { String::new() } else { format!("{v}") });
        }
        if stream.has_labels() {
            record.push(if stream.label(i) { "1".into() } else { "0".into() });
        }
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}
