//! Selective log compression and z-score standardization, fitted on the
//! training split only.
//!
//! Fit order: raw feature means for imputation, the log rule on raw
//! pre-imputation values, then mean/variance of the (imputed,
//! log-compressed) values for standardization.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{PmuFrame, PmuStream};
use crate::error::{Error, Result};

/// Channels are log-compressed only when strictly positive and large:
/// raw min > 100 and raw max > 1000 on the training split.
pub const LOG_MIN_THRESHOLD: f64 = 100.0;
pub const LOG_MAX_THRESHOLD: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub index: usize,
    /// Mean after imputation and (when flagged) log compression.
    pub mean: f64,
    /// Population variance in the same space as `mean`.
    pub variance: f64,
    pub apply_log: bool,
    /// Raw-space training mean used to fill missing cells.
    pub impute_value: f64,
    /// Smallest raw training value; inference clamp target for log channels.
    pub raw_min: f64,
}

/// Per-feature preprocessing statistics plus provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessStats {
    pub features: Vec<FeatureStats>,
    /// Identifier of the split the stats were fitted on; guards against
    /// test-set leakage.
    pub split_id: String,
    /// Unix seconds at fit time.
    pub fit_unix_s: u64,
}

impl PreprocessStats {
    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}

/// Fit imputation values, log flags and standardization moments on a
/// training stream. Labels are ignored.
pub fn fit_preprocess(stream: &PmuStream, split_id: &str) -> Result<PreprocessStats> {
    if stream.n_frames() == 0 {
        return Err(Error::Data("cannot fit preprocessing on an empty stream".into()));
    }
    let n = stream.n_frames();
    let f = stream.n_features();
    let mut features = Vec::with_capacity(f);
    for j in 0..f {
        // raw-space pass over present values
        let mut count = 0usize;
        let mut sum = 0.0;
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for i in 0..n {
            let v = stream.value(i, j);
            if v.is_nan() {
                continue;
            }
            count += 1;
            sum += v;
            min = min.min(v);
            max = max.max(v);
        }
        let missing = n - count;
        if missing * 2 > n {
            return Err(Error::Data(format!(
                "feature {j}: {missing} of {n} training rows missing; imputation mean is meaningless"
            )));
        }
        let impute_value = sum / count as f64;
        let apply_log = min > LOG_MIN_THRESHOLD && max > LOG_MAX_THRESHOLD;

        // standardization moments after imputation and optional log
        let transform = |v: f64| {
            let v = if v.is_nan() { impute_value } else { v };
            if apply_log {
                v.ln_1p()
            } else {
                v
            }
        };
        let mean = (0..n).map(|i| transform(stream.value(i, j))).sum::<f64>() / n as f64;
        let variance = (0..n)
            .map(|i| {
                let d = transform(stream.value(i, j)) - mean;
                d * d
            })
            .sum::<f64>()
            / n as f64;
        features.push(FeatureStats {
            index: j,
            mean,
            variance,
            apply_log,
            impute_value,
            raw_min: min,
        });
    }
    let fit_unix_s = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    Ok(PreprocessStats {
        features,
        split_id: split_id.to_string(),
        fit_unix_s,
    })
}

/// Replace every missing cell by its feature's raw training mean.
pub fn impute_missing(stream: &PmuStream, stats: &PreprocessStats) -> Result<PmuStream> {
    check_feature_count(stream, stats)?;
    let mut out = stream.clone();
    for i in 0..out.n_frames() {
        for j in 0..out.n_features() {
            if out.value(i, j).is_nan() {
                out.set_value(i, j, stats.features[j].impute_value);
            }
        }
    }
    Ok(out)
}

/// Preprocess a single frame: impute, selectively log-compress, z-score.
///
/// A flagged channel seeing a raw value ≤ −1 at inference (log undefined)
/// is clamped to the smallest training value, with a warning.
pub fn apply_preprocess(frame: &PmuFrame, stats: &PreprocessStats) -> Result<Vec<f64>> {
    if frame.features.len() != stats.n_features() {
        return Err(Error::Data(format!(
            "frame has {} features, stats describe {}",
            frame.features.len(),
            stats.n_features()
        )));
    }
    let mut out = Vec::with_capacity(frame.features.len());
    for (j, &raw) in frame.features.iter().enumerate() {
        let fs = &stats.features[j];
        let mut v = if raw.is_nan() { fs.impute_value } else { raw };
        if fs.apply_log {
            if v <= -1.0 {
                log::warn!(
                    "feature {j}: value {v} outside log1p domain at t={}, clamping to training minimum {}",
                    frame.timestamp,
                    fs.raw_min
                );
                v = fs.raw_min;
            }
            v = v.ln_1p();
        }
        let std = if fs.variance > 0.0 { fs.variance.sqrt() } else { 1.0 };
        out.push((v - fs.mean) / std);
    }
    Ok(out)
}

/// Preprocess every frame of a stream, keeping timestamps and labels.
pub fn preprocess_stream(stream: &PmuStream, stats: &PreprocessStats) -> Result<PmuStream> {
    check_feature_count(stream, stats)?;
    let n = stream.n_frames();
    let f = stream.n_features();
    let mut values = Vec::with_capacity(n * f);
    for i in 0..n {
        let frame = stream.frame(i);
        values.extend(apply_preprocess(&frame, stats)?);
    }
    PmuStream::new(
        stream.timestamps().to_vec(),
        f,
        values,
        stream.labels().map(<[bool]>::to_vec),
    )
}

fn check_feature_count(stream: &PmuStream, stats: &PreprocessStats) -> Result<()> {
    if stream.n_features() != stats.n_features() {
        return Err(Error::Data(format!(
            "stream has {} features, stats describe {}",
            stream.n_features(),
            stats.n_features()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream_from_columns(cols: &[Vec<f64>]) -> PmuStream {
        let n = cols[0].len();
        let f = cols.len();
        let mut values = Vec::with_capacity(n * f);
        for i in 0..n {
            for col in cols {
                values.push(col[i]);
            }
        }
        let timestamps = (0..n).map(|i| i as f64).collect();
        PmuStream::new(timestamps, f, values, None).unwrap()
    }

    #[test]
    fn log_rule_follows_min_max_thresholds() {
        // large-magnitude channel: flagged
        let big: Vec<f64> = (0..10).map(|i| 1e5 + 1e5 * i as f64).collect();
        // bounded angle-like channel: min ≤ 100
        let angle: Vec<f64> = (0..10).map(|i| -3.0 + 0.6 * i as f64).collect();
        // frequency-like channel: max < 1000
        let freq: Vec<f64> = (0..10).map(|i| 59.9 + 0.02 * i as f64).collect();
        let stats = fit_preprocess(&stream_from_columns(&[big, angle, freq]), "train").unwrap();
        assert!(stats.features[0].apply_log);
        assert!(!stats.features[1].apply_log);
        assert!(!stats.features[2].apply_log);
    }

    #[test]
    fn log_rule_boundaries_are_strict() {
        // min exactly 100 → excluded even though max > 1000
        let at_min: Vec<f64> = vec![100.0, 5000.0, 600.0];
        // max exactly 1000 → excluded even though min > 100
        let at_max: Vec<f64> = vec![101.0, 1000.0, 600.0];
        // just past both thresholds → included
        let past: Vec<f64> = vec![100.0 + 1e-9, 1000.0 + 1e-9, 600.0];
        let stats = fit_preprocess(&stream_from_columns(&[at_min, at_max, past]), "train").unwrap();
        assert!(!stats.features[0].apply_log);
        assert!(!stats.features[1].apply_log);
        assert!(stats.features[2].apply_log);
    }

    #[test]
    fn empty_stream_is_rejected() {
        let s = PmuStream::new(vec![], 1, vec![], None).unwrap();
        assert!(matches!(fit_preprocess(&s, "train"), Err(Error::Data(_))));
    }

    #[test]
    fn impute_fills_with_training_mean() {
        let col = vec![1.0, f64::NAN, 3.0];
        let s = stream_from_columns(&[col]);
        let stats = fit_preprocess(&s, "train").unwrap();
        assert_eq!(stats.features[0].impute_value, 2.0);
        let filled = impute_missing(&s, &stats).unwrap();
        assert_eq!(filled.row(0), &[1.0]);
        assert_eq!(filled.row(1), &[2.0]);
        assert_eq!(filled.row(2), &[3.0]);
        assert_eq!(filled.missing_count(), 0);
    }

    #[test]
    fn impute_without_missing_is_identity() {
        let s = stream_from_columns(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.0, 1.0]]);
        let stats = fit_preprocess(&s, "train").unwrap();
        assert_eq!(impute_missing(&s, &stats).unwrap(), s);
    }

    #[test]
    fn majority_missing_feature_is_a_data_error() {
        let col = vec![1.0, f64::NAN, f64::NAN];
        let s = stream_from_columns(&[col]);
        assert!(matches!(fit_preprocess(&s, "train"), Err(Error::Data(_))));
    }

    #[test]
    fn mean_value_maps_to_zero_on_plain_channel() {
        let s = stream_from_columns(&[vec![1.0, 2.0, 3.0]]);
        let stats = fit_preprocess(&s, "train").unwrap();
        let frame = PmuFrame {
            timestamp: 0.0,
            features: vec![2.0],
            label: None,
        };
        let out = apply_preprocess(&frame, &stats).unwrap();
        assert!(out[0].abs() < 1e-15);
    }

    #[test]
    fn two_point_log_channel_standardizes_by_hand() {
        // raw values {e−1, e²−1}: log1p gives {1, 2}; the smaller
        // standardizes to −1 with population std 0.5
        let e = std::f64::consts::E;
        let raw = vec![e - 1.0, e * e - 1.0];
        // force the log flag by construction: shift the rule inputs
        // through a channel that satisfies min>100, max>1000? These raw
        // values do not. Standardization math is identical, so pin it on
        // a synthetic stats record instead.
        let stats = PreprocessStats {
            features: vec![FeatureStats {
                index: 0,
                mean: 1.5,
                variance: 0.25,
                apply_log: true,
                impute_value: raw.iter().sum::<f64>() / 2.0,
                raw_min: raw[0],
            }],
            split_id: "train".into(),
            fit_unix_s: 0,
        };
        let frame = PmuFrame {
            timestamp: 0.0,
            features: vec![e - 1.0],
            label: None,
        };
        let out = apply_preprocess(&frame, &stats).unwrap();
        assert!((out[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn refit_on_training_matrix_gives_standard_columns() {
        // mirrors the z-score definition: applying fitted stats back to the
        // training stream leaves every column with mean ~0 and var ~1
        let cols: Vec<Vec<f64>> = vec![
            (0..50).map(|i| 2e5 + 3e4 * ((i as f64) * 0.7).sin() + 2e4 * i as f64).collect(),
            (0..50).map(|i| (i as f64 * 0.31).cos()).collect(),
            (0..50).map(|i| 60.0 + 0.01 * (i as f64 * 0.11).sin()).collect(),
        ];
        let s = stream_from_columns(&cols);
        let stats = fit_preprocess(&s, "train").unwrap();
        assert!(stats.features[0].apply_log);
        let p = preprocess_stream(&s, &stats).unwrap();
        for j in 0..3 {
            let n = p.n_frames() as f64;
            let mean: f64 = (0..p.n_frames()).map(|i| p.value(i, j)).sum::<f64>() / n;
            let var: f64 = (0..p.n_frames())
                .map(|i| {
                    let d = p.value(i, j) - mean;
                    d * d
                })
                .sum::<f64>()
                / n;
            assert!(mean.abs() < 1e-9, "column {j} mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "column {j} var {var}");
        }
    }

    #[test]
    fn zero_variance_channel_divides_by_one() {
        let s = stream_from_columns(&[vec![5.0, 5.0, 5.0]]);
        let stats = fit_preprocess(&s, "train").unwrap();
        assert_eq!(stats.features[0].variance, 0.0);
        let frame = PmuFrame {
            timestamp: 0.0,
            features: vec![7.5],
            label: None,
        };
        let out = apply_preprocess(&frame, &stats).unwrap();
        assert_eq!(out[0], 2.5);
    }

    #[test]
    fn log_domain_violation_clamps_to_training_minimum() {
        let stats = PreprocessStats {
            features: vec![FeatureStats {
                index: 0,
                mean: 0.0,
                variance: 1.0,
                apply_log: true,
                impute_value: 500.0,
                raw_min: 150.0,
            }],
            split_id: "train".into(),
            fit_unix_s: 0,
        };
        let frame = PmuFrame {
            timestamp: 1.0,
            features: vec![-2.0],
            label: None,
        };
        let out = apply_preprocess(&frame, &stats).unwrap();
        assert_eq!(out[0], 150.0_f64.ln_1p());
    }

    #[test]
    fn stats_record_split_id_and_differ_across_splits() {
        let train = stream_from_columns(&[vec![1.0, 2.0, 3.0]]);
        let test = stream_from_columns(&[vec![10.0, 20.0, 30.0]]);
        let s_train = fit_preprocess(&train, "train").unwrap();
        let s_test = fit_preprocess(&test, "test").unwrap();
        assert_eq!(s_train.split_id, "train");
        assert_eq!(s_test.split_id, "test");
        assert_ne!(s_train.features, s_test.features);
    }

    #[test]
    fn apply_is_order_independent_across_frames() {
        let s = stream_from_columns(&[vec![1.0, 5.0, 9.0], vec![0.1, -0.4, 0.2]]);
        let stats = fit_preprocess(&s, "train").unwrap();
        let full = preprocess_stream(&s, &stats).unwrap();
        // shuffled per-frame application gives identical per-frame outputs
        for idx in [2usize, 0, 1] {
            let got = apply_preprocess(&s.frame(idx), &stats).unwrap();
            assert_eq!(got.as_slice(), full.row(idx));
        }
    }

    #[test]
    fn stats_json_roundtrip() {
        let s = stream_from_columns(&[vec![1.0, 2.0, f64::NAN, 4.0]]);
        let stats = fit_preprocess(&s, "train").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stats.json");
        stats.save(&path).unwrap();
        let back = PreprocessStats::load(&path).unwrap();
        assert_eq!(stats, back);
    }
}
