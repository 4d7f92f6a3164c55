//! PMU stream ingestion, preprocessing and windowing, plus a synthetic
//! generator for desk-scale experiments.

mod csv_io;
mod preprocess;
mod synth;
mod window;

pub use csv_io::{read_stream_csv, write_stream_csv};
pub use preprocess::{
    apply_preprocess, fit_preprocess, impute_missing, preprocess_stream, FeatureStats,
    PreprocessStats,
};
pub use synth::{
    synth_stream, synth_test_stream, synth_train_stream, AnomalyKind, AnomalySegment, SynthConfig,
    VARS_PER_PMU,
};
pub use window::{make_windows, PmuWindow};

use crate::error::{Error, Result};

/// One timestamped measurement row. Missing entries are NaN until imputed.
#[derive(Debug, Clone, PartialEq)]
pub struct PmuFrame {
    pub timestamp: f64,
    pub features: Vec<f64>,
    pub label: Option<bool>,
}

/// A contiguous multivariate PMU recording with constant feature count and
/// strictly increasing timestamps. Values are stored row-major; missing
/// cells are NaN until [`impute_missing`] runs.
#[derive(Debug, Clone, PartialEq)]
pub struct PmuStream {
    timestamps: Vec<f64>,
    n_features: usize,
    values: Vec<f64>,
    labels: Option<Vec<bool>>,
}

impl PmuStream {
    pub fn new(
        timestamps: Vec<f64>,
        n_features: usize,
        values: Vec<f64>,
        labels: Option<Vec<bool>>,
    ) -> Result<Self> {
        if n_features == 0 {
            return Err(Error::Data("stream needs at least one feature".into()));
        }
        if values.len() != timestamps.len() * n_features {
            return Err(Error::Data(format!(
                "{} frames × {} features ≠ {} values",
                timestamps.len(),
                n_features,
                values.len()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != timestamps.len() {
                return Err(Error::Data("label count differs from frame count".into()));
            }
        }
        if timestamps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Data("timestamps must be strictly increasing".into()));
        }
        Ok(PmuStream {
            timestamps,
            n_features,
            values,
            labels,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.timestamps.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn row(&self, frame: usize) -> &[f64] {
        &self.values[frame * self.n_features..(frame + 1) * self.n_features]
    }

    pub fn value(&self, frame: usize, feature: usize) -> f64 {
        self.values[frame * self.n_features + feature]
    }

    pub(crate) fn set_value(&mut self, frame: usize, feature: usize, v: f64) {
        self.values[frame * self.n_features + feature] = v;
    }

    pub fn labels(&self) -> Option<&[bool]> {
        self.labels.as_deref()
    }

    /// Frame label, false when the stream carries no labels.
    pub fn label(&self, frame: usize) -> bool {
        self.labels.as_ref().map_or(false, |l| l[frame])
    }

    pub fn has_labels(&self) -> bool {
        self.labels.is_some()
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_nan()).count()
    }

    pub fn frame(&self, idx: usize) -> PmuFrame {
        PmuFrame {
            timestamp: self.timestamps[idx],
            features: self.row(idx).to_vec(),
            label: self.labels.as_ref().map(|l| l[idx]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stream_validates_dimensions_and_timestamps() {
        assert!(PmuStream::new(vec![0.0, 1.0], 2, vec![0.0; 4], None).is_ok());
        assert!(PmuStream::new(vec![0.0, 1.0], 2, vec![0.0; 3], None).is_err());
        assert!(PmuStream::new(vec![1.0, 1.0], 2, vec![0.0; 4], None).is_err());
        assert!(PmuStream::new(vec![2.0, 1.0], 2, vec![0.0; 4], None).is_err());
        assert!(PmuStream::new(vec![0.0, 1.0], 2, vec![0.0; 4], Some(vec![true])).is_err());
    }
}
