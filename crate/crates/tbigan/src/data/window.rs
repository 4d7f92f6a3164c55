//! Sliding windows over preprocessed streams.

use super::PmuStream;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A T×F slice of preprocessed measurements; the unit of training and
/// scoring. The label is the OR of the member frames' labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PmuWindow {
    pub data: Tensor,
    pub start_index: usize,
    pub label: bool,
}

/// Cut windows `[i·stride, i·stride + t)`; yields
/// `floor((n − t)/stride) + 1` windows, or none (with a warning) when the
/// stream is shorter than one window.
pub fn make_windows(stream: &PmuStream, t: usize, stride: usize) -> Result<Vec<PmuWindow>> {
    if t < 1 || stride < 1 {
        return Err(Error::Config(format!(
            "window length {t} and stride {stride} must both be ≥ 1"
        )));
    }
    if stream.missing_count() > 0 {
        return Err(Error::Data(
            "stream still contains missing values; impute before windowing".into(),
        ));
    }
    let n = stream.n_frames();
    if n < t {
        log::warn!("stream of {n} frames is shorter than one {t}-frame window; no windows produced");
        return Ok(Vec::new());
    }
    let f = stream.n_features();
    let count = (n - t) / stride + 1;
    let mut out = Vec::with_capacity(count);
    for w in 0..count {
        let start = w * stride;
        let mut data = Vec::with_capacity(t * f);
        let mut label = false;
        for i in start..start + t {
            data.extend_from_slice(stream.row(i));
            label |= stream.label(i);
        }
        out.push(PmuWindow {
            data: Tensor::new(vec![t, f], data)?,
            start_index: start,
            label,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labeled_stream(n: usize, anomalous: &[usize]) -> PmuStream {
        let timestamps = (0..n).map(|i| i as f64).collect();
        let values = (0..n * 2).map(|i| i as f64).collect();
        let labels = (0..n).map(|i| anomalous.contains(&i)).collect();
        PmuStream::new(timestamps, 2, values, Some(labels)).unwrap()
    }

    #[test]
    fn window_count_and_starts() {
        let s = labeled_stream(10, &[]);
        let ws = make_windows(&s, 4, 2).unwrap();
        assert_eq!(ws.len(), 4);
        let starts: Vec<usize> = ws.iter().map(|w| w.start_index).collect();
        assert_eq!(starts, vec![0, 2, 4, 6]);
        assert!(ws.iter().all(|w| w.data.shape() == [4, 2]));
    }

    #[test]
    fn all_normal_frames_give_unlabeled_windows() {
        let s = labeled_stream(10, &[]);
        assert!(make_windows(&s, 4, 1).unwrap().iter().all(|w| !w.label));
    }

    #[test]
    fn single_anomalous_frame_labels_covering_windows() {
        // frame 5 anomalous, T=4, stride=1 → exactly windows 2..=5
        let s = labeled_stream(12, &[5]);
        let ws = make_windows(&s, 4, 1).unwrap();
        for w in &ws {
            let covers = w.start_index <= 5 && 5 < w.start_index + 4;
            assert_eq!(w.label, covers, "window at {}", w.start_index);
        }
        let flagged: Vec<usize> = ws.iter().filter(|w| w.label).map(|w| w.start_index).collect();
        assert_eq!(flagged, vec![2, 3, 4, 5]);
    }

    #[test]
    fn short_stream_yields_empty() {
        let s = labeled_stream(3, &[]);
        assert!(make_windows(&s, 4, 1).unwrap().is_empty());
    }

    #[test]
    fn bad_params_rejected() {
        let s = labeled_stream(10, &[]);
        assert!(make_windows(&s, 0, 1).is_err());
        assert!(make_windows(&s, 4, 0).is_err());
    }

    #[test]
    fn window_data_matches_frames() {
        let s = labeled_stream(6, &[]);
        let ws = make_windows(&s, 2, 3).unwrap();
        assert_eq!(ws.len(), 2);
        assert_eq!(ws[1].start_index, 3);
        assert_eq!(ws[1].data.data(), &[6.0, 7.0, 8.0, 9.0]);
    }
}
