//! Rolling adaptive threshold θ_t = μ + c·σ over the last k scores.

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Ring buffer of recent scores producing the adaptive threshold.
///
/// θ is computed from the buffer *before* the incoming score is inserted,
/// so a large anomaly cannot raise its own threshold. During warm-up
/// (buffer not yet full) nothing is flagged and θ reports +∞.
#[derive(Debug, Clone)]
pub struct ThresholdState {
    buf: VecDeque<f64>,
    k: usize,
    c: f64,
    /// Skip inserting flagged scores, keeping long events from
    /// contaminating the baseline.
    quarantine: bool,
}

impl ThresholdState {
    pub fn new(k: usize, c: f64) -> Result<Self> {
        if k < 2 {
            return Err(Error::Config(format!(
                "threshold window k must be ≥ 2 (std undefined), got {k}"
            )));
        }
        if !c.is_finite() {
            return Err(Error::Config("sensitivity c must be finite".into()));
        }
        Ok(ThresholdState {
            buf: VecDeque::with_capacity(k),
            k,
            c,
            quarantine: false,
        })
    }

    pub fn with_quarantine(mut self, on: bool) -> Self {
        self.quarantine = on;
        self
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn is_warmed_up(&self) -> bool {
        self.buf.len() == self.k
    }

    /// Current θ: mean + c·std (population) of the buffer, +∞ during
    /// warm-up.
    pub fn theta(&self) -> f64 {
        if !self.is_warmed_up() {
            return f64::INFINITY;
        }
        let n = self.buf.len() as f64;
        let mean = self.buf.iter().sum::<f64>() / n;
        let var = self.buf.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
        mean + self.c * var.sqrt()
    }

    /// Evaluate one score: θ from the current buffer, flag when strictly
    /// above, then insert. Returns (flagged, θ used).
    pub fn update(&mut self, score: f64) -> (bool, f64) {
        let theta = self.theta();
        let flagged = score > theta;
        if !(self.quarantine && flagged) {
            if self.buf.len() == self.k {
                self.buf.pop_front();
            }
            self.buf.push_back(score);
        }
        (flagged, theta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_below_two_is_rejected() {
        assert!(ThresholdState::new(1, 2.0).is_err());
        assert!(ThresholdState::new(0, 2.0).is_err());
        assert!(ThresholdState::new(2, 2.0).is_ok());
    }

    #[test]
    fn warmup_never_flags_and_reports_infinite_theta() {
        let mut st = ThresholdState::new(4, 2.0).unwrap();
        for s in [10.0, 1e6, -5.0, 3.0] {
            let (flagged, theta) = st.update(s);
            assert!(!flagged);
            assert!(theta.is_infinite());
        }
        assert!(st.is_warmed_up());
        assert!(st.theta().is_finite());
    }

    #[test]
    fn constant_buffer_flags_only_strictly_above() {
        let mut st = ThresholdState::new(4, 2.0).unwrap();
        for _ in 0..4 {
            st.update(1.0);
        }
        // μ=1, σ=0 → θ=1
        let mut probe = st.clone();
        let (flagged, theta) = probe.update(5.0);
        assert_eq!(theta, 1.0);
        assert!(flagged);
        let (flagged, theta) = st.update(1.0);
        assert_eq!(theta, 1.0);
        assert!(!flagged); // 1 > 1 is false
    }

    #[test]
    fn hand_computed_population_std() {
        let mut st = ThresholdState::new(4, 1.0).unwrap();
        for s in [0.0, 2.0, 0.0, 2.0] {
            st.update(s);
        }
        // μ=1, population σ=1 → θ=2
        assert_eq!(st.theta(), 2.0);
        let mut probe = st.clone();
        assert!(probe.update(2.5).0);
        assert!(!st.update(1.9).0);
    }

    #[test]
    fn threshold_precedes_insertion() {
        let mut st = ThresholdState::new(2, 0.0).unwrap();
        st.update(1.0);
        st.update(1.0);
        // buffer [1,1]: θ=1; a huge score is judged against θ=1,
        // not against a buffer containing itself
        let (flagged, theta) = st.update(100.0);
        assert!(flagged);
        assert_eq!(theta, 1.0);
        // and it does enter the buffer afterwards (no quarantine)
        assert!(st.theta() > 1.0);
    }

    #[test]
    fn quarantine_keeps_flagged_scores_out() {
        let mut st = ThresholdState::new(2, 1.0).unwrap().with_quarantine(true);
        st.update(1.0);
        st.update(1.0);
        let theta_before = st.theta();
        let (flagged, _) = st.update(50.0);
        assert!(flagged);
        assert_eq!(st.theta(), theta_before);
    }
}
