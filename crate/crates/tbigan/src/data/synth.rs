//! Synthetic PMU-like streams with injected anomalies.
//!
//! Each PMU contributes 14 variables: three-phase voltage and current
//! magnitudes and angles, frequency and ROCOF. Normal behaviour combines a
//! coherent inter-area oscillation with a slowly wandering amplitude,
//! common frequency wander, slow load drift and per-channel Gaussian noise
//! at configurable SNR. Anomaly segments inject step changes, frequency
//! excursions, dropouts-to-zero or oscillation bursts and label the
//! affected frames.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::PmuStream;
use crate::error::{Error, Result};

/// Variables per PMU: 3 V magnitudes, 3 V angles, 3 I magnitudes,
/// 3 I angles, frequency, ROCOF.
pub const VARS_PER_PMU: usize = 14;

const MODE_HZ: f64 = 0.45; // coherent inter-area oscillation

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnomalyKind {
    /// Sustained magnitude step on one PMU's voltage/current channels.
    Step,
    /// Common frequency offset ramping in and out across all PMUs.
    FreqExcursion,
    /// One PMU's channels drop to exactly zero (sensor/stream loss).
    Dropout,
    /// The normal coherent oscillation mode at several times its maximum
    /// normal amplitude; stays inside the linear span of normal data.
    OscillationBurst,
}

impl AnomalyKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "step" | "step_change" => Ok(AnomalyKind::Step),
            "freq" | "frequency" | "frequency_excursion" => Ok(AnomalyKind::FreqExcursion),
            "dropout" | "dropout_to_zero" => Ok(AnomalyKind::Dropout),
            "oscillation" | "oscillation_burst" => Ok(AnomalyKind::OscillationBurst),
            other => Err(Error::Config(format!(
                "unknown anomaly kind '{other}' (step | freq | dropout | oscillation)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AnomalyKind::Step => "step",
            AnomalyKind::FreqExcursion => "freq",
            AnomalyKind::Dropout => "dropout",
            AnomalyKind::OscillationBurst => "oscillation",
        }
    }
}

/// Half-open time interval `[start_s, end_s)` relative to the stream start.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalySegment {
    pub start_s: f64,
    pub end_s: f64,
    pub kind: AnomalyKind,
}

/// Plain-text key-value generator configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub pmus: usize,
    pub rate_hz: f64,
    pub train_duration_s: f64,
    pub test_duration_s: f64,
    pub snr_db_voltage: f64,
    pub snr_db_current: f64,
    pub snr_db_frequency: f64,
    /// Applied to the test stream; the training stream is all-normal.
    pub segments: Vec<AnomalySegment>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            pmus: 8,
            rate_hz: 30.0,
            train_duration_s: 300.0,
            test_duration_s: 120.0,
            snr_db_voltage: 47.0,
            snr_db_current: 47.0,
            snr_db_frequency: 75.0,
            segments: Vec::new(),
        }
    }
}

impl SynthConfig {
    pub fn n_features(&self) -> usize {
        self.pmus * VARS_PER_PMU
    }

    /// Parse `key = value` lines; `#` starts a comment. Anomaly segments
    /// repeat as `anomaly = start_s, end_s, kind`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = SynthConfig {
            segments: Vec::new(),
            ..SynthConfig::default()
        };
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let parse_f64 = |v: &str| -> Result<f64> {
                v.parse()
                    .map_err(|_| Error::Config(format!("line {}: bad number '{v}'", lineno + 1)))
            };
            match key {
                "pmus" => {
                    cfg.pmus = value.parse().map_err(|_| {
                        Error::Config(format!("line {}: bad integer '{value}'", lineno + 1))
                    })?
                }
                "rate_hz" => cfg.rate_hz = parse_f64(value)?,
                "train_duration_s" => cfg.train_duration_s = parse_f64(value)?,
                "test_duration_s" => cfg.test_duration_s = parse_f64(value)?,
                "snr_db_voltage" => cfg.snr_db_voltage = parse_f64(value)?,
                "snr_db_current" => cfg.snr_db_current = parse_f64(value)?,
                "snr_db_frequency" => cfg.snr_db_frequency = parse_f64(value)?,
                "anomaly" => {
                    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                    if parts.len() != 3 {
                        return Err(Error::Config(format!(
                            "line {}: anomaly needs 'start_s, end_s, kind'",
                            lineno + 1
                        )));
                    }
                    cfg.segments.push(AnomalySegment {
                        start_s: parse_f64(parts[0])?,
                        end_s: parse_f64(parts[1])?,
                        kind: AnomalyKind::parse(parts[2])?,
                    });
                }
                other => {
                    return Err(Error::Config(format!(
                        "line {}: unknown key '{other}'",
                        lineno + 1
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pmus == 0 {
            return Err(Error::Config("pmus must be ≥ 1".into()));
        }
        if self.rate_hz <= 0.0 || self.train_duration_s <= 0.0 || self.test_duration_s <= 0.0 {
            return Err(Error::Config("rate and durations must be positive".into()));
        }
        let mut sorted = self.segments.clone();
        sorted.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
        for seg in &sorted {
            if !(seg.start_s >= 0.0 && seg.end_s > seg.start_s) {
                return Err(Error::Config(format!(
                    "anomaly segment [{}, {}) is not a valid interval",
                    seg.start_s, seg.end_s
                )));
            }
            if seg.end_s > self.test_duration_s {
                return Err(Error::Config(format!(
                    "anomaly segment [{}, {}) extends past test_duration_s {}",
                    seg.start_s, seg.end_s, self.test_duration_s
                )));
            }
        }
        for pair in sorted.windows(2) {
            if pair[1].start_s < pair[0].end_s {
                return Err(Error::Config(format!(
                    "anomaly segments [{}, {}) and [{}, {}) overlap",
                    pair[0].start_s, pair[0].end_s, pair[1].start_s, pair[1].end_s
                )));
            }
        }
        Ok(())
    }

    /// Canonical feature names: `pmu{p}_{vm|va|im|ia}{A|B|C}`, `pmu{p}_freq`,
    /// `pmu{p}_rocof`.
    pub fn feature_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.n_features());
        for p in 0..self.pmus {
            for kind in ["vm", "va", "im", "ia"] {
                for phase in ["a", "b", "c"] {
                    names.push(format!("pmu{p}_{kind}_{phase}"));
                }
            }
            names.push(format!("pmu{p}_freq"));
            names.push(format!("pmu{p}_rocof"));
        }
        names
    }
}

/// Fixed per-run draw of operating levels, phases and participation
/// factors. Drawing order is constant so the clean signal is independent
/// of duration and noise settings.
struct SignalParams {
    v0: Vec<f64>,
    i0: Vec<f64>,
    participation: Vec<f64>,
    ang_offset: Vec<f64>,
    phase_mode: f64,
    phase_wander1: f64,
    phase_wander2: f64,
    phase_amp: f64,
    phase_load: f64,
    drift_phase: Vec<f64>,
}

impl SignalParams {
    fn draw(pmus: usize, n_features: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut unit = |lo: f64, hi: f64| lo + (hi - lo) * rng.gen::<f64>();
        let v0 = (0..pmus).map(|_| 2.0e5 * (1.0 + 0.3 * (unit(0.0, 1.0) - 0.5))).collect();
        let i0 = (0..pmus).map(|_| 420.0 * (1.0 + 0.4 * (unit(0.0, 1.0) - 0.5))).collect();
        let participation = (0..pmus).map(|_| 0.5 + 0.5 * unit(0.0, 1.0)).collect();
        let ang_offset = (0..pmus).map(|_| unit(-0.2, 0.2)).collect();
        let phase_mode = unit(0.0, 2.0 * PI);
        let phase_wander1 = unit(0.0, 2.0 * PI);
        let phase_wander2 = unit(0.0, 2.0 * PI);
        let phase_amp = unit(0.0, 2.0 * PI);
        let phase_load = unit(0.0, 2.0 * PI);
        let drift_phase = (0..n_features).map(|_| unit(0.0, 2.0 * PI)).collect();
        SignalParams {
            v0,
            i0,
            participation,
            ang_offset,
            phase_mode,
            phase_wander1,
            phase_wander2,
            phase_amp,
            phase_load,
            drift_phase,
        }
    }

    /// Oscillation amplitude envelope, slowly wandering in [0.3, 1].
    fn mode_amp(&self, t: f64) -> f64 {
        0.65 + 0.35 * (2.0 * PI * 0.011 * t + self.phase_amp).sin()
    }

    /// The coherent inter-area mode with its normal envelope.
    fn mode(&self, t: f64) -> f64 {
        self.mode_amp(t) * (2.0 * PI * MODE_HZ * t + self.phase_mode).sin()
    }

    /// Bare carrier of the mode at full unit amplitude (for bursts).
    fn mode_carrier(&self, t: f64) -> f64 {
        (2.0 * PI * MODE_HZ * t + self.phase_mode).sin()
    }

    /// Common frequency wander in Hz around nominal.
    fn freq_dev(&self, t: f64) -> f64 {
        0.010 * (2.0 * PI * 0.020 * t + self.phase_wander1).sin()
            + 0.006 * (2.0 * PI * 0.007 * t + self.phase_wander2).sin()
    }

    /// Analytic d/dt of `freq_dev`.
    fn rocof(&self, t: f64) -> f64 {
        0.010 * 2.0 * PI * 0.020 * (2.0 * PI * 0.020 * t + self.phase_wander1).cos()
            + 0.006 * 2.0 * PI * 0.007 * (2.0 * PI * 0.007 * t + self.phase_wander2).cos()
    }

    fn load_drift(&self, t: f64) -> f64 {
        0.02 * (2.0 * PI * 0.003 * t + self.phase_load).sin()
    }
}

fn clean_value(p: &SignalParams, pmu: usize, var: usize, feat: usize, t: f64) -> f64 {
    let kappa = p.participation[pmu];
    let drift = 0.002 * (2.0 * PI * 0.005 * t + p.drift_phase[feat]).sin();
    match var {
        // voltage magnitudes, phases a/b/c
        0..=2 => p.v0[pmu] * (1.0 + 0.010 * p.mode(t) * kappa + 0.5 * p.load_drift(t) + drift),
        // voltage angles: bounded oscillation around the phase offset
        3..=5 => {
            let base = -2.0 * PI / 3.0 * (var - 3) as f64 + p.ang_offset[pmu];
            base + 0.02 * p.mode(t) * kappa + drift
        }
        // current magnitudes
        6..=8 => p.i0[pmu] * (1.0 + 0.05 * p.mode(t) * kappa + p.load_drift(t) + drift),
        // current angles
        9..=11 => {
            let base = -2.0 * PI / 3.0 * (var - 9) as f64 + p.ang_offset[pmu] - 0.5;
            base + 0.03 * p.mode(t) * kappa + drift
        }
        // frequency
        12 => 60.0 + p.freq_dev(t) * (1.0 + 0.02 * kappa),
        // rocof
        13 => p.rocof(t) * (1.0 + 0.02 * kappa),
        _ => unreachable!("var index out of range"),
    }
}

/// Trapezoidal 0→1→0 profile over a segment (20% ramps).
fn ramp_profile(frac: f64) -> f64 {
    if frac < 0.2 {
        frac / 0.2
    } else if frac > 0.8 {
        (1.0 - frac) / 0.2
    } else {
        1.0
    }
}

/// Generate one labeled stream.
///
/// `t0_s` offsets the underlying dynamics so train/test parts of the same
/// seed continue the same trajectories; `with_noise` switches the Gaussian
/// measurement noise off for diagnostics (the clean signal is unchanged).
pub fn synth_stream(
    cfg: &SynthConfig,
    duration_s: f64,
    segments: &[AnomalySegment],
    t0_s: f64,
    seed: u64,
    with_noise: bool,
) -> Result<PmuStream> {
    cfg.validate()?;
    let n = (duration_s * cfg.rate_hz).round() as usize;
    if n == 0 {
        return Err(Error::Config("duration too short for one frame".into()));
    }
    let f = cfg.n_features();
    let mut param_rng = ChaCha8Rng::seed_from_u64(seed);
    let params = SignalParams::draw(cfg.pmus, f, &mut param_rng);

    let dt = 1.0 / cfg.rate_hz;
    let mut values = vec![0.0; n * f];
    let mut timestamps = Vec::with_capacity(n);
    for j in 0..n {
        let t = t0_s + j as f64 * dt;
        timestamps.push(t);
        for pmu in 0..cfg.pmus {
            for var in 0..VARS_PER_PMU {
                let feat = pmu * VARS_PER_PMU + var;
                values[j * f + feat] = clean_value(&params, pmu, var, feat, t);
            }
        }
    }

    // per-channel noise levels from the anomaly-free clean signal
    let mut noise_std = vec![0.0; f];
    for feat in 0..f {
        let var = feat % VARS_PER_PMU;
        let snr_db = match var {
            0..=5 => cfg.snr_db_voltage,
            6..=11 => cfg.snr_db_current,
            _ => cfg.snr_db_frequency,
        };
        let power: f64 = (0..n).map(|j| values[j * f + feat].powi(2)).sum::<f64>() / n as f64;
        noise_std[feat] = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    }

    // physical anomalies ride under the noise; dropouts replace it
    let mut labels = vec![false; n];
    let mut dropout_spans: Vec<(usize, usize, usize)> = Vec::new(); // (start, end, pmu)
    for (si, seg) in segments.iter().enumerate() {
        let j0 = (seg.start_s * cfg.rate_hz).round() as usize;
        let j1 = (seg.end_s * cfg.rate_hz).round() as usize;
        let j1 = j1.min(n);
        if j0 >= j1 {
            continue;
        }
        let pmu = si % cfg.pmus;
        for j in j0..j1 {
            labels[j] = true;
            let t = t0_s + j as f64 * dt;
            let frac = (j - j0) as f64 / (j1 - j0) as f64;
            match seg.kind {
                AnomalyKind::Step => {
                    for ph in 0..3 {
                        let vm = pmu * VARS_PER_PMU + ph;
                        values[j * f + vm] -= 0.02 * params.v0[pmu];
                        let im = pmu * VARS_PER_PMU + 6 + ph;
                        values[j * f + im] += 0.05 * params.i0[pmu];
                    }
                }
                AnomalyKind::FreqExcursion => {
                    let offset = 0.12 * ramp_profile(frac);
                    for p in 0..cfg.pmus {
                        values[j * f + p * VARS_PER_PMU + 12] += offset;
                    }
                    // the ramp's slope shows up on every ROCOF channel
                    let slope = if frac < 0.2 {
                        0.12 / (0.2 * (j1 - j0) as f64 * dt)
                    } else if frac > 0.8 {
                        -0.12 / (0.2 * (j1 - j0) as f64 * dt)
                    } else {
                        0.0
                    };
                    for p in 0..cfg.pmus {
                        values[j * f + p * VARS_PER_PMU + 13] += slope;
                    }
                }
                AnomalyKind::OscillationBurst => {
                    // same mode shape and frequency as normal, far beyond
                    // the normal amplitude envelope
                    let burst = 3.5 * ramp_profile(frac).max(0.35) * params.mode_carrier(t);
                    for p in 0..cfg.pmus {
                        let kappa = params.participation[p];
                        for ph in 0..3 {
                            let vm = p * VARS_PER_PMU + ph;
                            values[j * f + vm] += params.v0[p] * 0.010 * burst * kappa;
                            let im = p * VARS_PER_PMU + 6 + ph;
                            values[j * f + im] += params.i0[p] * 0.05 * burst * kappa;
                        }
                    }
                }
                AnomalyKind::Dropout => {}
            }
        }
        if seg.kind == AnomalyKind::Dropout {
            dropout_spans.push((j0, j1, pmu));
        }
    }

    if with_noise {
        let mut noise_rng = ChaCha8Rng::seed_from_u64(seed ^ (t0_s.to_bits().rotate_left(17)));
        for j in 0..n {
            for feat in 0..f {
                let z: f64 = StandardNormal.sample(&mut noise_rng);
                values[j * f + feat] += noise_std[feat] * z;
            }
        }
    }

    // dropouts zero the affected PMU's channels, noise included
    for (j0, j1, pmu) in dropout_spans {
        for j in j0..j1 {
            for var in 0..VARS_PER_PMU {
                values[j * f + pmu * VARS_PER_PMU + var] = 0.0;
            }
        }
    }

    PmuStream::new(timestamps, f, values, Some(labels))
}

/// All-normal training stream covering `[0, train_duration_s)`.
pub fn synth_train_stream(cfg: &SynthConfig, seed: u64) -> Result<PmuStream> {
    synth_stream(cfg, cfg.train_duration_s, &[], 0.0, seed, true)
}

/// Labeled test stream continuing the same trajectories after the
/// training span, with the configured anomaly segments.
pub fn synth_test_stream(cfg: &SynthConfig, seed: u64) -> Result<PmuStream> {
    synth_stream(
        cfg,
        cfg.test_duration_s,
        &cfg.segments,
        cfg.train_duration_s,
        seed,
        true,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SynthConfig {
        SynthConfig {
            pmus: 2,
            rate_hz: 30.0,
            train_duration_s: 20.0,
            test_duration_s: 10.0,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn frame_count_matches_duration() {
        let cfg = small_cfg();
        let s = synth_stream(&cfg, 60.0, &[], 0.0, 1, true).unwrap();
        assert_eq!(s.n_frames(), 1800);
        assert_eq!(s.n_features(), 28);
    }

    #[test]
    fn no_segments_means_no_labels() {
        let cfg = small_cfg();
        let s = synth_train_stream(&cfg, 3).unwrap();
        assert!(s.labels().unwrap().iter().all(|&l| !l));
    }

    #[test]
    fn one_second_step_labels_exactly_thirty_frames() {
        let mut cfg = small_cfg();
        cfg.segments = vec![AnomalySegment {
            start_s: 2.0,
            end_s: 3.0,
            kind: AnomalyKind::Step,
        }];
        let s = synth_test_stream(&cfg, 5).unwrap();
        let count = s.labels().unwrap().iter().filter(|&&l| l).count();
        assert_eq!(count, 30);
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = small_cfg();
        let a = synth_train_stream(&cfg, 11).unwrap();
        let b = synth_train_stream(&cfg, 11).unwrap();
        assert_eq!(a, b);
        let c = synth_train_stream(&cfg, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn measured_snr_within_one_db() {
        let cfg = small_cfg();
        let noisy = synth_stream(&cfg, 60.0, &[], 0.0, 7, true).unwrap();
        let clean = synth_stream(&cfg, 60.0, &[], 0.0, 7, false).unwrap();
        // voltage magnitude channel of PMU 0 carries the 47 dB setting
        for (feat, want_db) in [(0usize, cfg.snr_db_voltage), (12, cfg.snr_db_frequency)] {
            let n = noisy.n_frames();
            let p_clean: f64 = (0..n).map(|j| clean.value(j, feat).powi(2)).sum::<f64>() / n as f64;
            let p_noise: f64 = (0..n)
                .map(|j| (noisy.value(j, feat) - clean.value(j, feat)).powi(2))
                .sum::<f64>()
                / n as f64;
            let snr_db = 10.0 * (p_clean / p_noise).log10();
            assert!(
                (snr_db - want_db).abs() < 1.0,
                "feature {feat}: measured {snr_db:.2} dB, configured {want_db} dB"
            );
        }
    }

    #[test]
    fn dropout_zeroes_the_affected_pmu() {
        let mut cfg = small_cfg();
        cfg.segments = vec![AnomalySegment {
            start_s: 1.0,
            end_s: 2.0,
            kind: AnomalyKind::Dropout,
        }];
        let s = synth_test_stream(&cfg, 9).unwrap();
        let j = (1.5 * cfg.rate_hz) as usize;
        for var in 0..VARS_PER_PMU {
            assert_eq!(s.value(j, var), 0.0);
        }
        // the other PMU keeps reporting
        assert_ne!(s.value(j, VARS_PER_PMU), 0.0);
    }

    #[test]
    fn voltage_magnitudes_satisfy_log_rule_and_angles_do_not() {
        let cfg = small_cfg();
        let s = synth_train_stream(&cfg, 13).unwrap();
        let stats = super::super::fit_preprocess(&s, "train").unwrap();
        for p in 0..cfg.pmus {
            for ph in 0..3 {
                assert!(stats.features[p * VARS_PER_PMU + ph].apply_log, "vm {p}/{ph}");
                assert!(!stats.features[p * VARS_PER_PMU + 3 + ph].apply_log, "va {p}/{ph}");
            }
            assert!(!stats.features[p * VARS_PER_PMU + 12].apply_log, "freq {p}");
        }
    }

    #[test]
    fn config_parser_and_validation() {
        let text = "\
# generator settings
pmus = 4
rate_hz = 30
train_duration_s = 60
test_duration_s = 30
snr_db_voltage = 47
snr_db_current = 47
snr_db_frequency = 75
anomaly = 5.0, 6.0, step
anomaly = 10.0, 11.5, oscillation
";
        let cfg = SynthConfig::parse(text).unwrap();
        assert_eq!(cfg.pmus, 4);
        assert_eq!(cfg.segments.len(), 2);
        assert_eq!(cfg.segments[1].kind, AnomalyKind::OscillationBurst);

        let overlapping = "\
test_duration_s = 30
anomaly = 5.0, 8.0, step
anomaly = 7.0, 9.0, dropout
";
        assert!(matches!(SynthConfig::parse(overlapping), Err(Error::Config(_))));

        let past_end = "\
test_duration_s = 30
anomaly = 29.0, 31.0, step
";
        assert!(matches!(SynthConfig::parse(past_end), Err(Error::Config(_))));
    }

    #[test]
    fn train_and_test_continue_the_same_trajectories() {
        let cfg = small_cfg();
        let train = synth_train_stream(&cfg, 21).unwrap();
        let test = synth_test_stream(&cfg, 21).unwrap();
        // timestamps continue
        let last_train = *train.timestamps().last().unwrap();
        assert!(test.timestamps()[0] > last_train);
        // clean levels are comparable: same operating point draw
        let m_train: f64 =
            (0..train.n_frames()).map(|j| train.value(j, 0)).sum::<f64>() / train.n_frames() as f64;
        let m_test: f64 =
            (0..test.n_frames()).map(|j| test.value(j, 0)).sum::<f64>() / test.n_frames() as f64;
        assert!((m_train - m_test).abs() / m_train < 0.05);
    }
}
