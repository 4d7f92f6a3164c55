//! Composite anomaly scoring and streaming detection.
//!
//! The window score combines a feature-weighted reconstruction error, the
//! discriminator's confidence shortfall on the (x, E(x)) pair, and the
//! latent drift between E(x) and E(G(E(x))):
//! total = α·recon + (1−α)·disc + γ·latent.

mod threshold;

pub use threshold::ThresholdState;

use std::path::Path;

use rayon::prelude::*;

use crate::data::{PmuStream, PmuWindow};
use crate::error::{Error, Result};
use crate::model::{Mode, TBiGanModel};
use crate::tensor::GradTape;

/// Per-feature inverse-variance weights, normalized so their mean over all
/// F features is 1. Zero-variance features get weight 0 before
/// normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureWeights {
    w: Vec<f64>,
}

impl FeatureWeights {
    pub fn values(&self) -> &[f64] {
        &self.w
    }

    pub fn uniform(n: usize) -> Self {
        FeatureWeights { w: vec![1.0; n] }
    }

    pub fn from_values(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() || w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Data("weights must be non-negative and finite".into()));
        }
        Ok(FeatureWeights { w })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), &self.w)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let w: Vec<f64> = serde_json::from_reader(std::io::BufReader::new(file))?;
        Self::from_values(w)
    }
}

/// Inverse-variance weights over all frames of the training windows.
pub fn fit_weights(training_windows: &[PmuWindow]) -> Result<FeatureWeights> {
    if training_windows.is_empty() {
        return Err(Error::Data("no training windows for weight fitting".into()));
    }
    let f = training_windows[0].data.cols();
    let mut sum = vec![0.0; f];
    let mut sumsq = vec![0.0; f];
    let mut frames = 0usize;
    for w in training_windows {
        let t = w.data.rows();
        frames += t;
        for i in 0..t {
            for j in 0..f {
                let v = w.data.at(i, j);
                sum[j] += v;
                sumsq[j] += v * v;
            }
        }
    }
    let n = frames as f64;
    let mut raw = vec![0.0; f];
    let mut any_positive = false;
    for j in 0..f {
        let mean = sum[j] / n;
        let var = (sumsq[j] / n - mean * mean).max(0.0);
        if var > 0.0 {
            raw[j] = 1.0 / var;
            any_positive = true;
        }
    }
    if !any_positive {
        return Err(Error::Data("every feature has zero variance; weights undefined".into()));
    }
    let scale = f as f64 / raw.iter().sum::<f64>();
    for w in raw.iter_mut() {
        *w *= scale;
    }
    Ok(FeatureWeights { w: raw })
}

/// One window's composite score with its components broken out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnomalyScore {
    pub total: f64,
    pub recon_term: f64,
    pub disc_term: f64,
    pub latent_term: f64,
    pub window_start: usize,
}

/// total = α·recon + (1−α)·disc + γ·latent.
pub fn assemble_score(recon: f64, disc: f64, latent: f64, alpha: f64, gamma: f64) -> f64 {
    alpha * recon + (1.0 - alpha) * disc + gamma * latent
}

fn check_score_params(alpha: f64, gamma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha must lie in [0,1], got {alpha}")));
    }
    if !(gamma >= 0.0) {
        return Err(Error::Config(format!("gamma must be ≥ 0, got {gamma}")));
    }
    Ok(())
}

/// Score one window against a frozen model.
///
/// recon = mean over (t,f) of w̃_f·(x−x̂)²; disc = BCE(D(x,E(x)), 1)
/// computed from the logit; latent = ‖E(x̂)−E(x)‖².
pub fn score_window(
    model: &TBiGanModel,
    weights: &FeatureWeights,
    window: &PmuWindow,
    alpha: f64,
    gamma: f64,
) -> Result<AnomalyScore> {
    check_score_params(alpha, gamma)?;
    let cfg = &model.config;
    if weights.w.len() != cfg.feature_dim {
        return Err(Error::Data(format!(
            "{} weights for {} features",
            weights.w.len(),
            cfg.feature_dim
        )));
    }
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);

    let mut tape = GradTape::new();
    tape.set_check_finite(true);
    let eb = model.encoder.params.bind(&mut tape, false);
    let gb = model.generator.params.bind(&mut tape, false);
    let db = model
        .discriminator
        .bind(&mut tape, false, cfg.spectral_norm)?;

    let x = tape.constant(window.data.clone());
    let scored = (|| -> Result<AnomalyScore> {
        let z = model
            .encoder
            .forward(&mut tape, &eb, x, cfg, Mode::Eval, &mut rng)?;
        let xhat = model
            .generator
            .forward(&mut tape, &gb, z, cfg, Mode::Eval, &mut rng)?;
        let z2 = model
            .encoder
            .forward(&mut tape, &eb, xhat, cfg, Mode::Eval, &mut rng)?;
        let logit = model
            .discriminator
            .forward_logit(&mut tape, &db, x, z, cfg, Mode::Eval, &mut rng)?;

        let xhat_v = tape.value(xhat);
        let (t, f) = (window.data.rows(), window.data.cols());
        let mut recon = 0.0;
        for i in 0..t {
            for j in 0..f {
                let d = window.data.at(i, j) - xhat_v.at(i, j);
                recon += weights.w[j] * d * d;
            }
        }
        recon /= (t * f) as f64;

        // −ln σ(logit) via softplus(−logit); never overflows
        let l = tape.value(logit).item();
        let disc = (-l).max(0.0) + (-(-l).abs()).exp().ln_1p();

        let z_v = tape.value(z);
        let z2_v = tape.value(z2);
        let latent: f64 = z_v
            .data()
            .iter()
            .zip(z2_v.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();

        Ok(AnomalyScore {
            total: assemble_score(recon, disc, latent, alpha, gamma),
            recon_term: recon,
            disc_term: disc,
            latent_term: latent,
            window_start: window.start_index,
        })
    })();
    scored.map_err(|e| match e {
        Error::NonFinite { op, .. } => Error::NonFinite {
            op,
            context: Some(format!("scoring window at frame {}", window.start_index)),
        },
        other => other,
    })
}

/// Streaming detection parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    pub alpha: f64,
    pub gamma: f64,
    /// Rolling threshold window (scores).
    pub k: usize,
    /// Sensitivity multiplier on the rolling std.
    pub c: f64,
    /// Keep flagged scores out of the rolling buffer.
    pub quarantine: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            alpha: 0.6,
            gamma: 1.0,
            k: 300,
            c: 3.0,
            quarantine: false,
        }
    }
}

/// One row of the score trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TracePoint {
    pub score: AnomalyScore,
    pub theta: f64,
    pub flagged: bool,
    pub label: Option<bool>,
}

/// Score every window of a preprocessed stream in temporal order and
/// thread the rolling threshold through. Window scoring runs in parallel;
/// threshold updates stay strictly sequential.
pub fn score_stream(
    model: &TBiGanModel,
    weights: &FeatureWeights,
    stream: &PmuStream,
    t: usize,
    stride: usize,
    det: &DetectorConfig,
) -> Result<Vec<TracePoint>> {
    check_score_params(det.alpha, det.gamma)?;
    let windows = crate::data::make_windows(stream, t, stride)?;
    let has_labels = stream.has_labels();
    let scores: Vec<Result<AnomalyScore>> = windows
        .par_iter()
        .map(|w| score_window(model, weights, w, det.alpha, det.gamma))
        .collect();

    let mut state = ThresholdState::new(det.k, det.c)?.with_quarantine(det.quarantine);
    let mut trace = Vec::with_capacity(windows.len());
    for (w, scored) in windows.iter().zip(scores) {
        let score = scored?;
        let (flagged, theta) = state.update(score.total);
        trace.push(TracePoint {
            score,
            theta,
            flagged,
            label: has_labels.then_some(w.label),
        });
    }
    Ok(trace)
}

/// Write the trace as CSV: window_start, recon_term, disc_term,
/// latent_term, total, theta, flag, label (blank when unknown).
pub fn write_trace_csv(path: &Path, trace: &[TracePoint]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record([
        "window_start",
        "recon_term",
        "disc_term",
        "latent_term",
        "total",
        "theta",
        "flag",
        "label",
    ])?;
    for p in trace {
        writer.write_record(&[
            p.score.window_start.to_string(),
            format!("{}", p.score.recon_term),
            format!("{}", p.score.disc_term),
            format!("{}", p.score.latent_term),
            format!("{}", p.score.total),
            format!("{}", p.theta),
            if p.flagged { "1".into() } else { "0".into() },
            match p.label {
                Some(true) => "1".to_string(),
                Some(false) => "0".to_string(),
                None => String::new(),
            },
        ])?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TracePoint>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let mut out = Vec::new();
    for record in reader.records() {
        let r = record?;
        let get = |i: usize| -> Result<f64> {
            r.get(i)
                .unwrap_or_default()
                .parse()
                .map_err(|_| Error::Data(format!("{}: bad trace field {i}", path.display())))
        };
        let label = match r.get(7).unwrap_or_default() {
            "" => None,
            "0" => Some(false),
            "1" => Some(true),
            other => return Err(Error::Data(format!("bad trace label '{other}'"))),
        };
        out.push(TracePoint {
            score: AnomalyScore {
                window_start: get(0)? as usize,
                recon_term: get(1)?,
                disc_term: get(2)?,
                latent_term: get(3)?,
                total: get(4)?,
            },
            theta: get(5)?,
            flagged: r.get(6) == Some("1"),
            label,
        });
    }
    Ok(out)
}
