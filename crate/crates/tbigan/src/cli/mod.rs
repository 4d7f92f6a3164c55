//! Command implementations behind the `tbigan` binary: synthesize data,
//! train, score streams, evaluate traces, and run hyperparameter search.

mod runconfig;

pub use runconfig::{
    DataPaths, DetectSettings, EvalMode, EvalSettings, RunConfig, SearchSettings,
};

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::data::{
    fit_preprocess, impute_missing, make_windows, preprocess_stream, read_stream_csv,
    synth_test_stream, synth_train_stream, write_stream_csv, PmuStream,
    PreprocessStats, SynthConfig,
};
use crate::detect::{
    fit_weights, score_stream, write_trace_csv, DetectorConfig, FeatureWeights, TracePoint,
};
use crate::error::{Error, Result};
use crate::metrics::{
    confusion_at, pr_curve, roc_curve, youden_threshold, ConfusionMatrix, ScoredLabels,
};
use crate::model::TBiGanModel;
use crate::train::{
    hyperparam_search, train, write_loss_history_csv, write_trial_log, SearchCandidate,
    SearchEval, TrainConfig, ValidationSet,
};

/// Resolve the run directory: an explicit `--out` is used as-is, otherwise
/// a config-hash + timestamp directory is created under `runs/`.
fn run_dir(explicit: Option<&Path>, tag: &str, config_hash: &str) -> Result<PathBuf> {
    let dir = match explicit {
        Some(p) => p.to_path_buf(),
        None => {
            let stamp = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            PathBuf::from("runs").join(format!("{tag}-{config_hash}-{stamp}"))
        }
    };
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn require_path<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Config(format!("missing data path: {what}")))
}

/// `synth`: write train/test CSV streams from a generator config.
pub fn cmd_synth(config_path: &Path, out: Option<&Path>, seed: u64) -> Result<PathBuf> {
    let cfg = SynthConfig::load(config_path)?;
    let hash = {
        use sha2::{Digest, Sha256};
        let d = Sha256::digest(std::fs::read(config_path)?);
        d[..4].iter().map(|b| format!("{b:02x}")).collect::<String>()
    };
    let dir = run_dir(out, "synth", &hash)?;
    let names = cfg.feature_names();

    let train = synth_train_stream(&cfg, seed)?;
    let test = synth_test_stream(&cfg, seed)?;
    write_stream_csv(&dir.join("train.csv"), &train, Some(&names))?;
    write_stream_csv(&dir.join("test.csv"), &test, Some(&names))?;

    println!(
        "synth: {} features, train {} frames, test {} frames @ {} Hz",
        cfg.n_features(),
        train.n_frames(),
        test.n_frames(),
        cfg.rate_hz
    );
    println!("anomaly segments: {}", cfg.segments.len());
    for seg in &cfg.segments {
        println!("  [{:.2}s, {:.2}s) {}", seg.start_s, seg.end_s, seg.kind.name());
    }
    println!("wrote {}", dir.display());
    Ok(dir)
}

/// Artifact names inside a training run directory.
pub const STATS_FILE: &str = "preprocess_stats.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const WEIGHTS_FILE: &str = "feature_weights.json";
pub const LOSS_FILE: &str = "loss_history.csv";
pub const RUNCONFIG_FILE: &str = "run_config.toml";
pub const TRACE_FILE: &str = "trace.csv";

/// `train`: fit preprocessing, train the model, persist all artifacts.
pub fn cmd_train(
    config_path: &Path,
    out: Option<&Path>,
    seed: Option<u64>,
) -> Result<PathBuf> {
    let mut cfg = RunConfig::load(config_path)?;
    cfg.resolve(seed, out.map(Path::to_path_buf));
    let dir = run_dir(cfg.out_dir.as_deref(), "train", &cfg.hash8())?;

    let train_path = require_path(&cfg.data.train_csv, "data.train_csv")?;
    let raw = read_stream_csv(train_path)?;
    let stats = fit_preprocess(&raw, "train")?;
    stats.save(&dir.join(STATS_FILE))?;

    let clean = preprocess_stream(&impute_missing(&raw, &stats)?, &stats)?;
    let mut model_cfg = cfg.model.clone();
    model_cfg.feature_dim = clean.n_features();
    model_cfg.validate()?;
    let windows = make_windows(&clean, model_cfg.window_len, cfg.effective_train_stride())?;
    if windows.is_empty() {
        return Err(Error::Data("training stream yields no windows".into()));
    }

    let weights = fit_weights(&windows)?;
    weights.save(&dir.join(WEIGHTS_FILE))?;

    let validation = match &cfg.data.val_csv {
        Some(path) => {
            let raw_val = read_stream_csv(path)?;
            if !raw_val.has_labels() {
                return Err(Error::Data(format!(
                    "{}: validation stream needs a label column",
                    path.display()
                )));
            }
            let clean_val = preprocess_stream(&impute_missing(&raw_val, &stats)?, &stats)?;
            let val_windows = make_windows(&clean_val, model_cfg.window_len, 1)?;
            Some(ValidationSet {
                windows: val_windows,
                weights: weights.clone(),
                alpha: cfg.detect.alpha,
                gamma: cfg.detect.gamma,
            })
        }
        None => None,
    };

    let mut model = TBiGanModel::new(model_cfg, cfg.seed)?;
    let report = match train(&mut model, &windows, &cfg.train, validation.as_ref()) {
        Ok(r) => r,
        Err(e @ Error::Numerical(_)) => {
            let diag = serde_json::json!({
                "error": e.to_string(),
                "seed": cfg.seed,
            });
            std::fs::write(
                dir.join("train_diagnostics.json"),
                serde_json::to_string_pretty(&diag)?,
            )?;
            return Err(e);
        }
        Err(e) => return Err(e),
    };

    write_loss_history_csv(&dir.join(LOSS_FILE), &report.history)?;
    model.save(&dir.join(CHECKPOINT_FILE), Some(STATS_FILE))?;
    cfg.save(&dir.join(RUNCONFIG_FILE))?;

    if let Some(last) = report.history.last() {
        println!(
            "trained {} epochs: L_D={:.4} L_rec={:.4} L_EG={:.4}",
            report.history.len(),
            last.l_d,
            last.l_rec,
            last.l_eg
        );
    } else {
        println!("trained 0 epochs (checkpoint equals initialization)");
    }
    if let Some(at) = report.stopped_early_at {
        println!("early stop after epoch {at} (validation AP patience)");
    }
    println!("wrote {}", dir.display());
    Ok(dir)
}

fn load_model_artifacts(
    cfg: &RunConfig,
) -> Result<(TBiGanModel, PreprocessStats, FeatureWeights)> {
    let ckpt_path = require_path(&cfg.data.checkpoint, "data.checkpoint")?;
    let (model, stats_ref) = TBiGanModel::load(ckpt_path)?;
    let ckpt_dir = ckpt_path.parent().unwrap_or(Path::new("."));
    let stats_path = match &cfg.data.stats {
        Some(p) => p.clone(),
        None => ckpt_dir.join(stats_ref.as_deref().unwrap_or(STATS_FILE)),
    };
    let stats = PreprocessStats::load(&stats_path)?;
    let weights_path = match &cfg.data.weights {
        Some(p) => p.clone(),
        None => ckpt_dir.join(WEIGHTS_FILE),
    };
    let weights = FeatureWeights::load(&weights_path)?;
    Ok((model, stats, weights))
}

/// `score`: stream a CSV through the frozen model, emit the trace.
pub fn cmd_score(config_path: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<PathBuf> {
    let mut cfg = RunConfig::load(config_path)?;
    cfg.resolve(seed, out.map(Path::to_path_buf));
    let dir = run_dir(cfg.out_dir.as_deref(), "score", &cfg.hash8())?;

    let (model, stats, weights) = load_model_artifacts(&cfg)?;
    let stream_path = require_path(&cfg.data.stream_csv, "data.stream_csv")?;
    let raw = read_stream_csv(stream_path)?;
    if raw.n_features() != stats.n_features() {
        return Err(Error::Data(format!(
            "{}: stream has {} features but the checkpointed stats expect {}",
            stream_path.display(),
            raw.n_features(),
            stats.n_features()
        )));
    }
    let clean = preprocess_stream(&impute_missing(&raw, &stats)?, &stats)?;

    let det = DetectorConfig {
        alpha: cfg.detect.alpha,
        gamma: cfg.detect.gamma,
        k: cfg.detect.k,
        c: cfg.detect.c,
        quarantine: cfg.detect.quarantine,
    };
    let trace = score_stream(
        &model,
        &weights,
        &clean,
        model.config.window_len,
        cfg.detect.stride,
        &det,
    )?;
    write_trace_csv(&dir.join(TRACE_FILE), &trace)?;

    let flags = trace.iter().filter(|p| p.flagged).count();
    let finite_thetas: Vec<f64> = trace
        .iter()
        .map(|p| p.theta)
        .filter(|t| t.is_finite())
        .collect();
    let theta_summary = if finite_thetas.is_empty() {
        "all warm-up".to_string()
    } else {
        let min = finite_thetas.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = finite_thetas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        format!("theta in [{min:.4}, {max:.4}]")
    };
    println!(
        "scored {} windows: {} flagged, {}",
        trace.len(),
        flags,
        theta_summary
    );
    println!("wrote {}", dir.display());
    Ok(dir)
}

/// Evaluation report for one level (window or frame).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub level: String,
    pub auc: f64,
    pub ap: f64,
    pub f1: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub threshold: f64,
    pub confusion: ConfusionMatrix,
}

fn labeled_scores_from_trace(trace: &[TracePoint]) -> Result<ScoredLabels> {
    let mut scores = Vec::with_capacity(trace.len());
    let mut labels = Vec::with_capacity(trace.len());
    for p in trace {
        let label = p.label.ok_or_else(|| {
            Error::Data("trace has unlabeled rows; evaluation needs labeled data".into())
        })?;
        scores.push(p.score.total);
        labels.push(label);
    }
    ScoredLabels::new(scores, labels)
}

/// Youden threshold on the leading validation slice, applied unchanged to
/// the rest; curves and the report come from the test slice.
fn evaluate_level(
    data: &ScoredLabels,
    val_frac: f64,
    level: &str,
    dir: &Path,
) -> Result<EvalReport> {
    if !(0.0 < val_frac && val_frac < 1.0) {
        return Err(Error::Config(format!(
            "val_frac must lie strictly inside (0,1), got {val_frac}"
        )));
    }
    let n = data.len();
    let n_val = ((n as f64 * val_frac).round() as usize).clamp(1, n - 1);
    let val = data.slice(0, n_val)?;
    let test = data.slice(n_val, n)?;

    let threshold = youden_threshold(&val).map_err(|e| {
        Error::Data(format!("validation slice (first {n_val} rows): {e}"))
    })?;
    let roc = roc_curve(&test).map_err(|e| Error::Data(format!("test slice: {e}")))?;
    let pr = pr_curve(&test)?;
    let confusion = confusion_at(&test, threshold);

    let mut w = csv::Writer::from_path(dir.join(format!("roc_{level}.csv")))?;
    w.write_record(["fpr", "tpr"])?;
    for (fpr, tpr) in &roc.points {
        w.write_record(&[format!("{fpr}"), format!("{tpr}")])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join(format!("pr_{level}.csv")))?;
    w.write_record(["recall", "precision"])?;
    for (r, p) in &pr.points {
        w.write_record(&[format!("{r}"), format!("{p}")])?;
    }
    w.flush()?;

    let report = EvalReport {
        level: level.to_string(),
        auc: roc.auc,
        ap: pr.ap,
        f1: confusion.f1(),
        precision: confusion.precision(),
        recall: confusion.recall(),
        threshold,
        confusion,
    };
    std::fs::write(
        dir.join(format!("report_{level}.json")),
        serde_json::to_string_pretty(&report)?,
    )?;
    Ok(report)
}

/// Frame-level scores: each frame takes the score of the most recent
/// stride-1 window covering it; labels come from the stream.
fn frame_level_scores(trace: &[TracePoint], stream: &PmuStream) -> Result<ScoredLabels> {
    if trace.is_empty() {
        return Err(Error::Data("empty trace".into()));
    }
    for pair in trace.windows(2) {
        if pair[1].score.window_start != pair[0].score.window_start + 1 {
            return Err(Error::Data(
                "frame-level evaluation needs a stride-1 trace (consecutive window starts)".into(),
            ));
        }
    }
    if !stream.has_labels() {
        return Err(Error::Data("stream has no label column for frame-level evaluation".into()));
    }
    let first = trace[0].score.window_start;
    let last = trace[trace.len() - 1].score.window_start;
    let n_frames = stream.n_frames();
    let mut scores = Vec::with_capacity(n_frames);
    let mut labels = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let start = t.clamp(first, last);
        scores.push(trace[start - first].score.total);
        labels.push(stream.label(t));
    }
    ScoredLabels::new(scores, labels)
}

/// `evaluate`: metrics and curves from a labeled trace, window level and
/// optionally frame level.
pub fn cmd_evaluate(
    config_path: &Path,
    out: Option<&Path>,
    trace_override: Option<&Path>,
) -> Result<PathBuf> {
    let mut cfg = RunConfig::load(config_path)?;
    cfg.resolve(None, out.map(Path::to_path_buf));
    let dir = run_dir(cfg.out_dir.as_deref(), "evaluate", &cfg.hash8())?;

    let trace_path = match trace_override {
        Some(p) => p.to_path_buf(),
        None => require_path(&cfg.data.trace_csv, "data.trace_csv")?.to_path_buf(),
    };
    let trace = crate::detect::read_trace_csv(&trace_path)?;
    let window_data = labeled_scores_from_trace(&trace)?;

    let mut reports = Vec::new();
    if matches!(cfg.eval.mode, EvalMode::Window | EvalMode::Both) {
        let r = evaluate_level(&window_data, cfg.eval.val_frac, "window", &dir)?;
        println!(
            "window level: auc={:.4} ap={:.4} threshold={:.6}",
            r.auc, r.ap, r.threshold
        );
        reports.push(r);
    }
    if matches!(cfg.eval.mode, EvalMode::Frame | EvalMode::Both) {
        let stream_path = require_path(&cfg.data.stream_csv, "data.stream_csv (frame labels)")?;
        let stream = read_stream_csv(stream_path)?;
        let frame_data = frame_level_scores(&trace, &stream)?;
        let r = evaluate_level(&frame_data, cfg.eval.val_frac, "frame", &dir)?;
        println!(
            "frame level:  auc={:.4} ap={:.4} threshold={:.6}",
            r.auc, r.ap, r.threshold
        );
        reports.push(r);
    }
    if reports.is_empty() {
        return Err(Error::Config("eval.mode produced no reports".into()));
    }
    println!("wrote {}", dir.display());
    Ok(dir)
}

/// `search`: random hyperparameter search over the configured space,
/// selecting by validation AP with ROC-AUC tie-break.
pub fn cmd_search(config_path: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<PathBuf> {
    let mut cfg = RunConfig::load(config_path)?;
    cfg.resolve(seed, out.map(Path::to_path_buf));
    let dir = run_dir(cfg.out_dir.as_deref(), "search", &cfg.hash8())?;

    let train_path = require_path(&cfg.data.train_csv, "data.train_csv")?;
    let val_path = require_path(&cfg.data.val_csv, "data.val_csv")?;
    let raw_train = read_stream_csv(train_path)?;
    let raw_val = read_stream_csv(val_path)?;
    if !raw_val.has_labels() {
        return Err(Error::Data("validation stream needs labels".into()));
    }
    let stats = fit_preprocess(&raw_train, "train")?;
    let clean_train = preprocess_stream(&impute_missing(&raw_train, &stats)?, &stats)?;
    let clean_val = preprocess_stream(&impute_missing(&raw_val, &stats)?, &stats)?;

    let mut model_cfg = cfg.model.clone();
    model_cfg.feature_dim = clean_train.n_features();
    let train_windows = make_windows(&clean_train, model_cfg.window_len, cfg.effective_train_stride())?;
    let val_windows = make_windows(&clean_val, model_cfg.window_len, 1)?;
    let weights = fit_weights(&train_windows)?;

    let gamma = cfg.detect.gamma;
    let epochs = cfg.search.epochs;
    let base_train = cfg.train.clone();
    let evaluator = |cand: &SearchCandidate, trial_seed: u64| -> Result<SearchEval> {
        let mut mc = model_cfg.clone();
        mc.dropout = cand.dropout;
        mc.spectral_norm = cand.spectral_norm;
        let tc = TrainConfig {
            lr: cand.lr,
            lambda_rec: cand.lambda_rec,
            lambda_z: cand.lambda_z,
            label_smooth: cand.label_smooth,
            grad_penalty_weight: cand.grad_penalty,
            spectral_norm: cand.spectral_norm,
            epochs,
            seed: trial_seed,
            ..base_train.clone()
        };
        let mut model = TBiGanModel::new(mc, trial_seed)?;
        let report = train(&mut model, &train_windows, &tc, None)?;
        let mut scores = Vec::with_capacity(val_windows.len());
        let mut labels = Vec::with_capacity(val_windows.len());
        for w in &val_windows {
            scores.push(
                crate::detect::score_window(&model, &weights, w, cand.alpha, gamma)?.total,
            );
            labels.push(w.label);
        }
        let data = ScoredLabels::new(scores, labels)?;
        Ok(SearchEval {
            ap: pr_curve(&data)?.ap,
            auc: roc_curve(&data)?.auc,
            epochs_run: report.history.len(),
        })
    };

    let (best, log) = hyperparam_search(
        &cfg.search.space,
        cfg.search.settings,
        cfg.search.trials,
        cfg.seed,
        evaluator,
    )?;
    write_trial_log(&dir.join("trial_log.csv"), &log)?;

    let mut best_cfg = cfg.clone();
    best_cfg.train.lr = best.lr;
    best_cfg.train.lambda_rec = best.lambda_rec;
    best_cfg.train.lambda_z = best.lambda_z;
    best_cfg.train.label_smooth = best.label_smooth;
    best_cfg.train.grad_penalty_weight = best.grad_penalty;
    best_cfg.train.spectral_norm = best.spectral_norm;
    best_cfg.model.dropout = best.dropout;
    best_cfg.model.spectral_norm = best.spectral_norm;
    best_cfg.detect.alpha = best.alpha;
    best_cfg.save(&dir.join("best_config.toml"))?;

    println!(
        "search: {} settings × {} trials; best lr={:.2e} λ_rec={} λ_z={} α={} smooth={} sn={} gp={}",
        cfg.search.settings,
        cfg.search.trials,
        best.lr,
        best.lambda_rec,
        best.lambda_z,
        best.alpha,
        best.label_smooth,
        best.spectral_norm,
        best.grad_penalty
    );
    println!("wrote {}", dir.display());
    Ok(dir)
}
