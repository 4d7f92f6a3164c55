//! Shared test utilities: independent oracles and toy model builders.
//! Everything here is deliberately written without touching the
//! implementation paths it checks.

#![allow(dead_code)]

pub mod grad;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tbigan::data::PmuWindow;
use tbigan::metrics::ScoredLabels;
use tbigan::model::{ModelConfig, PositionalMode, TBiGanModel};
use tbigan::tensor::Tensor;

/// Brute-force AUC: fraction of (positive, negative) pairs ranked
/// correctly, ½ credit for ties.
pub fn pairwise_auc(data: &ScoredLabels) -> f64 {
    let scores = data.scores();
    let labels = data.labels();
    let mut correct = 0.0;
    let mut pairs = 0.0;
    for (i, (&si, &li)) in scores.iter().zip(labels).enumerate() {
        if !li {
            continue;
        }
        for (j, (&sj, &lj)) in scores.iter().zip(labels).enumerate() {
            if i == j || lj {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                correct += 1.0;
            } else if si == sj {
                correct += 0.5;
            }
        }
    }
    correct / pairs
}

/// O(n²) average precision: recount precision from scratch at every
/// distinct descending threshold.
pub fn reference_ap(data: &ScoredLabels) -> f64 {
    let scores = data.scores();
    let labels = data.labels();
    let mut distinct: Vec<f64> = scores.to_vec();
    distinct.sort_by(|a, b| b.total_cmp(a));
    distinct.dedup();
    let total_pos = labels.iter().filter(|&&l| l).count() as f64;
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for &thr in &distinct {
        // full recount at this threshold: flagged = score ≥ thr
        let mut tp = 0.0;
        let mut flagged = 0.0;
        for (&s, &l) in scores.iter().zip(labels) {
            if s >= thr {
                flagged += 1.0;
                if l {
                    tp += 1.0;
                }
            }
        }
        let precision = tp / flagged;
        let recall = tp / total_pos;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

/// Exhaustive Youden sweep: best J over every candidate cut, ties toward
/// the higher threshold; returns (threshold, J).
pub fn exhaustive_youden(data: &ScoredLabels) -> (f64, f64) {
    let scores = data.scores();
    let labels = data.labels();
    let mut distinct: Vec<f64> = scores.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut candidates: Vec<f64> = distinct.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
    candidates.push(*distinct.last().unwrap());
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = labels.len() as f64 - pos;
    let mut best = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &thr in &candidates {
        let mut tp = 0.0;
        let mut fp = 0.0;
        for (&s, &l) in scores.iter().zip(labels) {
            if s > thr {
                if l {
                    tp += 1.0;
                } else {
                    fp += 1.0;
                }
            }
        }
        let j = tp / pos - fp / neg;
        if j >= best.0 {
            best = (j, thr);
        }
    }
    (best.1, best.0)
}

/// Random scored set with both classes present; `with_ties` quantizes the
/// scores so duplicates appear.
pub fn random_scored_labels(n: usize, with_ties: bool, rng: &mut ChaCha8Rng) -> ScoredLabels {
    loop {
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                let s: f64 = rng.gen();
                if with_ties {
                    (s * 8.0).round() / 8.0
                } else {
                    s
                }
            })
            .collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.gen::<f64>() < 0.4).collect();
        if labels.iter().any(|&l| l) && labels.iter().any(|&l| !l) {
            return ScoredLabels::new(scores, labels).unwrap();
        }
    }
}

/// Smallest configuration that exercises every mechanism.
pub fn toy_config() -> ModelConfig {
    ModelConfig {
        feature_dim: 6,
        window_len: 4,
        d_model: 8,
        d_latent: 4,
        num_blocks: 1,
        num_heads: 2,
        attn_window: 2,
        mlp_ratio: 2,
        dropout: 0.0,
        positional_mode: PositionalMode::SinusoidalFixed,
        spectral_norm: true,
        ln_eps: 1e-5,
    }
}

pub fn toy_model(seed: u64) -> TBiGanModel {
    TBiGanModel::new(toy_config(), seed).unwrap()
}

/// Add noise to every parameter so no zero-initialized block hides a
/// gradient path (fresh models have identity residual branches).
pub fn randomize_model(model: &mut TBiGanModel, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for ps in [
        &mut model.encoder.params,
        &mut model.generator.params,
        &mut model.discriminator.params,
    ] {
        for i in 0..ps.len() {
            let t = ps.tensor_mut_at(i);
            for v in t.data_mut() {
                *v += 0.2 * (rng.gen::<f64>() - 0.5);
            }
        }
    }
    model.discriminator.refresh_spectral(30);
}

pub fn random_window(cfg: &ModelConfig, seed: u64) -> PmuWindow {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PmuWindow {
        data: Tensor::randn(&[cfg.window_len, cfg.feature_dim], 1.0, &mut rng),
        start_index: 0,
        label: false,
    }
}
