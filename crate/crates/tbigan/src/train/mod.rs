//! Alternating adversarial training: one discriminator update on real
//! (x, E(x)) vs synthetic (G(z), z) pairs, then one encoder-generator
//! update on the combined objective, per batch.

mod adam;
mod losses;
mod search;

pub use adam::{clip_global_norm, AdamState, ADAM_EPS};
pub use losses::{
    bce_prob, discriminator_loss_from_probs, encoder_generator_loss_from_parts,
    game_inner_objective, gradient_penalty, latent_loss, reconstruction_loss,
};
pub use search::{
    hyperparam_search, write_trial_log, SearchCandidate, SearchEval, SearchSpace, TrialRecord,
};

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::PmuWindow;
use crate::detect::{score_window, FeatureWeights};
use crate::error::{Error, Result};
use crate::metrics::{pr_curve, ScoredLabels};
use crate::model::{Mode, ParamSet, TBiGanModel};
use crate::tensor::{Bound, GradTape, Tensor};

/// Optimization hyperparameters. `spectral_norm` mirrors the architectural
/// flag: run configs propagate it into [`crate::model::ModelConfig`] when
/// the model is built, and the loop itself reads the model's copy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lambda_rec")]
    pub lambda_rec: f64,
    #[serde(default = "default_lambda_z")]
    pub lambda_z: f64,
    /// Real-class target for the discriminator (1.0 disables smoothing).
    #[serde(default = "default_label_smooth")]
    pub label_smooth: f64,
    #[serde(default)]
    pub grad_penalty_weight: f64,
    #[serde(default = "default_true")]
    pub spectral_norm: bool,
    /// Add BCE(D(x,E(x)), 0) to the encoder-generator adversarial term.
    #[serde(default = "default_true")]
    pub symmetric_adversarial: bool,
    /// Discriminator updates per encoder-generator update.
    #[serde(default = "default_d_steps")]
    pub d_steps: usize,
    /// Global-norm gradient clip. Unset: 5.0 when spectral norm is off,
    /// none when on. Zero disables explicitly.
    #[serde(default)]
    pub clip_norm: Option<f64>,
    /// Early-stop patience (epochs without validation-AP improvement).
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_lr() -> f64 {
    3e-4
}
fn default_beta1() -> f64 {
    0.5
}
fn default_beta2() -> f64 {
    0.999
}
fn default_batch_size() -> usize {
    64
}
fn default_epochs() -> usize {
    50
}
fn default_lambda_rec() -> f64 {
    10.0
}
fn default_lambda_z() -> f64 {
    1.0
}
fn default_label_smooth() -> f64 {
    0.9
}
fn default_true() -> bool {
    true
}
fn default_d_steps() -> usize {
    1
}
fn default_patience() -> usize {
    10
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            batch_size: default_batch_size(),
            epochs: default_epochs(),
            lambda_rec: default_lambda_rec(),
            lambda_z: default_lambda_z(),
            label_smooth: default_label_smooth(),
            grad_penalty_weight: 0.0,
            spectral_norm: true,
            symmetric_adversarial: true,
            d_steps: default_d_steps(),
            clip_norm: None,
            patience: default_patience(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1e-5..=5e-4).contains(&self.lr) {
            return Err(Error::Config(format!(
                "lr {} outside the supported search range [1e-5, 5e-4]",
                self.lr
            )));
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0,1), got {v}")));
            }
        }
        if self.batch_size == 0 || self.d_steps == 0 {
            return Err(Error::Config("batch_size and d_steps must be ≥ 1".into()));
        }
        if !(0.0 < self.label_smooth && self.label_smooth <= 1.0) {
            return Err(Error::Config(format!(
                "label_smooth must lie in (0,1], got {}",
                self.label_smooth
            )));
        }
        if self.lambda_rec < 0.0 || self.lambda_z < 0.0 || self.grad_penalty_weight < 0.0 {
            return Err(Error::Config("loss weights must be ≥ 0".into()));
        }
        Ok(())
    }

    fn effective_clip(&self, spectral: bool) -> Option<f64> {
        match self.clip_norm {
            Some(v) if v > 0.0 => Some(v),
            Some(_) => None,
            None => (!spectral).then_some(5.0),
        }
    }
}

/// Per-epoch loss averages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub l_d: f64,
    /// Encoder-generator adversarial term.
    pub l_adv: f64,
    pub l_rec: f64,
    pub l_latent: f64,
    /// Combined encoder-generator objective.
    pub l_eg: f64,
}

/// Labeled windows plus scoring parameters for epoch-level validation.
pub struct ValidationSet {
    pub windows: Vec<PmuWindow>,
    pub weights: FeatureWeights,
    pub alpha: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub history: Vec<LossRecord>,
    /// Validation average precision per epoch (when validation given).
    pub val_ap: Vec<f64>,
    /// Epoch index after which patience ran out.
    pub stopped_early_at: Option<usize>,
}

/// splitmix64-style stream derivation for per-sample RNGs; deterministic
/// regardless of thread scheduling.
fn derive_seed(parts: &[u64]) -> u64 {
    let mut h = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        let mut z = h ^ p.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 30)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

fn zero_grads(params: &ParamSet) -> Vec<Vec<f64>> {
    (0..params.len())
        .map(|i| vec![0.0; params.tensor_at(i).numel()])
        .collect()
}

fn collect_grads(tape: &GradTape, leaves: &Bound, params: &ParamSet) -> Vec<Vec<f64>> {
    (0..params.len())
        .map(|i| {
            tape.leaf_grad(leaves.ids[i])
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; params.tensor_at(i).numel()])
        })
        .collect()
}

fn accumulate(into: &mut [Vec<f64>], from: &[Vec<f64>]) {
    for (a, f) in into.iter_mut().zip(from) {
        for (x, y) in a.iter_mut().zip(f) {
            *x += y;
        }
    }
}

struct DSampleOut {
    grads: Vec<Vec<f64>>,
    loss: f64,
}

#[allow(clippy::too_many_arguments)]
fn d_step(
    model: &mut TBiGanModel,
    windows: &[PmuWindow],
    batch: &[usize],
    cfg: &TrainConfig,
    adam: &mut AdamState,
    zs: &[Tensor],
    eps_draws: &[f64],
    stamp: (usize, usize, usize),
) -> Result<f64> {
    let spectral = model.config.spectral_norm;
    if spectral {
        model.discriminator.refresh_spectral(1);
    }
    let mcfg = model.config.clone();
    let scale = 1.0 / batch.len() as f64;
    let enc = &model.encoder;
    let gen = &model.generator;
    let disc = &model.discriminator;

    let results: Vec<Result<DSampleOut>> = batch
        .par_iter()
        .enumerate()
        .map(|(si, &wi)| {
            let mut tape = GradTape::new();
            let eb = enc.params.bind(&mut tape, false);
            let gb = gen.params.bind(&mut tape, false);
            let (db, d_leaves) = disc.bind_with_leaves(&mut tape, true, spectral)?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[
                cfg.seed,
                stamp.0 as u64,
                stamp.1 as u64,
                stamp.2 as u64,
                si as u64,
                0xD,
            ]));
            let x = tape.constant(windows[wi].data.clone());
            let e = enc.forward(&mut tape, &eb, x, &mcfg, Mode::Train, &mut rng)?;
            let z = tape.constant(zs[si].clone());
            let xf = gen.forward(&mut tape, &gb, z, &mcfg, Mode::Train, &mut rng)?;
            let logit_real = disc.forward_logit(&mut tape, &db, x, e, &mcfg, Mode::Train, &mut rng)?;
            let logit_fake = disc.forward_logit(&mut tape, &db, xf, z, &mcfg, Mode::Train, &mut rng)?;
            let bce_real = tape.bce_with_logit(logit_real, cfg.label_smooth)?;
            let bce_fake = tape.bce_with_logit(logit_fake, 0.0)?;
            let mut loss = tape.add(bce_real, bce_fake)?;
            if cfg.grad_penalty_weight > 0.0 {
                let e_val = tape.value(e).clone();
                let xf_val = tape.value(xf).clone();
                let gp = gradient_penalty(
                    &mut tape,
                    |tape, xi, zi| {
                        disc.forward_logit(tape, &db, xi, zi, &mcfg, Mode::Train, &mut rng)
                    },
                    &windows[wi].data,
                    &e_val,
                    &xf_val,
                    &zs[si],
                    eps_draws[si],
                )?;
                let gpw = tape.scale(gp, cfg.grad_penalty_weight)?;
                loss = tape.add(loss, gpw)?;
            }
            let scaled = tape.scale(loss, scale)?;
            tape.backward(scaled)?;
            Ok(DSampleOut {
                grads: collect_grads(&tape, &d_leaves, &disc.params),
                loss: tape.value(loss).item(),
            })
        })
        .collect();

    let mut grads = zero_grads(&model.discriminator.params);
    let mut loss_sum = 0.0;
    for r in results {
        let out = r?;
        accumulate(&mut grads, &out.grads);
        loss_sum += out.loss;
    }
    if let Some(max) = cfg.effective_clip(spectral) {
        clip_global_norm(&mut grads, max);
    }
    adam.step(
        &mut model.discriminator.params,
        &grads,
        cfg.lr,
        cfg.beta1,
        cfg.beta2,
    )?;
    Ok(loss_sum / batch.len() as f64)
}

struct EgSampleOut {
    e_grads: Vec<Vec<f64>>,
    g_grads: Vec<Vec<f64>>,
    adv: f64,
    rec: f64,
    lat: f64,
}

#[allow(clippy::too_many_arguments)]
fn eg_step(
    model: &mut TBiGanModel,
    windows: &[PmuWindow],
    batch: &[usize],
    cfg: &TrainConfig,
    adam_e: &mut AdamState,
    adam_g: &mut AdamState,
    zs: &[Tensor],
    stamp: (usize, usize),
) -> Result<(f64, f64, f64, f64)> {
    let spectral = model.config.spectral_norm;
    let mcfg = model.config.clone();
    let scale = 1.0 / batch.len() as f64;
    let enc = &model.encoder;
    let gen = &model.generator;
    let disc = &model.discriminator;

    let results: Vec<Result<EgSampleOut>> = batch
        .par_iter()
        .enumerate()
        .map(|(si, &wi)| {
            let mut tape = GradTape::new();
            let eb = enc.params.bind(&mut tape, true);
            let gb = gen.params.bind(&mut tape, true);
            let (db, _) = disc.bind_with_leaves(&mut tape, false, spectral)?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[
                cfg.seed,
                stamp.0 as u64,
                stamp.1 as u64,
                si as u64,
                0xE6,
            ]));
            let x = tape.constant(windows[wi].data.clone());
            let z_e = enc.forward(&mut tape, &eb, x, &mcfg, Mode::Train, &mut rng)?;
            let xhat = gen.forward(&mut tape, &gb, z_e, &mcfg, Mode::Train, &mut rng)?;
            let z_cycle = enc.forward(&mut tape, &eb, xhat, &mcfg, Mode::Train, &mut rng)?;
            let l_rec = tape.mae(x, xhat)?;
            let l_lat = {
                let d = tape.sub(z_cycle, z_e)?;
                tape.sum_squares(d)?
            };
            let z_prior = tape.constant(zs[si].clone());
            let x_from_prior = gen.forward(&mut tape, &gb, z_prior, &mcfg, Mode::Train, &mut rng)?;
            let logit_fake =
                disc.forward_logit(&mut tape, &db, x_from_prior, z_prior, &mcfg, Mode::Train, &mut rng)?;
            let mut l_adv = tape.bce_with_logit(logit_fake, 1.0)?;
            if cfg.symmetric_adversarial {
                let logit_real =
                    disc.forward_logit(&mut tape, &db, x, z_e, &mcfg, Mode::Train, &mut rng)?;
                let real_term = tape.bce_with_logit(logit_real, 0.0)?;
                l_adv = tape.add(l_adv, real_term)?;
            }
            let weighted_rec = tape.scale(l_rec, cfg.lambda_rec)?;
            let weighted_lat = tape.scale(l_lat, cfg.lambda_z)?;
            let partial = tape.add(l_adv, weighted_rec)?;
            let loss = tape.add(partial, weighted_lat)?;
            let scaled = tape.scale(loss, scale)?;
            tape.backward(scaled)?;
            Ok(EgSampleOut {
                e_grads: collect_grads(&tape, &eb, &enc.params),
                g_grads: collect_grads(&tape, &gb, &gen.params),
                adv: tape.value(l_adv).item(),
                rec: tape.value(l_rec).item(),
                lat: tape.value(l_lat).item(),
            })
        })
        .collect();

    let mut e_grads = zero_grads(&model.encoder.params);
    let mut g_grads = zero_grads(&model.generator.params);
    let (mut adv, mut rec, mut lat) = (0.0, 0.0, 0.0);
    for r in results {
        let out = r?;
        accumulate(&mut e_grads, &out.e_grads);
        accumulate(&mut g_grads, &out.g_grads);
        adv += out.adv;
        rec += out.rec;
        lat += out.lat;
    }
    let n = batch.len() as f64;
    adv /= n;
    rec /= n;
    lat /= n;

    if let Some(max) = cfg.effective_clip(spectral) {
        // one global norm across encoder and generator
        let norm = e_grads
            .iter()
            .chain(g_grads.iter())
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        if norm > max && norm > 0.0 {
            let s = max / norm;
            for g in e_grads.iter_mut().chain(g_grads.iter_mut()) {
                for v in g.iter_mut() {
                    *v *= s;
                }
            }
        }
    }
    adam_e.step(&mut model.encoder.params, &e_grads, cfg.lr, cfg.beta1, cfg.beta2)?;
    adam_g.step(&mut model.generator.params, &g_grads, cfg.lr, cfg.beta1, cfg.beta2)?;
    let l_eg = adv + cfg.lambda_rec * rec + cfg.lambda_z * lat;
    Ok((adv, rec, lat, l_eg))
}

fn validation_ap(model: &TBiGanModel, val: &ValidationSet) -> Result<f64> {
    let scores: Vec<Result<f64>> = val
        .windows
        .par_iter()
        .map(|w| score_window(model, &val.weights, w, val.alpha, val.gamma).map(|s| s.total))
        .collect();
    let mut totals = Vec::with_capacity(scores.len());
    for s in scores {
        totals.push(s?);
    }
    let labels = val.windows.iter().map(|w| w.label).collect();
    Ok(pr_curve(&ScoredLabels::new(totals, labels)?)?.ap)
}

/// Train in place. Deterministic given (seed, data, config): identical
/// inputs reproduce bit-identical parameters and loss histories.
pub fn train(
    model: &mut TBiGanModel,
    windows: &[PmuWindow],
    cfg: &TrainConfig,
    validation: Option<&ValidationSet>,
) -> Result<TrainReport> {
    cfg.validate()?;
    let mut report = TrainReport::default();
    if cfg.epochs == 0 {
        return Ok(report);
    }
    if windows.is_empty() {
        return Err(Error::Data("no training windows".into()));
    }
    if let Some(val) = validation {
        if !val.windows.iter().any(|w| w.label) {
            return Err(Error::Data(
                "validation set has no positive windows; AP undefined".into(),
            ));
        }
    }
    let d_z = model.config.d_latent;
    let mut epoch_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam_e = AdamState::new(&model.encoder.params);
    let mut adam_g = AdamState::new(&model.generator.params);
    let mut adam_d = AdamState::new(&model.discriminator.params);
    let mut best_ap = f64::NEG_INFINITY;
    let mut patience_left = cfg.patience;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..windows.len()).collect();
        order.shuffle(&mut epoch_rng);
        let (mut s_d, mut s_adv, mut s_rec, mut s_lat, mut s_eg) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let mut batches = 0usize;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut l_d = 0.0;
            for d_round in 0..cfg.d_steps {
                let zs: Vec<Tensor> = batch
                    .iter()
                    .map(|_| Tensor::randn(&[d_z], 1.0, &mut epoch_rng))
                    .collect();
                let eps: Vec<f64> = batch.iter().map(|_| epoch_rng.gen::<f64>()).collect();
                l_d = d_step(
                    model,
                    windows,
                    batch,
                    cfg,
                    &mut adam_d,
                    &zs,
                    &eps,
                    (epoch, batch_idx, d_round),
                )?;
            }
            let zs: Vec<Tensor> = batch
                .iter()
                .map(|_| Tensor::randn(&[d_z], 1.0, &mut epoch_rng))
                .collect();
            let (l_adv, l_rec, l_lat, l_eg) = eg_step(
                model,
                windows,
                batch,
                cfg,
                &mut adam_e,
                &mut adam_g,
                &zs,
                (epoch, batch_idx),
            )?;
            if ![l_d, l_adv, l_rec, l_lat, l_eg].iter().all(|v| v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "loss diverged at epoch {epoch}, batch {batch_idx}: \
                     L_D={l_d} L_adv={l_adv} L_rec={l_rec} L_latent={l_lat} L_EG={l_eg}"
                )));
            }
            s_d += l_d;
            s_adv += l_adv;
            s_rec += l_rec;
            s_lat += l_lat;
            s_eg += l_eg;
            batches += 1;
        }
        let n = batches as f64;
        report.history.push(LossRecord {
            epoch,
            l_d: s_d / n,
            l_adv: s_adv / n,
            l_rec: s_rec / n,
            l_latent: s_lat / n,
            l_eg: s_eg / n,
        });

        if let Some(val) = validation {
            let ap = validation_ap(model, val)?;
            report.val_ap.push(ap);
            if ap > best_ap {
                best_ap = ap;
                patience_left = cfg.patience;
            } else {
                patience_left = patience_left.saturating_sub(1);
                if patience_left == 0 {
                    report.stopped_early_at = Some(epoch);
                    break;
                }
            }
        }
    }
    Ok(report)
}

/// Loss-history CSV: epoch, L_D, L_adv, L_rec, L_latent, L_EG.
pub fn write_loss_history_csv(path: &Path, history: &[LossRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["epoch", "L_D", "L_adv", "L_rec", "L_latent", "L_EG"])?;
    for r in history {
        writer.write_record(&[
            r.epoch.to_string(),
            format!("{}", r.l_d),
            format!("{}", r.l_adv),
            format!("{}", r.l_rec),
            format!("{}", r.l_latent),
            format!("{}", r.l_eg),
        ])?;
    }
    writer.flush()?;
    Ok(())
}
