//! Random hyperparameter search: sample settings uniformly, run several
//! trials per setting, select by mean validation AP with ROC-AUC as the
//! tie-breaker.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grids and ranges to sample from. `lr` is drawn log-uniformly from its
/// range; everything else uniformly from its grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub lr: (f64, f64),
    pub dropout: Vec<f64>,
    pub lambda_rec: Vec<f64>,
    pub lambda_z: Vec<f64>,
    pub alpha: Vec<f64>,
    pub label_smooth: Vec<f64>,
    pub spectral_norm: Vec<bool>,
    pub grad_penalty: Vec<f64>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            lr: (1e-5, 5e-4),
            dropout: vec![0.0, 0.1, 0.2],
            lambda_rec: vec![1.0, 5.0, 10.0, 25.0],
            lambda_z: vec![0.0, 0.5, 1.0, 2.0],
            alpha: vec![0.4, 0.6, 0.8],
            label_smooth: vec![1.0, 0.9],
            spectral_norm: vec![false, true],
            grad_penalty: vec![0.0, 10.0],
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.0 > 0.0 && self.lr.0 <= self.lr.1) {
            return Err(Error::Config(format!(
                "lr range ({}, {}) must satisfy 0 < lo ≤ hi",
                self.lr.0, self.lr.1
            )));
        }
        for (name, empty) in [
            ("dropout", self.dropout.is_empty()),
            ("lambda_rec", self.lambda_rec.is_empty()),
            ("lambda_z", self.lambda_z.is_empty()),
            ("alpha", self.alpha.is_empty()),
            ("label_smooth", self.label_smooth.is_empty()),
            ("spectral_norm", self.spectral_norm.is_empty()),
            ("grad_penalty", self.grad_penalty.is_empty()),
        ] {
            if empty {
                return Err(Error::Config(format!("search grid '{name}' is empty")));
            }
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> SearchCandidate {
        let pick = |grid: &[f64], rng: &mut ChaCha8Rng| grid[rng.gen_range(0..grid.len())];
        let lr = if self.lr.0 == self.lr.1 {
            self.lr.0
        } else {
            let (lo, hi) = (self.lr.0.ln(), self.lr.1.ln());
            (lo + (hi - lo) * rng.gen::<f64>()).exp()
        };
        SearchCandidate {
            lr,
            dropout: pick(&self.dropout, rng),
            lambda_rec: pick(&self.lambda_rec, rng),
            lambda_z: pick(&self.lambda_z, rng),
            alpha: pick(&self.alpha, rng),
            label_smooth: pick(&self.label_smooth, rng),
            spectral_norm: self.spectral_norm[rng.gen_range(0..self.spectral_norm.len())],
            grad_penalty: pick(&self.grad_penalty, rng),
        }
    }
}

/// One sampled hyperparameter setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchCandidate {
    pub lr: f64,
    pub dropout: f64,
    pub lambda_rec: f64,
    pub lambda_z: f64,
    pub alpha: f64,
    pub label_smooth: f64,
    pub spectral_norm: bool,
    pub grad_penalty: f64,
}

/// Result of one evaluation (train + validate) of a candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchEval {
    pub ap: f64,
    pub auc: f64,
    pub epochs_run: usize,
}

/// One row of the persisted trial log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub setting: usize,
    pub trial: usize,
    pub candidate: SearchCandidate,
    pub ap: f64,
    pub auc: f64,
    pub epochs_run: usize,
    pub wall_s: f64,
}

/// Sample `n_settings` candidates, evaluate each with
/// `trials_per_setting` seeds, and return the argmax by mean AP (mean
/// ROC-AUC breaks exact ties) together with the full trial log.
pub fn hyperparam_search<F>(
    space: &SearchSpace,
    n_settings: usize,
    trials_per_setting: usize,
    seed: u64,
    mut eval: F,
) -> Result<(SearchCandidate, Vec<TrialRecord>)>
where
    F: FnMut(&SearchCandidate, u64) -> Result<SearchEval>,
{
    space.validate()?;
    if n_settings == 0 || trials_per_setting == 0 {
        return Err(Error::Config(
            "search needs at least one setting and one trial per setting".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = Vec::with_capacity(n_settings * trials_per_setting);
    let mut best: Option<(f64, f64, SearchCandidate)> = None;
    for setting in 0..n_settings {
        let candidate = space.sample(&mut rng);
        let mut ap_sum = 0.0;
        let mut auc_sum = 0.0;
        for trial in 0..trials_per_setting {
            let trial_seed = seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add((setting * trials_per_setting + trial) as u64);
            let started = std::time::Instant::now();
            let eval_out = eval(&candidate, trial_seed)?;
            ap_sum += eval_out.ap;
            auc_sum += eval_out.auc;
            log.push(TrialRecord {
                setting,
                trial,
                candidate: candidate.clone(),
                ap: eval_out.ap,
                auc: eval_out.auc,
                epochs_run: eval_out.epochs_run,
                wall_s: started.elapsed().as_secs_f64(),
            });
        }
        let mean_ap = ap_sum / trials_per_setting as f64;
        let mean_auc = auc_sum / trials_per_setting as f64;
        let better = match &best {
            None => true,
            Some((ap, auc, _)) => mean_ap > *ap || (mean_ap == *ap && mean_auc > *auc),
        };
        if better {
            best = Some((mean_ap, mean_auc, candidate));
        }
    }
    Ok((best.expect("n_settings ≥ 1").2, log))
}

/// Trial log CSV: one row per trial with all sampled hyperparameters.
pub fn write_trial_log(path: &Path, log: &[TrialRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record([
        "setting",
        "trial",
        "lr",
        "dropout",
        "lambda_rec",
        "lambda_z",
        "alpha",
        "label_smooth",
        "spectral_norm",
        "grad_penalty",
        "val_ap",
        "roc_auc",
        "epochs_run",
        "wall_s",
    ])?;
    for r in log {
        writer.write_record(&[
            r.setting.to_string(),
            r.trial.to_string(),
            format!("{}", r.candidate.lr),
            format!("{}", r.candidate.dropout),
            format!("{}", r.candidate.lambda_rec),
            format!("{}", r.candidate.lambda_z),
            format!("{}", r.candidate.alpha),
            format!("{}", r.candidate.label_smooth),
            if r.candidate.spectral_norm { "1".into() } else { "0".into() },
            format!("{}", r.candidate.grad_penalty),
            format!("{}", r.ap),
            format!("{}", r.auc),
            r.epochs_run.to_string(),
            format!("{}", r.wall_s),
        ])?;
    }
    writer.flush()?;
    Ok(())
}
