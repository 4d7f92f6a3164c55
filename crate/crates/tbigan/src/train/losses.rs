//! Loss arithmetic: probability-space helpers for value-level checks and
//! tape-level builders used by the training loop.

use crate::error::{Error, Result};
use crate::tensor::{GradTape, Tensor, ValueId};

/// Binary cross-entropy −(t·ln p + (1−t)·ln(1−p)) in probability space.
/// Terms with zero weight are dropped exactly, so p = 0 against target 0
/// (or p = 1 against target 1) is 0, not NaN.
pub fn bce_prob(p: f64, target: f64) -> f64 {
    let mut loss = 0.0;
    if target != 0.0 {
        loss -= target * p.ln();
    }
    if target != 1.0 {
        loss -= (1.0 - target) * (1.0 - p).ln();
    }
    loss
}

/// Mean absolute error over a T×F pair.
pub fn reconstruction_loss(x: &Tensor, xhat: &Tensor) -> Result<f64> {
    if x.shape() != xhat.shape() {
        return Err(Error::ShapeMismatch {
            op: "reconstruction_loss",
            lhs: x.shape().to_vec(),
            rhs: xhat.shape().to_vec(),
        });
    }
    let n = x.numel() as f64;
    Ok(x.data()
        .iter()
        .zip(xhat.data())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / n)
}

/// Squared L2 distance between two encodings.
pub fn latent_loss(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op: "latent_loss",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum())
}

/// Discriminator objective from probabilities: mean over the batch of
/// BCE(D(x,E(x)), smooth) + BCE(D(G(z),z), 0).
pub fn discriminator_loss_from_probs(real: &[f64], fake: &[f64], smooth: f64) -> Result<f64> {
    if real.len() != fake.len() || real.is_empty() {
        return Err(Error::Contract(
            "real and fake batches must be non-empty and equal-sized".into(),
        ));
    }
    let n = real.len() as f64;
    let total: f64 = real
        .iter()
        .zip(fake)
        .map(|(&r, &f)| bce_prob(r, smooth) + bce_prob(f, 0.0))
        .sum();
    Ok(total / n)
}

/// The adversarial game's inner maximization value,
/// E[ln D(x,E(x))] + E[ln(1−D(G(z),z))], written directly. With
/// label smoothing 1.0 the discriminator loss equals its negation.
pub fn game_inner_objective(real: &[f64], fake: &[f64]) -> f64 {
    let n = real.len() as f64;
    let a: f64 = real.iter().map(|p| p.ln()).sum::<f64>() / n;
    let b: f64 = fake.iter().map(|p| (1.0 - p).ln()).sum::<f64>() / n;
    a + b
}

/// Encoder-generator objective from per-sample parts:
/// mean BCE(D(G(z),z), 1) [+ mean BCE(D(x,E(x)), 0) when the symmetric
/// term is on] + λ_rec·mean(rec) + λ_z·mean(lat).
pub fn encoder_generator_loss_from_parts(
    fake_probs: &[f64],
    real_probs: Option<&[f64]>,
    recs: &[f64],
    lats: &[f64],
    lambda_rec: f64,
    lambda_z: f64,
) -> Result<f64> {
    if fake_probs.is_empty() || fake_probs.len() != recs.len() || recs.len() != lats.len() {
        return Err(Error::Contract("mismatched per-sample loss parts".into()));
    }
    let n = fake_probs.len() as f64;
    let mut adv: f64 = fake_probs.iter().map(|&p| bce_prob(p, 1.0)).sum::<f64>() / n;
    if let Some(real) = real_probs {
        if real.len() != fake_probs.len() {
            return Err(Error::Contract("mismatched symmetric-term batch".into()));
        }
        adv += real.iter().map(|&p| bce_prob(p, 0.0)).sum::<f64>() / n;
    }
    let rec = recs.iter().sum::<f64>() / n;
    let lat = lats.iter().sum::<f64>() / n;
    Ok(adv + lambda_rec * rec + lambda_z * lat)
}

/// WGAN-GP-style penalty (‖∇D(x̃, z̃)‖₂ − 1)² for one interpolated pair,
/// built on the tape so its gradient w.r.t. D's parameters is exact
/// (gradients are tape values and differentiate again).
///
/// `eps` is the per-sample interpolation coefficient, applied jointly to
/// the x and z components. `d_logit` evaluates the discriminator's
/// pre-sigmoid output for given tape inputs.
pub fn gradient_penalty<F>(
    tape: &mut GradTape,
    d_logit: F,
    x_real: &Tensor,
    z_real: &Tensor,
    x_fake: &Tensor,
    z_fake: &Tensor,
    eps: f64,
) -> Result<ValueId>
where
    F: FnOnce(&mut GradTape, ValueId, ValueId) -> Result<ValueId>,
{
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::Contract(format!("interpolation eps {eps} outside [0,1]")));
    }
    let interp = |a: &Tensor, b: &Tensor| -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(Error::ShapeMismatch {
                op: "gradient_penalty interpolation",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| eps * x + (1.0 - eps) * y)
            .collect();
        Tensor::new(a.shape().to_vec(), data)
    };
    let xi = tape.leaf(interp(x_real, x_fake)?.with_grad());
    let zi = tape.leaf(interp(z_real, z_fake)?.with_grad());
    let out = d_logit(tape, xi, zi)?;
    let grads = tape.grad_nodes(out)?;

    let mut sumsq: Option<ValueId> = None;
    for leaf in [xi, zi] {
        if let Some(g) = grads.wrt(leaf) {
            let s = tape.sum_squares(g)?;
            sumsq = Some(match sumsq {
                None => s,
                Some(prev) => tape.add(prev, s)?,
            });
        }
    }
    let sumsq = match sumsq {
        Some(s) => s,
        // output independent of the pair: gradient is identically zero
        None => tape.scalar(0.0),
    };
    // small floor keeps the sqrt differentiable at zero gradient
    let sumsq = tape.add_scalar(sumsq, 1e-24)?;
    let norm = tape.sqrt(sumsq)?;
    let shifted = tape.add_scalar(norm, -1.0)?;
    tape.square(shifted)
}
