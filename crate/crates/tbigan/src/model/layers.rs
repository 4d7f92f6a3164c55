//! Window-based multi-head self-attention and the pre-norm transformer
//! block, as pure tape functions over already-bound parameter ids.

use crate::error::{Error, Result};
use crate::tensor::{GradTape, Tensor, ValueId};
use rand::Rng;

use super::Mode;

/// Bound tape ids for one attention layer.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub wq: ValueId,
    pub bq: ValueId,
    pub wk: ValueId,
    pub bk: ValueId,
    pub wv: ValueId,
    pub bv: ValueId,
    pub wo: ValueId,
    pub bo: ValueId,
}

/// Bound tape ids for one transformer block.
#[derive(Debug, Clone, Copy)]
pub struct BlockParams {
    pub ln1_gain: ValueId,
    pub ln1_bias: ValueId,
    pub attn: AttentionParams,
    pub ln2_gain: ValueId,
    pub ln2_bias: ValueId,
    pub fc1_w: ValueId,
    pub fc1_b: ValueId,
    pub fc2_w: ValueId,
    pub fc2_b: ValueId,
}

/// x·W + b.
pub fn linear(tape: &mut GradTape, x: ValueId, w: ValueId, b: ValueId) -> Result<ValueId> {
    let xw = tape.matmul(x, w)?;
    tape.add(xw, b)
}

/// Multi-head scaled dot-product attention restricted to non-overlapping
/// windows of `w_size` tokens.
///
/// The sequence is zero-padded up to a multiple of `w_size`; no token
/// attends outside its own window, so a token's output is exactly
/// independent of the other windows' contents.
pub fn window_attention(
    tape: &mut GradTape,
    x: ValueId,
    p: &AttentionParams,
    w_size: usize,
    heads: usize,
) -> Result<ValueId> {
    window_attention_impl(tape, x, p, w_size, heads, &mut None)
}

/// Same as [`window_attention`] but also returns the per-window, per-head
/// softmax weight matrices (row = query token, column = key token).
pub fn window_attention_with_weights(
    tape: &mut GradTape,
    x: ValueId,
    p: &AttentionParams,
    w_size: usize,
    heads: usize,
) -> Result<(ValueId, Vec<Tensor>)> {
    let mut collect = Some(Vec::new());
    let out = window_attention_impl(tape, x, p, w_size, heads, &mut collect)?;
    Ok((out, collect.unwrap()))
}

fn window_attention_impl(
    tape: &mut GradTape,
    x: ValueId,
    p: &AttentionParams,
    w_size: usize,
    heads: usize,
    weights: &mut Option<Vec<Tensor>>,
) -> Result<ValueId> {
    let (t0, d) = {
        let v = tape.value(x);
        if v.rank() != 2 {
            return Err(Error::Contract(format!(
                "window_attention expects [tokens, d_model], got {:?}",
                v.shape()
            )));
        }
        (v.rows(), v.cols())
    };
    if w_size == 0 || w_size > t0 {
        return Err(Error::Config(format!(
            "attention window {w_size} must be in 1..={t0} (sequence length)"
        )));
    }
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!(
            "d_model {d} must be divisible by {heads} heads"
        )));
    }
    let pad = (w_size - t0 % w_size) % w_size;
    let xp = if pad > 0 { tape.pad_rows(x, 0, pad)? } else { x };
    let t = t0 + pad;

    let q = linear(tape, xp, p.wq, p.bq)?;
    let k = linear(tape, xp, p.wk, p.bk)?;
    let v = linear(tape, xp, p.wv, p.bv)?;

    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut windows = Vec::with_capacity(t / w_size);
    for start in (0..t).step_by(w_size) {
        let qw = tape.slice_rows(q, start, start + w_size)?;
        let kw = tape.slice_rows(k, start, start + w_size)?;
        let vw = tape.slice_rows(v, start, start + w_size)?;
        let mut head_outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (c0, c1) = (h * dh, (h + 1) * dh);
            let qh = tape.slice_cols(qw, c0, c1)?;
            let kh = tape.slice_cols(kw, c0, c1)?;
            let vh = tape.slice_cols(vw, c0, c1)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, scale)?;
            let attn = tape.softmax(scores)?;
            if let Some(ws) = weights.as_mut() {
                ws.push(tape.value(attn).clone());
            }
            head_outs.push(tape.matmul(attn, vh)?);
        }
        windows.push(tape.concat_cols(&head_outs)?);
    }
    let merged = tape.concat_rows(&windows)?;
    let out = linear(tape, merged, p.wo, p.bo)?;
    if pad > 0 {
        tape.slice_rows(out, 0, t0)
    } else {
        Ok(out)
    }
}

/// Pre-norm transformer block: `x + Attn(LN(x))`, then `+ MLP(LN(·))`.
/// Dropout is applied after the attention and MLP branches in train mode.
#[allow(clippy::too_many_arguments)]
pub fn transformer_block<R: Rng>(
    tape: &mut GradTape,
    x: ValueId,
    p: &BlockParams,
    w_size: usize,
    heads: usize,
    dropout: f64,
    ln_eps: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<ValueId> {
    let normed = tape.layer_norm(x, p.ln1_gain, p.ln1_bias, ln_eps)?;
    let mut attn = window_attention(tape, normed, &p.attn, w_size, heads)?;
    if mode == Mode::Train {
        attn = tape.dropout(attn, dropout, rng)?;
    }
    let x1 = tape.add(x, attn)?;

    let normed = tape.layer_norm(x1, p.ln2_gain, p.ln2_bias, ln_eps)?;
    let h = linear(tape, normed, p.fc1_w, p.fc1_b)?;
    let h = tape.gelu(h)?;
    let mut h = linear(tape, h, p.fc2_w, p.fc2_b)?;
    if mode == Mode::Train {
        h = tape.dropout(h, dropout, rng)?;
    }
    tape.add(x1, h)
}

/// Reference full self-attention used by tests to pin the `w_size == T`
/// degenerate case. Single window over the whole sequence, same math
/// written without any partitioning.
pub fn full_attention_reference(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    heads: usize,
) -> Tensor {
    let (t, d) = (q.rows(), q.cols());
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = vec![0.0; t * d];
    for h in 0..heads {
        let c0 = h * dh;
        for i in 0..t {
            // scores for query i against all keys, this head
            let mut scores = vec![0.0; t];
            for (j, s) in scores.iter_mut().enumerate() {
                let mut dot = 0.0;
                for c in 0..dh {
                    dot += q.at(i, c0 + c) * k.at(j, c0 + c);
                }
                *s = dot * scale;
            }
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = exps.iter().sum();
            for e in exps.iter_mut() {
                *e /= z;
            }
            for c in 0..dh {
                let mut acc = 0.0;
                for (j, w) in exps.iter().enumerate() {
                    acc += w * v.at(j, c0 + c);
                }
                out[i * d + c0 + c] = acc;
            }
        }
    }
    Tensor::new(vec![t, d], out).expect("finite attention output")
}
