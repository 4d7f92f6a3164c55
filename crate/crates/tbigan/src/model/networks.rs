//! The three networks: transformer encoder E, transformer generator G and
//! the joint discriminator D.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Bound, GradTape, Tensor, ValueId};

use super::layers::{linear, transformer_block, AttentionParams, BlockParams};
use super::params::{ParamId, ParamSet};
use super::positional::{sinusoidal_table, PositionalMode};
use super::spectral::{normalize_on_tape, SpectralState, SIGMA_FLOOR};
use super::{Mode, ModelConfig};

/// Discriminator depth for the x-summary stack.
pub const D_BLOCKS: usize = 2;

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy)]
pub(crate) struct LinearIds {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BlockIds {
    ln1_g: ParamId,
    ln1_b: ParamId,
    wq: LinearIds,
    wk: LinearIds,
    wv: LinearIds,
    wo: LinearIds,
    ln2_g: ParamId,
    ln2_b: ParamId,
    fc1: LinearIds,
    fc2: LinearIds,
}

fn reg_linear<R: Rng>(
    ps: &mut ParamSet,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
    zero_w: bool,
    rng: &mut R,
) -> LinearIds {
    let w = if zero_w {
        Tensor::zeros(&[fan_in, fan_out])
    } else {
        Tensor::trunc_normal(&[fan_in, fan_out], INIT_STD, rng)
    };
    LinearIds {
        w: ps.register(format!("{prefix}.w"), w),
        b: ps.register(format!("{prefix}.b"), Tensor::zeros(&[fan_out])),
    }
}

fn reg_block<R: Rng>(ps: &mut ParamSet, prefix: &str, d: usize, hidden: usize, rng: &mut R) -> BlockIds {
    let ones = Tensor::new(vec![d], vec![1.0; d]).expect("finite");
    BlockIds {
        ln1_g: ps.register(format!("{prefix}.ln1.gain"), ones.clone()),
        ln1_b: ps.register(format!("{prefix}.ln1.bias"), Tensor::zeros(&[d])),
        wq: reg_linear(ps, &format!("{prefix}.attn.q"), d, d, false, rng),
        wk: reg_linear(ps, &format!("{prefix}.attn.k"), d, d, false, rng),
        wv: reg_linear(ps, &format!("{prefix}.attn.v"), d, d, false, rng),
        // residual-branch output projections start at zero: a fresh block
        // is exactly the identity
        wo: reg_linear(ps, &format!("{prefix}.attn.out"), d, d, true, rng),
        ln2_g: ps.register(format!("{prefix}.ln2.gain"), ones),
        ln2_b: ps.register(format!("{prefix}.ln2.bias"), Tensor::zeros(&[d])),
        fc1: reg_linear(ps, &format!("{prefix}.mlp.fc1"), d, hidden, false, rng),
        fc2: reg_linear(ps, &format!("{prefix}.mlp.fc2"), hidden, d, true, rng),
    }
}

impl BlockIds {
    fn to_bound(self, bound: &Bound) -> BlockParams {
        BlockParams {
            ln1_gain: bound.id(self.ln1_g),
            ln1_bias: bound.id(self.ln1_b),
            attn: AttentionParams {
                wq: bound.id(self.wq.w),
                bq: bound.id(self.wq.b),
                wk: bound.id(self.wk.w),
                bk: bound.id(self.wk.b),
                wv: bound.id(self.wv.w),
                bv: bound.id(self.wv.b),
                wo: bound.id(self.wo.w),
                bo: bound.id(self.wo.b),
            },
            ln2_gain: bound.id(self.ln2_g),
            ln2_bias: bound.id(self.ln2_b),
            fc1_w: bound.id(self.fc1.w),
            fc1_b: bound.id(self.fc1.b),
            fc2_w: bound.id(self.fc2.w),
            fc2_b: bound.id(self.fc2.b),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum PosTable {
    Fixed(Tensor),
    Learnable(ParamId),
}

impl PosTable {
    fn new<R: Rng>(ps: &mut ParamSet, name: &str, cfg: &ModelConfig, rng: &mut R) -> Self {
        match cfg.positional_mode {
            PositionalMode::SinusoidalFixed => {
                PosTable::Fixed(sinusoidal_table(cfg.window_len, cfg.d_model))
            }
            PositionalMode::Learnable => PosTable::Learnable(ps.register(
                name,
                Tensor::trunc_normal(&[cfg.window_len, cfg.d_model], INIT_STD, rng),
            )),
        }
    }

    fn id(&self, tape: &mut GradTape, bound: &Bound) -> ValueId {
        match self {
            PosTable::Fixed(t) => tape.constant(t.clone()),
            PosTable::Learnable(p) => bound.id(*p),
        }
    }
}

fn check_window_shape(cfg: &ModelConfig, t: &Tensor) -> Result<()> {
    if t.rank() != 2 || t.rows() != cfg.window_len || t.cols() != cfg.feature_dim {
        return Err(Error::ShapeMismatch {
            op: "model input",
            lhs: t.shape().to_vec(),
            rhs: vec![cfg.window_len, cfg.feature_dim],
        });
    }
    Ok(())
}

// ── Encoder ──────────────────────────────────────────────────────────

/// Maps a preprocessed T×F window to a latent vector of `d_latent`.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub params: ParamSet,
    embed: LinearIds,
    pos: PosTable,
    blocks: Vec<BlockIds>,
    head: LinearIds,
}

impl Encoder {
    pub fn new<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let mut ps = ParamSet::new();
        let embed = reg_linear(&mut ps, "embed", cfg.feature_dim, cfg.d_model, false, rng);
        let pos = PosTable::new(&mut ps, "pos", cfg, rng);
        let hidden = cfg.d_model * cfg.mlp_ratio;
        let blocks = (0..cfg.num_blocks)
            .map(|i| reg_block(&mut ps, &format!("block{i}"), cfg.d_model, hidden, rng))
            .collect();
        let head = reg_linear(&mut ps, "head", cfg.d_model, cfg.d_latent, false, rng);
        Encoder { params: ps, embed, pos, blocks, head }
    }

    /// Embed → positions → blocks → mean-pool over tokens → latent head.
    pub fn forward<R: Rng>(
        &self,
        tape: &mut GradTape,
        bound: &Bound,
        x: ValueId,
        cfg: &ModelConfig,
        mode: Mode,
        rng: &mut R,
    ) -> Result<ValueId> {
        check_window_shape(cfg, tape.value(x))?;
        let mut tok = linear(tape, x, bound.id(self.embed.w), bound.id(self.embed.b))?;
        let pos = self.pos.id(tape, bound);
        tok = tape.add(tok, pos)?;
        for b in &self.blocks {
            let bp = b.to_bound(bound);
            tok = transformer_block(
                tape,
                tok,
                &bp,
                cfg.attn_window,
                cfg.num_heads,
                cfg.dropout,
                cfg.ln_eps,
                mode,
                rng,
            )?;
        }
        let pooled = tape.mean_axis(tok, 0)?; // [1, d_model]
        let z = linear(tape, pooled, bound.id(self.head.w), bound.id(self.head.b))?;
        tape.reshape(z, &[cfg.d_latent])
    }
}

// ── Generator ────────────────────────────────────────────────────────

/// Reconstructs a T×F window from a latent vector.
#[derive(Debug, Clone)]
pub struct Generator {
    pub params: ParamSet,
    proj: LinearIds,
    pos: PosTable,
    blocks: Vec<BlockIds>,
    head: LinearIds,
}

impl Generator {
    pub fn new<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let mut ps = ParamSet::new();
        let proj = reg_linear(&mut ps, "proj", cfg.d_latent, cfg.d_model, false, rng);
        let pos = PosTable::new(&mut ps, "pos", cfg, rng);
        let hidden = cfg.d_model * cfg.mlp_ratio;
        let blocks = (0..cfg.num_blocks)
            .map(|i| reg_block(&mut ps, &format!("block{i}"), cfg.d_model, hidden, rng))
            .collect();
        let head = reg_linear(&mut ps, "head", cfg.d_model, cfg.feature_dim, false, rng);
        Generator { params: ps, proj, pos, blocks, head }
    }

    /// Project z, broadcast to T tokens, add positions, run the block
    /// stack (same architecture as the encoder, separate weights), project
    /// each token back to feature space.
    pub fn forward<R: Rng>(
        &self,
        tape: &mut GradTape,
        bound: &Bound,
        z: ValueId,
        cfg: &ModelConfig,
        mode: Mode,
        rng: &mut R,
    ) -> Result<ValueId> {
        let z = {
            let v = tape.value(z);
            if v.numel() != cfg.d_latent {
                return Err(Error::ShapeMismatch {
                    op: "generator input",
                    lhs: v.shape().to_vec(),
                    rhs: vec![cfg.d_latent],
                });
            }
            tape.reshape(z, &[1, cfg.d_latent])?
        };
        let row = linear(tape, z, bound.id(self.proj.w), bound.id(self.proj.b))?;
        let mut tok = tape.broadcast_to(row, &[cfg.window_len, cfg.d_model])?;
        let pos = self.pos.id(tape, bound);
        tok = tape.add(tok, pos)?;
        for b in &self.blocks {
            let bp = b.to_bound(bound);
            tok = transformer_block(
                tape,
                tok,
                &bp,
                cfg.attn_window,
                cfg.num_heads,
                cfg.dropout,
                cfg.ln_eps,
                mode,
                rng,
            )?;
        }
        linear(tape, tok, bound.id(self.head.w), bound.id(self.head.b))
    }
}

// ── Discriminator ────────────────────────────────────────────────────

/// Judges (window, latent) pairs: a transformer/pool summary of x is
/// concatenated with an MLP embedding of z and passed to a joint MLP with
/// sigmoid output.
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub params: ParamSet,
    embed: LinearIds,
    pos: PosTable,
    blocks: Vec<BlockIds>,
    z1: LinearIds,
    z2: LinearIds,
    joint1: LinearIds,
    joint2: LinearIds,
    /// Persistent power-iteration state per normalized weight matrix.
    sn: Vec<(ParamId, SpectralState)>,
}

impl Discriminator {
    pub fn new<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let mut ps = ParamSet::new();
        let d = cfg.d_model;
        let embed = reg_linear(&mut ps, "embed", cfg.feature_dim, d, false, rng);
        let pos = PosTable::new(&mut ps, "pos", cfg, rng);
        let hidden = d * cfg.mlp_ratio;
        let blocks: Vec<BlockIds> = (0..D_BLOCKS)
            .map(|i| reg_block(&mut ps, &format!("block{i}"), d, hidden, rng))
            .collect();
        let z1 = reg_linear(&mut ps, "z_mlp.fc1", cfg.d_latent, d, false, rng);
        let z2 = reg_linear(&mut ps, "z_mlp.fc2", d, d, false, rng);
        let joint1 = reg_linear(&mut ps, "joint.fc1", 2 * d, d, false, rng);
        let joint2 = reg_linear(&mut ps, "joint.fc2", d, 1, false, rng);

        // every 2-D weight in D is spectrally normalized when enabled
        let mut sn = Vec::new();
        for idx in 0..ps.len() {
            if ps.name(idx).ends_with(".w") {
                let t = ps.tensor_at(idx);
                let mut state = SpectralState::new(t.rows(), t.cols(), rng);
                state.refresh(t, 5);
                sn.push((ParamId(idx), state));
            }
        }
        Discriminator { params: ps, embed, pos, blocks, z1, z2, joint1, joint2, sn }
    }

    /// One power-iteration refresh per normalized weight; call before each
    /// discriminator update so the σ estimates track the moving weights.
    pub fn refresh_spectral(&mut self, iters: usize) {
        for (pid, state) in &mut self.sn {
            state.refresh(self.params.tensor(*pid), iters);
        }
    }

    /// Current spectral-norm estimates by weight name.
    pub fn spectral_sigmas(&self) -> Vec<(String, f64)> {
        self.sn
            .iter()
            .map(|(pid, st)| (self.params.name(pid.0).to_string(), st.sigma(self.params.tensor(*pid))))
            .collect()
    }

    pub(crate) fn sn_states(&self) -> &[(ParamId, SpectralState)] {
        &self.sn
    }

    pub(crate) fn sn_states_mut(&mut self) -> &mut [(ParamId, SpectralState)] {
        &mut self.sn
    }

    /// Bind parameters, substituting spectrally normalized weights when
    /// enabled in the config.
    pub fn bind(&self, tape: &mut GradTape, trainable: bool, spectral: bool) -> Result<Bound> {
        Ok(self.bind_with_leaves(tape, trainable, spectral)?.0)
    }

    /// Like [`bind`](Self::bind) but also returns the raw leaf ids, which
    /// is where gradients accumulate when weights are normalized on the
    /// way in.
    pub fn bind_with_leaves(
        &self,
        tape: &mut GradTape,
        trainable: bool,
        spectral: bool,
    ) -> Result<(Bound, Bound)> {
        let leaves = self.params.bind(tape, trainable);
        let mut bound = leaves.clone();
        if spectral {
            for (pid, state) in &self.sn {
                let sigma = state.sigma(self.params.tensor(*pid));
                if sigma.abs() > SIGMA_FLOOR {
                    bound.ids[pid.0] = normalize_on_tape(tape, bound.ids[pid.0], state)?;
                }
            }
        }
        Ok((bound, leaves))
    }

    /// Pre-sigmoid output for a (window, latent) pair.
    pub fn forward_logit<R: Rng>(
        &self,
        tape: &mut GradTape,
        bound: &Bound,
        x: ValueId,
        z: ValueId,
        cfg: &ModelConfig,
        mode: Mode,
        rng: &mut R,
    ) -> Result<ValueId> {
        check_window_shape(cfg, tape.value(x))?;
        let mut tok = linear(tape, x, bound.id(self.embed.w), bound.id(self.embed.b))?;
        let pos = self.pos.id(tape, bound);
        tok = tape.add(tok, pos)?;
        for b in &self.blocks {
            let bp = b.to_bound(bound);
            tok = transformer_block(
                tape,
                tok,
                &bp,
                cfg.attn_window,
                cfg.num_heads,
                cfg.dropout,
                cfg.ln_eps,
                mode,
                rng,
            )?;
        }
        let x_summary = tape.mean_axis(tok, 0)?; // [1, d_model]

        let z = {
            let v = tape.value(z);
            if v.numel() != cfg.d_latent {
                return Err(Error::ShapeMismatch {
                    op: "discriminator latent input",
                    lhs: v.shape().to_vec(),
                    rhs: vec![cfg.d_latent],
                });
            }
            tape.reshape(z, &[1, cfg.d_latent])?
        };
        let zh = linear(tape, z, bound.id(self.z1.w), bound.id(self.z1.b))?;
        let zh = tape.gelu(zh)?;
        let z_summary = linear(tape, zh, bound.id(self.z2.w), bound.id(self.z2.b))?;

        let joint = tape.concat_cols(&[x_summary, z_summary])?;
        let h = linear(tape, joint, bound.id(self.joint1.w), bound.id(self.joint1.b))?;
        let h = tape.gelu(h)?;
        let logit = linear(tape, h, bound.id(self.joint2.w), bound.id(self.joint2.b))?;
        tape.reshape(logit, &[])
    }

    /// Probability in (0,1) for a (window, latent) pair.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_prob<R: Rng>(
        &self,
        tape: &mut GradTape,
        bound: &Bound,
        x: ValueId,
        z: ValueId,
        cfg: &ModelConfig,
        mode: Mode,
        rng: &mut R,
    ) -> Result<ValueId> {
        let logit = self.forward_logit(tape, bound, x, z, cfg, mode, rng)?;
        tape.sigmoid(logit)
    }
}
