//! Model architecture: config, the three networks and checkpointing.

pub mod layers;
mod networks;
mod params;
pub mod positional;
pub mod spectral;

pub use networks::{Discriminator, Encoder, Generator, D_BLOCKS};
pub use params::{ParamId, ParamSet};
pub use positional::{sinusoidal_table, PositionalMode};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{GradTape, Tensor};

/// Dropout on/off switch for a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Architectural hyperparameters shared by encoder, generator and
/// discriminator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Features per frame (F).
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    /// Tokens per window (T).
    #[serde(default = "default_window_len")]
    pub window_len: usize,
    #[serde(default = "default_d_model")]
    pub d_model: usize,
    /// Latent dimension (d_z).
    #[serde(default = "default_d_latent")]
    pub d_latent: usize,
    /// Transformer blocks per network (L).
    #[serde(default = "default_num_blocks")]
    pub num_blocks: usize,
    #[serde(default = "default_num_heads")]
    pub num_heads: usize,
    /// Attention window length (W); tokens never attend across windows.
    #[serde(default = "default_attn_window")]
    pub attn_window: usize,
    /// MLP hidden size as a multiple of d_model.
    #[serde(default = "default_mlp_ratio")]
    pub mlp_ratio: usize,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default = "default_positional_mode")]
    pub positional_mode: PositionalMode,
    #[serde(default = "default_true")]
    pub spectral_norm: bool,
    #[serde(default = "default_ln_eps")]
    pub ln_eps: f64,
}

fn default_feature_dim() -> usize {
    112
}
fn default_window_len() -> usize {
    32
}
fn default_d_model() -> usize {
    64
}
fn default_d_latent() -> usize {
    32
}
fn default_num_blocks() -> usize {
    2
}
fn default_num_heads() -> usize {
    4
}
fn default_attn_window() -> usize {
    16
}
fn default_mlp_ratio() -> usize {
    2
}
fn default_positional_mode() -> PositionalMode {
    PositionalMode::SinusoidalFixed
}
fn default_true() -> bool {
    true
}
fn default_ln_eps() -> f64 {
    1e-5
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feature_dim: default_feature_dim(),
            window_len: default_window_len(),
            d_model: default_d_model(),
            d_latent: default_d_latent(),
            num_blocks: default_num_blocks(),
            num_heads: default_num_heads(),
            attn_window: default_attn_window(),
            mlp_ratio: default_mlp_ratio(),
            dropout: 0.0,
            positional_mode: default_positional_mode(),
            spectral_norm: true,
            ln_eps: default_ln_eps(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("feature_dim", self.feature_dim),
            ("window_len", self.window_len),
            ("d_model", self.d_model),
            ("d_latent", self.d_latent),
            ("num_blocks", self.num_blocks),
            ("num_heads", self.num_heads),
            ("attn_window", self.attn_window),
            ("mlp_ratio", self.mlp_ratio),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be ≥ 1")));
            }
        }
        if self.d_model % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by num_heads {}",
                self.d_model, self.num_heads
            )));
        }
        if self.attn_window > self.window_len {
            return Err(Error::Config(format!(
                "attn_window {} exceeds window_len {}",
                self.attn_window, self.window_len
            )));
        }
        if !(0.0..=0.5).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 0.5], got {}",
                self.dropout
            )));
        }
        if self.ln_eps <= 0.0 {
            return Err(Error::Config("ln_eps must be > 0".into()));
        }
        Ok(())
    }
}

/// Encoder, generator and discriminator parameter sets plus their shared
/// config.
#[derive(Debug, Clone)]
pub struct TBiGanModel {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub generator: Generator,
    pub discriminator: Discriminator,
}

impl TBiGanModel {
    /// Fresh model with truncated-normal init, deterministic in `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Encoder::new(&config, &mut rng);
        let generator = Generator::new(&config, &mut rng);
        let discriminator = Discriminator::new(&config, &mut rng);
        Ok(TBiGanModel {
            config,
            encoder,
            generator,
            discriminator,
        })
    }

    pub fn param_count(&self) -> usize {
        self.encoder.params.total_values()
            + self.generator.params.total_values()
            + self.discriminator.params.total_values()
    }

    /// SHA-256 over all parameter sets; equal digests mean bit-identical
    /// parameters.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.encoder.params.digest());
        h.update(self.generator.params.digest());
        h.update(self.discriminator.params.digest());
        h.finalize().into()
    }

    fn eval_rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    /// E(x): latent vector for a preprocessed window (eval mode).
    pub fn encode(&self, window: &Tensor) -> Result<Tensor> {
        let mut tape = GradTape::new();
        let bound = self.encoder.params.bind(&mut tape, false);
        let x = tape.constant(window.clone());
        let z = self
            .encoder
            .forward(&mut tape, &bound, x, &self.config, Mode::Eval, &mut Self::eval_rng())?;
        Ok(tape.value(z).clone())
    }

    /// G(z): reconstructed window for a latent vector (eval mode).
    pub fn generate(&self, z: &Tensor) -> Result<Tensor> {
        let mut tape = GradTape::new();
        let bound = self.generator.params.bind(&mut tape, false);
        let zi = tape.constant(z.clone());
        let x = self
            .generator
            .forward(&mut tape, &bound, zi, &self.config, Mode::Eval, &mut Self::eval_rng())?;
        Ok(tape.value(x).clone())
    }

    /// D(x, z): probability that the pair is real (eval mode).
    pub fn discriminate(&self, x: &Tensor, z: &Tensor) -> Result<f64> {
        let logit = self.discriminate_logit(x, z)?;
        Ok(1.0 / (1.0 + (-logit).exp()))
    }

    /// Pre-sigmoid discriminator output (eval mode).
    pub fn discriminate_logit(&self, x: &Tensor, z: &Tensor) -> Result<f64> {
        let mut tape = GradTape::new();
        let bound = self
            .discriminator
            .bind(&mut tape, false, self.config.spectral_norm)?;
        let xi = tape.constant(x.clone());
        let zi = tape.constant(z.clone());
        let logit = self.discriminator.forward_logit(
            &mut tape,
            &bound,
            xi,
            zi,
            &self.config,
            Mode::Eval,
            &mut Self::eval_rng(),
        )?;
        Ok(tape.value(logit).item())
    }

    // ── checkpointing ────────────────────────────────────────────────

    pub fn save(&self, path: &Path, stats_ref: Option<&str>) -> Result<()> {
        let file = CheckpointFile::from_model(self, stats_ref);
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(&mut out, &file)?;
        use std::io::Write;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, Option<String>)> {
        let file: CheckpointFile = serde_json::from_reader(std::io::BufReader::new(
            std::fs::File::open(path)?,
        ))?;
        file.into_model()
    }
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct NamedValues {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Self-describing JSON checkpoint: config, named parameter tensors,
/// spectral-norm buffers and a reference to the preprocessing stats file.
#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    config: ModelConfig,
    stats_ref: Option<String>,
    params: Vec<NamedValues>,
    buffers: Vec<NamedValues>,
}

impl CheckpointFile {
    fn from_model(model: &TBiGanModel, stats_ref: Option<&str>) -> Self {
        let mut params = Vec::new();
        for (prefix, ps) in [
            ("encoder", &model.encoder.params),
            ("generator", &model.generator.params),
            ("discriminator", &model.discriminator.params),
        ] {
            for (name, t) in ps.iter() {
                params.push(NamedValues {
                    name: format!("{prefix}.{name}"),
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                });
            }
        }
        let mut buffers = Vec::new();
        for (pid, state) in model.discriminator.sn_states() {
            let wname = model.discriminator.params.name(pid.0);
            buffers.push(NamedValues {
                name: format!("discriminator.sn.{wname}.u"),
                shape: vec![state.u.len()],
                data: state.u.clone(),
            });
            buffers.push(NamedValues {
                name: format!("discriminator.sn.{wname}.v"),
                shape: vec![state.v.len()],
                data: state.v.clone(),
            });
        }
        CheckpointFile {
            format_version: CHECKPOINT_VERSION,
            config: model.config.clone(),
            stats_ref: stats_ref.map(String::from),
            params,
            buffers,
        }
    }

    fn into_model(self) -> Result<(TBiGanModel, Option<String>)> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint version {} (expected {})",
                self.format_version, CHECKPOINT_VERSION
            )));
        }
        let mut model = TBiGanModel::new(self.config, 0)?;
        let expected = model.encoder.params.len()
            + model.generator.params.len()
            + model.discriminator.params.len();
        if self.params.len() != expected {
            return Err(Error::Data(format!(
                "checkpoint holds {} parameters, model defines {expected}",
                self.params.len()
            )));
        }
        for rec in self.params {
            let (prefix, rest) = rec
                .name
                .split_once('.')
                .ok_or_else(|| Error::Data(format!("malformed parameter name {}", rec.name)))?;
            let ps = match prefix {
                "encoder" => &mut model.encoder.params,
                "generator" => &mut model.generator.params,
                "discriminator" => &mut model.discriminator.params,
                other => return Err(Error::Data(format!("unknown network prefix {other}"))),
            };
            ps.set_by_name(rest, rec.data)?;
        }
        for rec in self.buffers {
            let rest = rec
                .name
                .strip_prefix("discriminator.sn.")
                .ok_or_else(|| Error::Data(format!("malformed buffer name {}", rec.name)))?;
            let (wname, which) = rest
                .rsplit_once('.')
                .ok_or_else(|| Error::Data(format!("malformed buffer name {}", rec.name)))?;
            let params = &model.discriminator.params;
            let idx = (0..params.len())
                .find(|&i| params.name(i) == wname)
                .ok_or_else(|| Error::Data(format!("buffer for unknown weight {wname}")))?;
            let entry = model
                .discriminator
                .sn_states_mut()
                .iter_mut()
                .find(|(pid, _)| pid.0 == idx)
                .ok_or_else(|| Error::Data(format!("{wname} is not spectrally normalized")))?;
            match which {
                "u" => entry.1.u = rec.data,
                "v" => entry.1.v = rec.data,
                other => return Err(Error::Data(format!("unknown buffer suffix {other}"))),
            }
        }
        Ok((model, self.stats_ref))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_config() -> ModelConfig {
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

    fn random_window(cfg: &ModelConfig, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::randn(&[cfg.window_len, cfg.feature_dim], 1.0, &mut rng)
    }

    #[test]
    fn config_validation_catches_bad_combinations() {
        let mut c = toy_config();
        c.num_heads = 3;
        assert!(c.validate().is_err());
        let mut c = toy_config();
        c.attn_window = 5; // > window_len
        assert!(c.validate().is_err());
        let mut c = toy_config();
        c.dropout = 0.6;
        assert!(c.validate().is_err());
        assert!(toy_config().validate().is_ok());
    }

    #[test]
    fn encode_shape_and_determinism() {
        let cfg = toy_config();
        let model = TBiGanModel::new(cfg.clone(), 1).unwrap();
        let w = random_window(&cfg, 9);
        let z1 = model.encode(&w).unwrap();
        let z2 = model.encode(&w).unwrap();
        assert_eq!(z1.shape(), &[cfg.d_latent]);
        assert_eq!(z1.data(), z2.data());
    }

    #[test]
    fn encode_is_sensitive_to_every_input_cell() {
        let cfg = toy_config();
        let model = TBiGanModel::new(cfg.clone(), 2).unwrap();
        let w = random_window(&cfg, 10);
        let base = model.encode(&w).unwrap();
        for idx in 0..w.numel() {
            let mut data = w.data().to_vec();
            data[idx] += 0.25;
            let perturbed = Tensor::new(w.shape().to_vec(), data).unwrap();
            let z = model.encode(&perturbed).unwrap();
            assert_ne!(base.data(), z.data(), "cell {idx} had no effect on z");
        }
    }

    #[test]
    fn generate_shape_and_determinism() {
        let cfg = toy_config();
        let model = TBiGanModel::new(cfg.clone(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = Tensor::randn(&[cfg.d_latent], 1.0, &mut rng);
        let x1 = model.generate(&z).unwrap();
        let x2 = model.generate(&z).unwrap();
        assert_eq!(x1.shape(), &[cfg.window_len, cfg.feature_dim]);
        assert_eq!(x1.data(), x2.data());
    }

    #[test]
    fn discriminate_output_strictly_inside_unit_interval() {
        let cfg = toy_config();
        let model = TBiGanModel::new(cfg.clone(), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..5 {
            let x = Tensor::randn(&[cfg.window_len, cfg.feature_dim], 2.0, &mut rng);
            let z = Tensor::randn(&[cfg.d_latent], 2.0, &mut rng);
            let p = model.discriminate(&x, &z).unwrap();
            assert!(p > 0.0 && p < 1.0, "p = {p}");
        }
    }

    #[test]
    fn zero_final_layer_gives_half() {
        let cfg = toy_config();
        let mut model = TBiGanModel::new(cfg.clone(), 7).unwrap();
        let n = model.discriminator.params.tensor_at(
            (0..model.discriminator.params.len())
                .find(|&i| model.discriminator.params.name(i) == "joint.fc2.w")
                .unwrap(),
        ).numel();
        model
            .discriminator
            .params
            .set_by_name("joint.fc2.w", vec![0.0; n])
            .unwrap();
        model
            .discriminator
            .params
            .set_by_name("joint.fc2.b", vec![0.0])
            .unwrap();
        let w = random_window(&cfg, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let z = Tensor::randn(&[cfg.d_latent], 1.0, &mut rng);
        let p = model.discriminate(&w, &z).unwrap();
        assert_eq!(p, 0.5);
    }

    #[test]
    fn param_count_is_a_pure_function_of_config() {
        let cfg = toy_config();
        let a = TBiGanModel::new(cfg.clone(), 1).unwrap();
        let b = TBiGanModel::new(cfg.clone(), 999).unwrap();
        assert_eq!(a.param_count(), b.param_count());
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let cfg = toy_config();
        let model = TBiGanModel::new(cfg.clone(), 21).unwrap();
        model.save(&path, Some("stats.json")).unwrap();
        let (loaded, stats_ref) = TBiGanModel::load(&path).unwrap();
        assert_eq!(stats_ref.as_deref(), Some("stats.json"));
        assert_eq!(model.digest(), loaded.digest());
        assert_eq!(model.param_count(), loaded.param_count());

        // saving the loaded model again reproduces the same bytes
        let path2 = dir.path().join("ckpt2.json");
        loaded.save(&path2, Some("stats.json")).unwrap();
        let b1 = std::fs::read(&path).unwrap();
        let b2 = std::fs::read(&path2).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn wrong_input_shape_is_reported_with_both_shapes() {
        let cfg = toy_config();
        let model = TBiGanModel::new(cfg, 1).unwrap();
        let bad = Tensor::zeros(&[3, 6]);
        let err = model.encode(&bad).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[3, 6]") && msg.contains("[4, 6]"), "{msg}");
    }

    #[test]
    fn learnable_positions_register_parameters() {
        let mut cfg = toy_config();
        let fixed = TBiGanModel::new(cfg.clone(), 1).unwrap();
        cfg.positional_mode = PositionalMode::Learnable;
        let learn = TBiGanModel::new(cfg.clone(), 1).unwrap();
        let extra = 3 * cfg.window_len * cfg.d_model; // E, G and D tables
        assert_eq!(learn.param_count(), fixed.param_count() + extra);
        // still runs end to end
        let w = random_window(&cfg, 14);
        let _ = learn.encode(&w).unwrap();
    }

    #[test]
    fn eval_forward_ignores_dropout_config() {
        let mut cfg = toy_config();
        cfg.dropout = 0.3;
        let model = TBiGanModel::new(cfg.clone(), 8).unwrap();
        let w = random_window(&cfg, 15);
        assert_eq!(model.encode(&w).unwrap().data(), model.encode(&w).unwrap().data());
    }

    #[test]
    fn rng_dependent_init_differs_by_seed() {
        let cfg = toy_config();
        let a = TBiGanModel::new(cfg.clone(), 1).unwrap();
        let b = TBiGanModel::new(cfg, 2).unwrap();
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn init_is_deterministic_in_seed() {
        let cfg = toy_config();
        let a = TBiGanModel::new(cfg.clone(), 42).unwrap();
        let b = TBiGanModel::new(cfg, 42).unwrap();
        assert_eq!(a.digest(), b.digest());
    }

    #[test]
    fn spectral_sigmas_near_one_for_normalized_bind() {
        let cfg = toy_config();
        let mut model = TBiGanModel::new(cfg.clone(), 33).unwrap();
        model.discriminator.refresh_spectral(50);
        let mut tape = GradTape::new();
        let bound = model.discriminator.bind(&mut tape, false, true).unwrap();
        // the bound ids for .w params point at normalized tensors
        for (pid, state) in model.discriminator.sn_states() {
            let raw = model.discriminator.params.tensor(*pid);
            let sigma = state.sigma(raw);
            let normalized = tape.value(bound.ids[pid.0]);
            // zero-initialized residual projections stay untouched
            let expect: Vec<f64> = if sigma.abs() <= spectral::SIGMA_FLOOR {
                raw.data().to_vec()
            } else {
                raw.data().iter().map(|x| x / sigma).collect()
            };
            for (a, b) in normalized.data().iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
