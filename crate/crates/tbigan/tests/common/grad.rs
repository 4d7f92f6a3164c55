//! Finite-difference gradient harness shared by the gradient and
//! acceptance suites. The numeric side only ever evaluates forward
//! passes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tbigan::model::layers::{AttentionParams, BlockParams};
use tbigan::model::{ParamSet, TBiGanModel};
use tbigan::tensor::{rel_err, Bound, GradTape, Tensor, ValueId};

pub const FD_H: f64 = 1e-5;

/// Max relative error over every parameter of `params` for a scalar loss
/// built by `build`.
pub fn param_grad_err(params: &ParamSet, build: &dyn Fn(&mut GradTape, &Bound) -> ValueId) -> f64 {
    let mut tape = GradTape::new();
    let bound = params.bind(&mut tape, true);
    let loss = build(&mut tape, &bound);
    tape.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = (0..params.len())
        .map(|i| {
            tape.leaf_grad(bound.ids[i])
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; params.tensor_at(i).numel()])
        })
        .collect();

    let eval = |ps: &ParamSet| -> f64 {
        let mut tape = GradTape::new();
        let bound = ps.bind(&mut tape, false);
        let loss = build(&mut tape, &bound);
        tape.value(loss).item()
    };
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        for j in 0..params.tensor_at(i).numel() {
            let mut ps = params.clone();
            ps.tensor_mut_at(i).data_mut()[j] += FD_H;
            let fp = eval(&ps);
            ps.tensor_mut_at(i).data_mut()[j] -= 2.0 * FD_H;
            let fm = eval(&ps);
            let numeric = (fp - fm) / (2.0 * FD_H);
            worst = worst.max(rel_err(analytic[i][j], numeric));
        }
    }
    worst
}

/// Like [`param_grad_err`], over the model's three networks. `check`
/// selects which networks are trainable (and checked); the discriminator
/// is bound with spectral normalization per the model config.
pub fn model_grad_err(
    model: &TBiGanModel,
    check: (bool, bool, bool),
    build: &dyn Fn(&mut GradTape, &TBiGanModel, &Bound, &Bound, &Bound) -> ValueId,
) -> f64 {
    let spectral = model.config.spectral_norm;
    let mut tape = GradTape::new();
    let eb = model.encoder.params.bind(&mut tape, check.0);
    let gb = model.generator.params.bind(&mut tape, check.1);
    let (db, d_leaves) = model
        .discriminator
        .bind_with_leaves(&mut tape, check.2, spectral)
        .unwrap();
    let loss = build(&mut tape, model, &eb, &gb, &db);
    tape.backward(loss).unwrap();

    let grads_of = |tape: &GradTape, leaves: &Bound, ps: &ParamSet| -> Vec<Vec<f64>> {
        (0..ps.len())
            .map(|i| {
                tape.leaf_grad(leaves.ids[i])
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; ps.tensor_at(i).numel()])
            })
            .collect()
    };
    let analytic = [
        grads_of(&tape, &eb, &model.encoder.params),
        grads_of(&tape, &gb, &model.generator.params),
        grads_of(&tape, &d_leaves, &model.discriminator.params),
    ];

    let eval = |m: &TBiGanModel| -> f64 {
        let mut tape = GradTape::new();
        let eb = m.encoder.params.bind(&mut tape, false);
        let gb = m.generator.params.bind(&mut tape, false);
        let (db, _) = m
            .discriminator
            .bind_with_leaves(&mut tape, false, spectral)
            .unwrap();
        let loss = build(&mut tape, m, &eb, &gb, &db);
        tape.value(loss).item()
    };

    let mut worst: f64 = 0.0;
    for (net, enabled) in [(0usize, check.0), (1, check.1), (2, check.2)] {
        if !enabled {
            continue;
        }
        let params = |m: &TBiGanModel| match net {
            0 => m.encoder.params.clone(),
            1 => m.generator.params.clone(),
            _ => m.discriminator.params.clone(),
        };
        let base = params(model);
        for i in 0..base.len() {
            for j in 0..base.tensor_at(i).numel() {
                let mut m = model.clone();
                {
                    let ps = match net {
                        0 => &mut m.encoder.params,
                        1 => &mut m.generator.params,
                        _ => &mut m.discriminator.params,
                    };
                    ps.tensor_mut_at(i).data_mut()[j] += FD_H;
                }
                let fp = eval(&m);
                {
                    let ps = match net {
                        0 => &mut m.encoder.params,
                        1 => &mut m.generator.params,
                        _ => &mut m.discriminator.params,
                    };
                    ps.tensor_mut_at(i).data_mut()[j] -= 2.0 * FD_H;
                }
                let fm = eval(&m);
                let numeric = (fp - fm) / (2.0 * FD_H);
                worst = worst.max(rel_err(analytic[net][i][j], numeric));
            }
        }
    }
    worst
}

/// Random projection turning any output into a scalar loss.
pub fn wsum(tape: &mut GradTape, x: ValueId, rng: &mut ChaCha8Rng) -> ValueId {
    let shape = tape.value(x).shape().to_vec();
    let r = tape.constant(Tensor::randn(&shape, 1.0, rng));
    let p = tape.mul(x, r).unwrap();
    tape.sum_all(p).unwrap()
}

/// Attention parameter set with random weights; returns indices in
/// q.w, q.b, k.w, k.b, v.w, v.b, o.w, o.b order.
pub fn attention_param_set(d: usize, rng: &mut ChaCha8Rng) -> (ParamSet, Vec<usize>) {
    let mut ps = ParamSet::new();
    let mut idx = Vec::new();
    for name in ["q", "k", "v", "o"] {
        idx.push(
            ps.register(format!("{name}.w"), Tensor::randn(&[d, d], 0.3, rng))
                .index(),
        );
        idx.push(
            ps.register(format!("{name}.b"), Tensor::randn(&[d], 0.1, rng))
                .index(),
        );
    }
    (ps, idx)
}

pub fn attention_from(bound: &Bound, idx: &[usize]) -> AttentionParams {
    AttentionParams {
        wq: bound.ids[idx[0]],
        bq: bound.ids[idx[1]],
        wk: bound.ids[idx[2]],
        bk: bound.ids[idx[3]],
        wv: bound.ids[idx[4]],
        bv: bound.ids[idx[5]],
        wo: bound.ids[idx[6]],
        bo: bound.ids[idx[7]],
    }
}

/// Transformer-block parameter set with random weights.
pub fn block_param_set(d: usize, hidden: usize, rng: &mut ChaCha8Rng) -> (ParamSet, Vec<usize>) {
    let mut ps = ParamSet::new();
    let mut idx = Vec::new();
    let ones = Tensor::new(vec![d], vec![1.0; d]).unwrap();
    idx.push(ps.register("ln1.gain", ones.clone()).index());
    idx.push(ps.register("ln1.bias", Tensor::randn(&[d], 0.05, rng)).index());
    for name in ["q", "k", "v", "o"] {
        idx.push(
            ps.register(format!("attn.{name}.w"), Tensor::randn(&[d, d], 0.3, rng))
                .index(),
        );
        idx.push(
            ps.register(format!("attn.{name}.b"), Tensor::randn(&[d], 0.1, rng))
                .index(),
        );
    }
    idx.push(ps.register("ln2.gain", ones).index());
    idx.push(ps.register("ln2.bias", Tensor::randn(&[d], 0.05, rng)).index());
    idx.push(ps.register("fc1.w", Tensor::randn(&[d, hidden], 0.3, rng)).index());
    idx.push(ps.register("fc1.b", Tensor::randn(&[hidden], 0.1, rng)).index());
    idx.push(ps.register("fc2.w", Tensor::randn(&[hidden, d], 0.3, rng)).index());
    idx.push(ps.register("fc2.b", Tensor::randn(&[d], 0.1, rng)).index());
    (ps, idx)
}

pub fn block_from(bound: &Bound, idx: &[usize]) -> BlockParams {
    BlockParams {
        ln1_gain: bound.ids[idx[0]],
        ln1_bias: bound.ids[idx[1]],
        attn: AttentionParams {
            wq: bound.ids[idx[2]],
            bq: bound.ids[idx[3]],
            wk: bound.ids[idx[4]],
            bk: bound.ids[idx[5]],
            wv: bound.ids[idx[6]],
            bv: bound.ids[idx[7]],
            wo: bound.ids[idx[8]],
            bo: bound.ids[idx[9]],
        },
        ln2_gain: bound.ids[idx[10]],
        ln2_bias: bound.ids[idx[11]],
        fc1_w: bound.ids[idx[12]],
        fc1_b: bound.ids[idx[13]],
        fc2_w: bound.ids[idx[14]],
        fc2_b: bound.ids[idx[15]],
    }
}

/// Fresh deterministic RNG for eval-mode forwards (dropout off anyway).
pub fn eval_rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0)
}

/// Gaussian latent draw helper.
pub fn randn_vec(n: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn(&[n], 1.0, rng)
}

/// Uniform in [lo, hi).
pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}
