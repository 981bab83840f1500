//! Self-checks of the differentiable layers: finite-difference gradient
//! checks and a graph-free reference GRU.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Vocabulary;
use crate::error::Result;
use crate::graph::{grad_check, Graph, Var};
use crate::han::{forward_graph, EncodedUser, HanConfig, HanParams, HanVars};
use crate::nn::{
    attention_pool, bce_loss, bigru_encode, dense, embed, gru_cell, AttentionVars, DenseVars, GruParams, GruVars,
    ParamSet,
};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub name: &'static str,
    pub num_params: usize,
    pub max_rel_error: f64,
}

const SCALE: f64 = 0.8;

/// Step for [`gradient_checks`]. Some toy-HAN coordinates have gradients
/// near 1e-7, which smaller steps drown in round-off.
pub const GRAD_CHECK_EPS: f64 = 3e-3;

fn rand_t(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::uniform(shape, SCALE, rng)
}

/// `Σ (x ⊙ r)` for a fixed random `r`, so every output coordinate gets a
/// distinct weight in the objective.
fn project(g: &mut Graph<'_, f64>, x: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = g.constant(Tensor::uniform(g.shape(x), 1.0, &mut rng));
    let p = g.mul(x, r)?;
    g.sum(p)
}

fn report(name: &'static str, params: &[Tensor<f64>], worst: f64) -> GradReport {
    GradReport { name, num_params: params.iter().map(Tensor::numel).sum(), max_rel_error: worst }
}

fn gru_tensors(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    let mut p = GruParams::<f64>::new(input, hidden, SCALE, rng);
    for b in [&mut p.b_z, &mut p.b_r, &mut p.b_h] {
        *b = rand_t(&[hidden], rng);
    }
    p.tensors().into_iter().cloned().collect()
}

/// A tiny HAN and a two-post user for end-to-end checks.
pub fn toy_han(seed: u64) -> Result<(HanParams<f64>, EncodedUser)> {
    let vocab = Vocabulary::from_tokens(["<pad>", "<unk>", "a", "b", "c", "d"].map(String::from).to_vec(), 1);
    let cfg = HanConfig {
        embed_dim: 3,
        gru_hidden: 2,
        attn_dim: 2,
        penultimate_dim: 2,
        min_freq: 1,
        init_scale: SCALE,
        ..HanConfig::default()
    };
    let mut params = HanParams::new(&cfg, vocab.len(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    for t in params.tensors_mut() {
        if t.shape().len() == 1 {
            *t = rand_t(t.shape(), &mut rng);
        }
    }
    let user = EncodedUser {
        user_id: "toy".into(),
        label: None,
        posts: vec![vec![2, 3, 4], vec![5, 2]],
        tokens: vec![vec!["a".into(), "b".into(), "c".into()], vec!["d".into(), "a".into()]],
    };
    Ok((params, user))
}

/// Central-difference checks of every layer and of a two-post HAN, in
/// 64-bit arithmetic.
pub fn gradient_checks(seed: u64, eps: f64) -> Result<Vec<GradReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let params = vec![rand_t(&[6, 3], &mut rng)];
    let worst = grad_check(
        |g, v| {
            let e = embed(g, v[0], &[1, 4, 4, 2])?;
            let t = g.tanh(e)?;
            project(g, t, 1)
        },
        &params,
        eps,
    )?;
    out.push(report("embedding", &params, worst));

    let mut params = vec![rand_t(&[2, 3], &mut rng), rand_t(&[2, 2], &mut rng)];
    params.extend(gru_tensors(3, 2, &mut rng));
    let worst = grad_check(
        |g, v| {
            let h = gru_cell(g, v[0], v[1], &GruVars::from_leaves(&v[2..11]))?;
            project(g, h, 2)
        },
        &params,
        eps,
    )?;
    out.push(report("gru_cell", &params, worst));

    let mut params = vec![rand_t(&[4, 3], &mut rng)];
    params.extend(gru_tensors(3, 2, &mut rng));
    params.extend(gru_tensors(3, 2, &mut rng));
    let worst = grad_check(
        |g, v| {
            let h = bigru_encode(g, v[0], &GruVars::from_leaves(&v[1..10]), &GruVars::from_leaves(&v[10..19]))?;
            project(g, h, 3)
        },
        &params,
        eps,
    )?;
    out.push(report("bigru_encode", &params, worst));

    let params = vec![rand_t(&[4, 5], &mut rng), rand_t(&[5, 3], &mut rng), rand_t(&[3], &mut rng), rand_t(&[3], &mut rng)];
    let worst = grad_check(
        |g, v| {
            let p = AttentionVars::from_leaves(g, &v[1..4])?;
            let (ctx, alpha) = attention_pool(g, v[0], &p)?;
            let a = project(g, ctx, 4)?;
            let b = project(g, alpha, 5)?;
            g.add(a, b)
        },
        &params,
        eps,
    )?;
    out.push(report("attention_pool", &params, worst));

    let params = vec![rand_t(&[3, 4], &mut rng), rand_t(&[4, 2], &mut rng), rand_t(&[2], &mut rng)];
    let worst = grad_check(
        |g, v| {
            let y = dense(g, v[0], &DenseVars::from_leaves(&v[1..3]))?;
            let t = g.tanh(y)?;
            project(g, t, 6)
        },
        &params,
        eps,
    )?;
    out.push(report("dense", &params, worst));

    let params = vec![Tensor::scalar(0.7), Tensor::scalar(-1.3)];
    let worst = grad_check(
        |g, v| {
            let a = bce_loss(g, v[0], true)?;
            let b = bce_loss(g, v[1], false)?;
            g.add(a, b)
        },
        &params,
        eps,
    )?;
    out.push(report("bce_loss", &params, worst));

    let (han, user) = toy_han(seed)?;
    let params: Vec<Tensor<f64>> = han.tensors().into_iter().cloned().collect();
    let worst = grad_check(
        |g, v| {
            let vars = HanVars::from_leaves(g, v.to_vec())?;
            let fwd = forward_graph(g, &vars, &[&user])?;
            g.bce_logits(fwd.logits, &[1.0], &[1.0])
        },
        &params,
        eps,
    )?;
    out.push(report("han_two_posts", &params, worst));
    Ok(out)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn row_times(x: &[f64], w: &Tensor<f64>) -> Vec<f64> {
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    (0..cols).map(|j| (0..rows).map(|i| x[i] * w.data()[i * cols + j]).sum()).collect()
}

/// One GRU step written out with plain loops.
pub fn reference_gru_step(x: &[f64], h: &[f64], p: &GruParams<f64>) -> Vec<f64> {
    let pre = |w, u, b: &Tensor<f64>, hh: &[f64]| -> Vec<f64> {
        let xw = row_times(x, w);
        let hu = row_times(hh, u);
        (0..h.len()).map(|k| xw[k] + hu[k] + b.data()[k]).collect()
    };
    let z: Vec<f64> = pre(&p.w_z, &p.u_z, &p.b_z, h).into_iter().map(sigmoid).collect();
    let r: Vec<f64> = pre(&p.w_r, &p.u_r, &p.b_r, h).into_iter().map(sigmoid).collect();
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    let cand: Vec<f64> = pre(&p.w_h, &p.u_h, &p.b_h, &rh).into_iter().map(f64::tanh).collect();
    (0..h.len()).map(|k| (1.0 - z[k]) * h[k] + z[k] * cand[k]).collect()
}

/// Bidirectional GRU over `xs` by explicit per-step loops; each output row
/// is `[forward | backward]`.
pub fn reference_bigru(xs: &[Vec<f64>], fwd: &GruParams<f64>, bwd: &GruParams<f64>) -> Vec<Vec<f64>> {
    let hidden = fwd.hidden_dim();
    let mut f = Vec::with_capacity(xs.len());
    let mut h = vec![0.0; hidden];
    for x in xs {
        h = reference_gru_step(x, &h, fwd);
        f.push(h.clone());
    }
    let mut b = vec![Vec::new(); xs.len()];
    let mut h = vec![0.0; hidden];
    for t in (0..xs.len()).rev() {
        h = reference_gru_step(&xs[t], &h, bwd);
        b[t] = h.clone();
    }
    f.into_iter().zip(b).map(|(mut a, b)| {
        a.extend(b);
        a
    }).collect()
}
