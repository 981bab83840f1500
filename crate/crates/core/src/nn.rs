//! Learnable layers: embedding lookup, GRU, bidirectional GRU, additive
//! attention pooling, dense projections and the binary cross-entropy loss.
//!
//! Layers work on batches of row vectors: an input of shape `[B × dim]`
//! holds `B` independent examples. A single vector is a `[1 × dim]` matrix.
//! Parameter structs own plain tensors; `bind` registers them on a graph and
//! returns the matching `*Vars` handles.

use std::io::BufRead;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Half-width of the uniform range used for weight initialization.
pub const DEFAULT_INIT_SCALE: f64 = 0.05;

/// Ordered access to every tensor of a parameter set. Optimizers and
/// checkpoints rely on the order being stable.
pub trait ParamSet<S: Scalar> {
    fn tensors(&self) -> Vec<&Tensor<S>>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor<S>>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }
}

// ---------------------------------------------------------------------------
// Embedding

/// Token embedding matrix. Row 0 is the padding row and stays zero.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable<S> {
    pub matrix: Tensor<S>,
    pub trainable: bool,
}

impl<S: Scalar> EmbeddingTable<S> {
    pub fn new<R: Rng + ?Sized>(vocab_size: usize, dim: usize, scale: f64, rng: &mut R) -> Self {
        let mut matrix = Tensor::uniform(&[vocab_size, dim], scale, rng);
        matrix.row_mut(0).fill(S::zero());
        Self { matrix, trainable: true }
    }

    pub fn vocab_size(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.matrix.shape()[1]
    }

    pub fn bind<'p>(&'p self, g: &mut Graph<'p, S>) -> Var {
        if self.trainable {
            g.param(&self.matrix)
        } else {
            g.constant_ref(&self.matrix)
        }
    }

    pub fn clear_padding(&mut self) {
        self.matrix.row_mut(0).fill(S::zero());
    }

    /// Overwrites rows for tokens found in `vectors`. Returns how many rows
    /// were filled; the rest keep their random initialization.
    pub fn apply_pretrained(
        &mut self,
        vectors: &[(String, Vec<f64>)],
        id_of: impl Fn(&str) -> Option<usize>,
    ) -> Result<usize> {
        let dim = self.dim();
        let mut filled = 0;
        for (token, values) in vectors {
            if values.len() != dim {
                return Err(Error::invalid(format!(
                    "pretrained vector for {token:?} has {} values, table dim is {dim}",
                    values.len()
                )));
            }
            if let Some(id) = id_of(token) {
                if id == 0 || id >= self.vocab_size() {
                    continue;
                }
                for (dst, &v) in self.matrix.row_mut(id).iter_mut().zip(values) {
                    *dst = S::of(v);
                }
                filled += 1;
            }
        }
        Ok(filled)
    }
}

impl<S: Scalar> ParamSet<S> for EmbeddingTable<S> {
    fn tensors(&self) -> Vec<&Tensor<S>> {
        vec![&self.matrix]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<S>> {
        vec![&mut self.matrix]
    }
}

/// Reads pretrained vectors: one entry per line, a token followed by `dim`
/// space-separated decimals.
pub fn read_pretrained<R: BufRead>(reader: R, dim: usize) -> Result<Vec<(String, Vec<f64>)>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(' ');
        let token = parts.next().unwrap_or_default().to_string();
        let values = parts
            .filter(|p| !p.is_empty())
            .map(|p| p.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse { line: lineno, message: e.to_string() })?;
        if values.len() != dim {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected {dim} values, found {}", values.len()),
            });
        }
        out.push((token, values));
    }
    Ok(out)
}

/// Row lookup. The result has one row per id.
pub fn embed<S: Scalar>(g: &mut Graph<'_, S>, table: Var, ids: &[usize]) -> Result<Var> {
    if ids.is_empty() {
        return Err(Error::Empty("token id sequence"));
    }
    g.gather_rows(table, ids)
}

// ---------------------------------------------------------------------------
// GRU

/// Gated recurrent unit parameters. Input weights map `input_dim → hidden_dim`
/// and are applied as `x · W`.
#[derive(Clone, Debug, PartialEq)]
pub struct GruParams<S> {
    pub w_z: Tensor<S>,
    pub w_r: Tensor<S>,
    pub w_h: Tensor<S>,
    pub u_z: Tensor<S>,
    pub u_r: Tensor<S>,
    pub u_h: Tensor<S>,
    pub b_z: Tensor<S>,
    pub b_r: Tensor<S>,
    pub b_h: Tensor<S>,
}

#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    pub w_z: Var,
    pub w_r: Var,
    pub w_h: Var,
    pub u_z: Var,
    pub u_r: Var,
    pub u_h: Var,
    pub b_z: Var,
    pub b_r: Var,
    pub b_h: Var,
}

impl GruVars {
    /// Handles in [`ParamSet::tensors`] order.
    pub fn from_leaves(v: &[Var]) -> Self {
        assert_eq!(v.len(), 9, "a GRU has nine parameter tensors");
        Self { w_z: v[0], w_r: v[1], w_h: v[2], u_z: v[3], u_r: v[4], u_h: v[5], b_z: v[6], b_r: v[7], b_h: v[8] }
    }
}

impl<S: Scalar> GruParams<S> {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, scale: f64, rng: &mut R) -> Self {
        let mut w = || Tensor::uniform(&[input_dim, hidden_dim], scale, rng);
        let (w_z, w_r, w_h) = (w(), w(), w());
        let mut u = || Tensor::uniform(&[hidden_dim, hidden_dim], scale, rng);
        let (u_z, u_r, u_h) = (u(), u(), u());
        let b = || Tensor::zeros(&[hidden_dim]);
        Self { w_z, w_r, w_h, u_z, u_r, u_h, b_z: b(), b_r: b(), b_h: b() }
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let w = || Tensor::zeros(&[input_dim, hidden_dim]);
        let u = || Tensor::zeros(&[hidden_dim, hidden_dim]);
        let b = || Tensor::zeros(&[hidden_dim]);
        Self { w_z: w(), w_r: w(), w_h: w(), u_z: u(), u_r: u(), u_h: u(), b_z: b(), b_r: b(), b_h: b() }
    }

    pub fn input_dim(&self) -> usize {
        self.w_z.shape()[0]
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_z.shape()[1]
    }

    pub fn bind<'p>(&'p self, g: &mut Graph<'p, S>) -> GruVars {
        GruVars {
            w_z: g.param(&self.w_z),
            w_r: g.param(&self.w_r),
            w_h: g.param(&self.w_h),
            u_z: g.param(&self.u_z),
            u_r: g.param(&self.u_r),
            u_h: g.param(&self.u_h),
            b_z: g.param(&self.b_z),
            b_r: g.param(&self.b_r),
            b_h: g.param(&self.b_h),
        }
    }
}

impl<S: Scalar> ParamSet<S> for GruParams<S> {
    fn tensors(&self) -> Vec<&Tensor<S>> {
        vec![&self.w_z, &self.w_r, &self.w_h, &self.u_z, &self.u_r, &self.u_h, &self.b_z, &self.b_r, &self.b_h]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<S>> {
        vec![
            &mut self.w_z,
            &mut self.w_r,
            &mut self.w_h,
            &mut self.u_z,
            &mut self.u_r,
            &mut self.u_h,
            &mut self.b_z,
            &mut self.b_r,
            &mut self.b_h,
        ]
    }
}

fn gate<S: Scalar>(g: &mut Graph<'_, S>, x: Var, h: Var, w: Var, u: Var, b: Var) -> Result<Var> {
    let xw = g.matmul(x, w)?;
    let hu = g.matmul(h, u)?;
    let s = g.add(xw, hu)?;
    g.add_row(s, b)
}

/// One GRU step over a batch of rows:
///
/// ```text
/// z  = σ(x·W_z + h·U_z + b_z)
/// r  = σ(x·W_r + h·U_r + b_r)
/// h̃  = tanh(x·W_h + (r ⊙ h)·U_h + b_h)
/// h' = (1 − z) ⊙ h + z ⊙ h̃
/// ```
pub fn gru_cell<S: Scalar>(g: &mut Graph<'_, S>, x: Var, h_prev: Var, p: &GruVars) -> Result<Var> {
    let (xs, hs) = (g.shape(x), g.shape(h_prev));
    if xs.len() != 2 || hs.len() != 2 || xs[0] != hs[0] {
        return Err(Error::ShapeMismatch { op: "gru_cell", left: xs.to_vec(), right: hs.to_vec() });
    }
    let zp = gate(g, x, h_prev, p.w_z, p.u_z, p.b_z)?;
    let z = g.sigmoid(zp)?;
    let rp = gate(g, x, h_prev, p.w_r, p.u_r, p.b_r)?;
    let r = g.sigmoid(rp)?;
    let rh = g.mul(r, h_prev)?;
    let cp = gate(g, x, rh, p.w_h, p.u_h, p.b_h)?;
    let cand = g.tanh(cp)?;
    let keep = g.affine(z, -S::one(), S::one())?;
    let old = g.mul(keep, h_prev)?;
    let new = g.mul(z, cand)?;
    g.add(old, new)
}

/// Bidirectional GRU over a sequence of step inputs `xs[t]`, each `[B × in]`.
/// Step `t` of the result is `[fwd state after x_0..x_t | bwd state after
/// x_{T-1}..x_t]`, shape `[B × 2·hidden]`. Both directions start from zero.
pub fn bigru_steps<S: Scalar>(g: &mut Graph<'_, S>, xs: &[Var], fwd: &GruVars, bwd: &GruVars) -> Result<Vec<Var>> {
    let first = *xs.first().ok_or(Error::Empty("GRU input sequence"))?;
    let batch = g.shape(first)[0];
    let (hf, hb) = (g.shape(fwd.u_z)[0], g.shape(bwd.u_z)[0]);
    if hf != hb {
        return Err(Error::ShapeMismatch { op: "bigru", left: vec![hf], right: vec![hb] });
    }
    let h0 = g.constant(Tensor::zeros(&[batch, hf]));

    let mut forward = Vec::with_capacity(xs.len());
    let mut h = h0;
    for &x in xs {
        h = gru_cell(g, x, h, fwd)?;
        forward.push(h);
    }
    let mut backward = vec![h0; xs.len()];
    let mut h = h0;
    for (t, &x) in xs.iter().enumerate().rev() {
        h = gru_cell(g, x, h, bwd)?;
        backward[t] = h;
    }
    forward.into_iter().zip(backward).map(|(f, b)| g.concat_cols(&[f, b])).collect()
}

/// Bidirectional encoding of one sequence `xs: [T × in]` into `[T × 2·hidden]`.
pub fn bigru_encode<S: Scalar>(g: &mut Graph<'_, S>, xs: Var, fwd: &GruVars, bwd: &GruVars) -> Result<Var> {
    let steps = match g.shape(xs) {
        [t, _] => *t,
        s => return Err(Error::invalid(format!("bigru_encode expects [T × dim], got {s:?}"))),
    };
    let rows = (0..steps).map(|t| g.gather_rows(xs, &[t])).collect::<Result<Vec<_>>>()?;
    let outs = bigru_steps(g, &rows, fwd, bwd)?;
    g.concat_rows(&outs)
}

// ---------------------------------------------------------------------------
// Attention

/// Additive attention: `u_t = tanh(h_t·W_a + b_a)`, score `u_t · u_ctx`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<S> {
    pub w_a: Tensor<S>,
    pub b_a: Tensor<S>,
    pub u_ctx: Tensor<S>,
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub w_a: Var,
    pub b_a: Var,
    /// `u_ctx` reshaped to a column `[attn_dim × 1]`.
    pub u_col: Var,
}

impl AttentionVars {
    /// Binds from `[w_a, b_a, u_ctx]` leaves.
    pub fn from_leaves<S: Scalar>(g: &mut Graph<'_, S>, v: &[Var]) -> Result<Self> {
        assert_eq!(v.len(), 3, "attention has three parameter tensors");
        let a = g.shape(v[2])[0];
        Ok(Self { w_a: v[0], b_a: v[1], u_col: g.reshape(v[2], vec![a, 1])? })
    }
}

impl<S: Scalar> AttentionParams<S> {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, attn_dim: usize, scale: f64, rng: &mut R) -> Self {
        Self {
            w_a: Tensor::uniform(&[input_dim, attn_dim], scale, rng),
            b_a: Tensor::zeros(&[attn_dim]),
            u_ctx: Tensor::uniform(&[attn_dim], scale, rng),
        }
    }

    pub fn attn_dim(&self) -> usize {
        self.u_ctx.numel()
    }

    pub fn bind<'p>(&'p self, g: &mut Graph<'p, S>) -> Result<AttentionVars> {
        let leaves = [g.param(&self.w_a), g.param(&self.b_a), g.param(&self.u_ctx)];
        AttentionVars::from_leaves(g, &leaves)
    }
}

impl<S: Scalar> ParamSet<S> for AttentionParams<S> {
    fn tensors(&self) -> Vec<&Tensor<S>> {
        vec![&self.w_a, &self.b_a, &self.u_ctx]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<S>> {
        vec![&mut self.w_a, &mut self.b_a, &mut self.u_ctx]
    }
}

/// Attention pooling over step states `hs[t]`, each `[B × d]`. Returns the
/// pooled context `[B × d]` and the weights `[B × T]` (each row sums to 1).
pub fn attention_steps<S: Scalar>(g: &mut Graph<'_, S>, hs: &[Var], p: &AttentionVars) -> Result<(Var, Var)> {
    if hs.is_empty() {
        return Err(Error::Empty("attention input"));
    }
    let mut scores = Vec::with_capacity(hs.len());
    for &h in hs {
        let proj = g.matmul(h, p.w_a)?;
        let proj = g.add_row(proj, p.b_a)?;
        let u = g.tanh(proj)?;
        scores.push(g.matmul(u, p.u_col)?);
    }
    let scores = if scores.len() == 1 { scores[0] } else { g.concat_cols(&scores)? };
    let alpha = g.softmax(scores)?;
    let mut ctx = None;
    for (t, &h) in hs.iter().enumerate() {
        let a_t = if hs.len() == 1 { alpha } else { g.slice_cols(alpha, t, 1)? };
        let term = g.mul_col(h, a_t)?;
        ctx = Some(match ctx {
            None => term,
            Some(acc) => g.add(acc, term)?,
        });
    }
    Ok((ctx.expect("non-empty"), alpha))
}

/// Attention pooling of one sequence `[T × d]`: `(context [d], weights [T])`.
pub fn attention_pool<S: Scalar>(g: &mut Graph<'_, S>, states: Var, p: &AttentionVars) -> Result<(Var, Var)> {
    let (steps, d) = match g.shape(states) {
        [t, d] => (*t, *d),
        s => return Err(Error::invalid(format!("attention_pool expects [T × d], got {s:?}"))),
    };
    let rows = (0..steps).map(|t| g.gather_rows(states, &[t])).collect::<Result<Vec<_>>>()?;
    let (ctx, alpha) = attention_steps(g, &rows, p)?;
    let ctx = g.reshape(ctx, vec![d])?;
    let alpha = g.reshape(alpha, vec![steps])?;
    Ok((ctx, alpha))
}

// ---------------------------------------------------------------------------
// Dense and loss

#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams<S> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

#[derive(Clone, Copy, Debug)]
pub struct DenseVars {
    pub weight: Var,
    pub bias: Var,
}

impl DenseVars {
    pub fn from_leaves(v: &[Var]) -> Self {
        assert_eq!(v.len(), 2, "a dense layer has two parameter tensors");
        Self { weight: v[0], bias: v[1] }
    }
}

impl<S: Scalar> DenseParams<S> {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, output_dim: usize, scale: f64, rng: &mut R) -> Self {
        Self { weight: Tensor::uniform(&[input_dim, output_dim], scale, rng), bias: Tensor::zeros(&[output_dim]) }
    }

    pub fn zeros(input_dim: usize, output_dim: usize) -> Self {
        Self { weight: Tensor::zeros(&[input_dim, output_dim]), bias: Tensor::zeros(&[output_dim]) }
    }

    pub fn bind<'p>(&'p self, g: &mut Graph<'p, S>) -> DenseVars {
        DenseVars { weight: g.param(&self.weight), bias: g.param(&self.bias) }
    }
}

impl<S: Scalar> ParamSet<S> for DenseParams<S> {
    fn tensors(&self) -> Vec<&Tensor<S>> {
        vec![&self.weight, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<S>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// `x · W + b` for a batch of rows.
pub fn dense<S: Scalar>(g: &mut Graph<'_, S>, x: Var, p: &DenseVars) -> Result<Var> {
    let xw = g.matmul(x, p.weight)?;
    g.add_row(xw, p.bias)
}

/// Binary cross-entropy of a single logit against a 0/1 label.
pub fn bce_loss<S: Scalar>(g: &mut Graph<'_, S>, logit: Var, label: bool) -> Result<Var> {
    if !g.value(logit).is_scalar() {
        return Err(Error::NotScalar(g.shape(logit).to_vec()));
    }
    let y = if label { S::one() } else { S::zero() };
    g.bce_logits(logit, &[y], &[S::one()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn row(g: &mut Graph<'_, f64>, v: Vec<f64>) -> Var {
        let n = v.len();
        g.constant(Tensor::new(vec![1, n], v).unwrap())
    }

    #[test]
    fn padding_row_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let table = EmbeddingTable::<f64>::new(10, 4, 0.05, &mut rng);
        let mut g = Graph::new();
        let t = table.bind(&mut g);
        let e = embed(&mut g, t, &[0]).unwrap();
        assert!(g.value(e).data().iter().all(|&v| v == 0.0));
        assert!(matches!(embed(&mut g, t, &[10]), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn repeated_ids_sum_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let table = EmbeddingTable::<f64>::new(8, 3, 0.05, &mut rng);
        let mut g = Graph::new();
        let t = table.bind(&mut g);
        let e = embed(&mut g, t, &[5, 5]).unwrap();
        let r0 = g.value(e).row(0).to_vec();
        assert_eq!(r0, g.value(e).row(1));
        let w = g.constant(Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![10.0, 20.0, 30.0]]).unwrap());
        let prod = g.mul(e, w).unwrap();
        let loss = g.sum(prod).unwrap();
        g.backward(loss).unwrap();
        let grad = g.grad(t).unwrap();
        assert_eq!(&grad[15..18], &[11.0, 22.0, 33.0]);
        assert!(grad[..15].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frozen_embedding_gets_no_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut table = EmbeddingTable::<f64>::new(8, 3, 0.05, &mut rng);
        table.trainable = false;
        let mut g = Graph::new();
        let t = table.bind(&mut g);
        let e = embed(&mut g, t, &[3]).unwrap();
        let loss = g.sum(e).unwrap();
        g.backward(loss).unwrap();
        assert!(g.grad(t).is_none());
    }

    #[test]
    fn zero_gru_halves_previous_state() {
        let p = GruParams::<f64>::zeros(3, 2);
        let mut g = Graph::new();
        let v = p.bind(&mut g);
        let x = row(&mut g, vec![0.3, -1.0, 2.0]);
        let h = row(&mut g, vec![0.8, -0.4]);
        let out = gru_cell(&mut g, x, h, &v).unwrap();
        assert_eq!(g.value(out).data(), &[0.4, -0.2]);
        let h0 = row(&mut g, vec![0.0, 0.0]);
        let out = gru_cell(&mut g, x, h0, &v).unwrap();
        assert_eq!(g.value(out).data(), &[0.0, 0.0]);
    }

    #[test]
    fn gru_rejects_batch_mismatch() {
        let p = GruParams::<f64>::zeros(3, 2);
        let mut g = Graph::new();
        let v = p.bind(&mut g);
        let x = g.constant(Tensor::zeros(&[2, 3]));
        let h = g.constant(Tensor::zeros(&[1, 2]));
        assert!(gru_cell(&mut g, x, h, &v).is_err());
    }

    #[test]
    fn single_step_attention_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = AttentionParams::<f64>::new(4, 3, 0.5, &mut rng);
        let mut g = Graph::new();
        let v = p.bind(&mut g).unwrap();
        let h = g.constant(Tensor::from_rows(&[vec![0.1, 0.2, 0.3, 0.4]]).unwrap());
        let (ctx, w) = attention_pool(&mut g, h, &v).unwrap();
        assert_eq!(g.value(w).data(), &[1.0]);
        assert_eq!(g.value(ctx).data(), &[0.1, 0.2, 0.3, 0.4]);
    }

    #[test]
    fn identical_rows_get_equal_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = AttentionParams::<f64>::new(2, 3, 0.5, &mut rng);
        let mut g = Graph::new();
        let v = p.bind(&mut g).unwrap();
        let h = g.constant(Tensor::from_rows(&[vec![0.7, -0.1], vec![0.7, -0.1]]).unwrap());
        let (ctx, w) = attention_pool(&mut g, h, &v).unwrap();
        assert_eq!(g.value(w).data(), &[0.5, 0.5]);
        assert_eq!(g.value(ctx).data(), &[0.7, -0.1]);
    }

    #[test]
    fn bce_reference_values() {
        let mut g = Graph::<f64>::new();
        let cases = [(0.0, true, 2f64.ln()), (0.0, false, 2f64.ln()), (10.0, true, (-10f64).exp().ln_1p())];
        for (z, y, want) in cases {
            let l = g.constant(Tensor::scalar(z));
            let loss = bce_loss(&mut g, l, y).unwrap();
            assert!((g.value(loss).item() - want).abs() < 1e-15);
        }
    }

    #[test]
    fn pretrained_loader_reports_bad_line() {
        let text = "the 0.1 0.2 0.3\ncat 0.4 0.5\n";
        let err = read_pretrained(text.as_bytes(), 3).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let ok = read_pretrained("the 0.1 0.2 0.3\n".as_bytes(), 3).unwrap();
        assert_eq!(ok[0].0, "the");
        assert_eq!(ok[0].1, vec![0.1, 0.2, 0.3]);
    }

    #[test]
    fn apply_pretrained_fills_known_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut table = EmbeddingTable::<f64>::new(4, 2, 0.05, &mut rng);
        let vectors = vec![("a".to_string(), vec![1.0, 2.0]), ("zz".to_string(), vec![3.0, 4.0])];
        let filled = table.apply_pretrained(&vectors, |t| (t == "a").then_some(2)).unwrap();
        assert_eq!(filled, 1);
        assert_eq!(table.matrix.row(2), &[1.0, 2.0]);
    }
}
