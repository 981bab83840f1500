//! Hierarchical attention network over users.
//!
//! A user is a sequence of posts and a post is a sequence of tokens. The word
//! level (embedding → biGRU → attention) turns each post into a vector; the
//! post level (biGRU → attention) turns the sequence of post vectors into a
//! user vector, which a `tanh` dense layer and a linear output unit map to a
//! single logit. The diagnosed class is the positive one.
//!
//! Batches are evaluated by grouping posts of equal length (and users with
//! equal post counts) into matrices, so no padding or masking is involved and
//! each row goes through exactly the arithmetic a single-user pass would.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::{parse_value, Configurable};
use crate::corpus::{tokenize, Label, Split, UserRecord, Vocabulary};
use crate::error::{Error, Result};
use crate::graph::{sigmoid, Graph, Var};
use crate::nn::{
    attention_steps, bigru_steps, dense, embed, AttentionParams, AttentionVars, DenseParams, DenseVars,
    EmbeddingTable, GruParams, GruVars, ParamSet, DEFAULT_INIT_SCALE,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHECKPOINT_KIND: &str = "han";

#[derive(Clone, Debug, PartialEq)]
pub struct HanConfig {
    pub embed_dim: usize,
    /// Hidden size of each GRU direction.
    pub gru_hidden: usize,
    pub attn_dim: usize,
    pub penultimate_dim: usize,
    pub max_tokens_per_post: usize,
    pub max_posts_per_user: Option<usize>,
    pub min_freq: usize,
    pub init_scale: f64,
    pub freeze_embeddings: bool,
}

impl Default for HanConfig {
    fn default() -> Self {
        Self {
            embed_dim: 300,
            gru_hidden: 150,
            attn_dim: 100,
            penultimate_dim: 50,
            max_tokens_per_post: 128,
            max_posts_per_user: None,
            min_freq: 2,
            init_scale: DEFAULT_INIT_SCALE,
            freeze_embeddings: false,
        }
    }
}

impl HanConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.embed_dim, self.gru_hidden, self.attn_dim, self.penultimate_dim, self.max_tokens_per_post];
        if dims.contains(&0) || self.max_posts_per_user == Some(0) || self.min_freq == 0 {
            return Err(Error::invalid("HAN dimensions, caps and min_freq must be positive"));
        }
        Ok(())
    }

    /// Width of a bidirectional encoder state.
    pub fn encoder_dim(&self) -> usize {
        2 * self.gru_hidden
    }
}

impl Configurable for HanConfig {
    fn set(&mut self, key: &str, value: &str, line: usize) -> Result<bool> {
        match key {
            "embed_dim" => self.embed_dim = parse_value(key, value, line)?,
            "gru_hidden" => self.gru_hidden = parse_value(key, value, line)?,
            "attn_dim" => self.attn_dim = parse_value(key, value, line)?,
            "penultimate_dim" => self.penultimate_dim = parse_value(key, value, line)?,
            "max_tokens_per_post" => self.max_tokens_per_post = parse_value(key, value, line)?,
            "max_posts_per_user" => {
                self.max_posts_per_user = match value {
                    "" | "none" => None,
                    v => Some(parse_value(key, v, line)?),
                }
            }
            "min_freq" => self.min_freq = parse_value(key, value, line)?,
            "init_scale" => self.init_scale = parse_value(key, value, line)?,
            "freeze_embeddings" => self.freeze_embeddings = parse_value(key, value, line)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("embed_dim", self.embed_dim.to_string()),
            ("gru_hidden", self.gru_hidden.to_string()),
            ("attn_dim", self.attn_dim.to_string()),
            ("penultimate_dim", self.penultimate_dim.to_string()),
            ("max_tokens_per_post", self.max_tokens_per_post.to_string()),
            ("max_posts_per_user", self.max_posts_per_user.map_or("none".into(), |n| n.to_string())),
            ("min_freq", self.min_freq.to_string()),
            ("init_scale", self.init_scale.to_string()),
            ("freeze_embeddings", self.freeze_embeddings.to_string()),
        ]
    }
}

const GRU_FIELDS: [&str; 9] = ["w_z", "w_r", "w_h", "u_z", "u_r", "u_h", "b_z", "b_r", "b_h"];
const ATTN_FIELDS: [&str; 3] = ["w_a", "b_a", "u_ctx"];
const DENSE_FIELDS: [&str; 2] = ["weight", "bias"];

/// Every learnable tensor of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct HanParams<S> {
    pub embedding: EmbeddingTable<S>,
    pub word_fwd: GruParams<S>,
    pub word_bwd: GruParams<S>,
    pub word_attn: AttentionParams<S>,
    pub post_fwd: GruParams<S>,
    pub post_bwd: GruParams<S>,
    pub post_attn: AttentionParams<S>,
    pub hidden: DenseParams<S>,
    pub output: DenseParams<S>,
}

#[derive(Clone, Debug)]
pub struct HanVars {
    pub embedding: Var,
    pub word_fwd: GruVars,
    pub word_bwd: GruVars,
    pub word_attn: AttentionVars,
    pub post_fwd: GruVars,
    pub post_bwd: GruVars,
    pub post_attn: AttentionVars,
    pub hidden: DenseVars,
    pub output: DenseVars,
    /// Leaf handles in [`ParamSet::tensors`] order.
    pub leaves: Vec<Var>,
}

impl<S: Scalar> HanParams<S> {
    /// Uniform `±init_scale` weights and zero biases, drawn from `seed`.
    pub fn new(cfg: &HanConfig, vocab_size: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if vocab_size < 2 {
            return Err(Error::invalid("vocabulary must contain the reserved tokens"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = cfg.init_scale;
        let enc = cfg.encoder_dim();
        let mut embedding = EmbeddingTable::new(vocab_size, cfg.embed_dim, s, &mut rng);
        embedding.trainable = !cfg.freeze_embeddings;
        Ok(Self {
            embedding,
            word_fwd: GruParams::new(cfg.embed_dim, cfg.gru_hidden, s, &mut rng),
            word_bwd: GruParams::new(cfg.embed_dim, cfg.gru_hidden, s, &mut rng),
            word_attn: AttentionParams::new(enc, cfg.attn_dim, s, &mut rng),
            post_fwd: GruParams::new(enc, cfg.gru_hidden, s, &mut rng),
            post_bwd: GruParams::new(enc, cfg.gru_hidden, s, &mut rng),
            post_attn: AttentionParams::new(enc, cfg.attn_dim, s, &mut rng),
            hidden: DenseParams::new(enc, cfg.penultimate_dim, s, &mut rng),
            output: DenseParams::new(cfg.penultimate_dim, 1, s, &mut rng),
        })
    }

    /// Tensor names in [`ParamSet::tensors`] order.
    pub fn names() -> Vec<String> {
        let mut names = vec!["embedding".to_string()];
        let groups: [(&str, &[&str]); 8] = [
            ("word_fwd", &GRU_FIELDS),
            ("word_bwd", &GRU_FIELDS),
            ("word_attn", &ATTN_FIELDS),
            ("post_fwd", &GRU_FIELDS),
            ("post_bwd", &GRU_FIELDS),
            ("post_attn", &ATTN_FIELDS),
            ("hidden", &DENSE_FIELDS),
            ("output", &DENSE_FIELDS),
        ];
        for (prefix, fields) in groups {
            names.extend(fields.iter().map(|f| format!("{prefix}.{f}")));
        }
        names
    }

    /// Binds every tensor as a leaf; a frozen embedding becomes a constant.
    pub fn bind<'p>(&'p self, g: &mut Graph<'p, S>) -> Result<HanVars> {
        let frozen = !self.embedding.trainable;
        let leaves: Vec<Var> = self
            .tensors()
            .into_iter()
            .enumerate()
            .map(|(i, t)| if i == 0 && frozen { g.constant_ref(t) } else { g.param(t) })
            .collect();
        HanVars::from_leaves(g, leaves)
    }
}

impl HanVars {
    /// Number of leaves in [`ParamSet::tensors`] order.
    pub const NUM_LEAVES: usize = 47;

    /// Assembles the layer handles from leaves in [`ParamSet::tensors`] order.
    pub fn from_leaves<S: Scalar>(g: &mut Graph<'_, S>, leaves: Vec<Var>) -> Result<Self> {
        if leaves.len() != Self::NUM_LEAVES {
            return Err(Error::invalid(format!("expected {} HAN leaves, got {}", Self::NUM_LEAVES, leaves.len())));
        }
        let l = &leaves;
        Ok(Self {
            embedding: l[0],
            word_fwd: GruVars::from_leaves(&l[1..10]),
            word_bwd: GruVars::from_leaves(&l[10..19]),
            word_attn: AttentionVars::from_leaves(g, &l[19..22])?,
            post_fwd: GruVars::from_leaves(&l[22..31]),
            post_bwd: GruVars::from_leaves(&l[31..40]),
            post_attn: AttentionVars::from_leaves(g, &l[40..43])?,
            hidden: DenseVars::from_leaves(&l[43..45]),
            output: DenseVars::from_leaves(&l[45..47]),
            leaves,
        })
    }
}

impl<S: Scalar> ParamSet<S> for HanParams<S> {
    fn tensors(&self) -> Vec<&Tensor<S>> {
        let mut v = self.embedding.tensors();
        v.extend(self.word_fwd.tensors());
        v.extend(self.word_bwd.tensors());
        v.extend(self.word_attn.tensors());
        v.extend(self.post_fwd.tensors());
        v.extend(self.post_bwd.tensors());
        v.extend(self.post_attn.tensors());
        v.extend(self.hidden.tensors());
        v.extend(self.output.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut v = self.embedding.tensors_mut();
        v.extend(self.word_fwd.tensors_mut());
        v.extend(self.word_bwd.tensors_mut());
        v.extend(self.word_attn.tensors_mut());
        v.extend(self.post_fwd.tensors_mut());
        v.extend(self.post_bwd.tensors_mut());
        v.extend(self.post_attn.tensors_mut());
        v.extend(self.hidden.tensors_mut());
        v.extend(self.output.tensors_mut());
        v
    }
}

/// A user ready for the network: token ids per post plus the surface tokens
/// the attention trace reports.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedUser {
    pub user_id: String,
    pub label: Option<Label>,
    pub posts: Vec<Vec<usize>>,
    pub tokens: Vec<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PostTrace {
    pub tokens: Vec<String>,
    pub word_weights: Vec<f64>,
}

/// Attention weights captured for one user during a forward pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    pub user_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probability: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    pub post_weights: Vec<f64>,
    pub posts: Vec<PostTrace>,
}

pub fn write_traces<W: Write>(mut w: W, traces: &[AttentionTrace]) -> Result<()> {
    for t in traces {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_traces<R: BufRead>(r: R) -> Result<Vec<AttentionTrace>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?);
    }
    Ok(out)
}

/// Graph handles for one batched forward pass.
pub struct BatchGraph {
    /// `[n × 1]` logits in input order.
    pub logits: Var,
    word_groups: Vec<(Var, Vec<(usize, usize)>)>,
    post_groups: Vec<(Var, Vec<usize>)>,
}

fn check_user(u: &EncodedUser) -> Result<()> {
    if u.posts.is_empty() {
        return Err(Error::invalid(format!("user {} has no usable posts", u.user_id)));
    }
    if let Some(j) = u.posts.iter().position(Vec::is_empty) {
        return Err(Error::invalid(format!("user {} post {j} is empty", u.user_id)));
    }
    Ok(())
}

/// Word-level encoder for a set of equal-length posts. Returns pooled post
/// vectors `[B × 2h]` and word weights `[B × T]`.
fn encode_post_group<S: Scalar>(g: &mut Graph<'_, S>, v: &HanVars, posts: &[&[usize]]) -> Result<(Var, Var)> {
    let len = posts[0].len();
    let mut steps = Vec::with_capacity(len);
    let mut ids = Vec::with_capacity(posts.len());
    for t in 0..len {
        ids.clear();
        ids.extend(posts.iter().map(|p| p[t]));
        steps.push(embed(g, v.embedding, &ids)?);
    }
    let states = bigru_steps(g, &steps, &v.word_fwd, &v.word_bwd)?;
    attention_steps(g, &states, &v.word_attn)
}

/// Builds the forward pass for `users` on `g`.
pub fn forward_graph<S: Scalar>(g: &mut Graph<'_, S>, v: &HanVars, users: &[&EncodedUser]) -> Result<BatchGraph> {
    if users.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let mut by_len: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for (ui, u) in users.iter().enumerate() {
        check_user(u)?;
        for (j, p) in u.posts.iter().enumerate() {
            by_len.entry(p.len()).or_default().push((ui, j));
        }
    }

    let mut row_of: Vec<Vec<usize>> = users.iter().map(|u| vec![0; u.posts.len()]).collect();
    let mut contexts = Vec::with_capacity(by_len.len());
    let mut word_groups = Vec::with_capacity(by_len.len());
    let mut offset = 0;
    for members in by_len.into_values() {
        let posts: Vec<&[usize]> = members.iter().map(|&(u, j)| users[u].posts[j].as_slice()).collect();
        let (ctx, alpha) = encode_post_group(g, v, &posts)?;
        for (r, &(u, j)) in members.iter().enumerate() {
            row_of[u][j] = offset + r;
        }
        offset += members.len();
        contexts.push(ctx);
        word_groups.push((alpha, members));
    }
    let post_vectors = if contexts.len() == 1 { contexts[0] } else { g.concat_rows(&contexts)? };

    let mut by_count: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (ui, u) in users.iter().enumerate() {
        by_count.entry(u.posts.len()).or_default().push(ui);
    }
    let mut user_vectors = Vec::with_capacity(by_count.len());
    let mut post_groups = Vec::with_capacity(by_count.len());
    let mut order = Vec::with_capacity(users.len());
    for (count, members) in by_count {
        let steps = (0..count)
            .map(|j| {
                let rows: Vec<usize> = members.iter().map(|&u| row_of[u][j]).collect();
                g.gather_rows(post_vectors, &rows)
            })
            .collect::<Result<Vec<_>>>()?;
        let states = bigru_steps(g, &steps, &v.post_fwd, &v.post_bwd)?;
        let (ctx, beta) = attention_steps(g, &states, &v.post_attn)?;
        user_vectors.push(ctx);
        order.extend_from_slice(&members);
        post_groups.push((beta, members));
    }
    let users_matrix = if user_vectors.len() == 1 { user_vectors[0] } else { g.concat_rows(&user_vectors)? };
    let h = dense(g, users_matrix, &v.hidden)?;
    let h = g.tanh(h)?;
    let grouped = dense(g, h, &v.output)?;

    let mut position = vec![0; users.len()];
    for (p, &u) in order.iter().enumerate() {
        position[u] = p;
    }
    let logits = g.gather_rows(grouped, &position)?;
    Ok(BatchGraph { logits, word_groups, post_groups })
}

impl BatchGraph {
    pub fn logit_values<S: Scalar>(&self, g: &Graph<'_, S>) -> Vec<S> {
        g.value(self.logits).data().to_vec()
    }

    pub fn traces<S: Scalar>(&self, g: &Graph<'_, S>, users: &[&EncodedUser]) -> Vec<AttentionTrace> {
        let mut traces: Vec<AttentionTrace> = users
            .iter()
            .map(|u| AttentionTrace {
                user_id: u.user_id.clone(),
                label: u.label,
                predicted: None,
                probability: None,
                split: None,
                post_weights: Vec::new(),
                posts: u
                    .tokens
                    .iter()
                    .map(|t| PostTrace { tokens: t.clone(), word_weights: Vec::new() })
                    .collect(),
            })
            .collect();
        for (alpha, members) in &self.word_groups {
            let a = g.value(*alpha);
            for (r, &(u, j)) in members.iter().enumerate() {
                traces[u].posts[j].word_weights = a.row(r).iter().map(|x| x.as_f64()).collect();
            }
        }
        for (beta, members) in &self.post_groups {
            let b = g.value(*beta);
            for (r, &u) in members.iter().enumerate() {
                traces[u].post_weights = b.row(r).iter().map(|x| x.as_f64()).collect();
            }
        }
        traces
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserOutput<S> {
    pub logit: S,
    pub trace: AttentionTrace,
}

impl<S: Scalar> UserOutput<S> {
    pub fn probability(&self) -> f64 {
        sigmoid(self.logit).as_f64()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub label: Label,
    pub probability: f64,
}

/// `probability ≥ threshold` is diagnosed; the tie goes to the positive class.
pub fn classify(probability: f64, threshold: f64) -> Label {
    Label::from_positive(probability >= threshold)
}

/// Configuration, vocabulary and parameters of a HAN classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct HanModel<S> {
    pub config: HanConfig,
    pub vocab: Vocabulary,
    pub params: HanParams<S>,
}

impl<S: Scalar> HanModel<S> {
    pub fn new(config: HanConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        let params = HanParams::new(&config, vocab.len(), seed)?;
        Ok(Self { config, vocab, params })
    }

    /// Tokenizes posts, drops empty ones, truncates each to
    /// `max_tokens_per_post` and keeps the first `max_posts_per_user`.
    pub fn encode(&self, user: &UserRecord) -> Result<EncodedUser> {
        let cap = self.config.max_posts_per_user.unwrap_or(usize::MAX);
        let mut posts = Vec::new();
        let mut tokens = Vec::new();
        for text in &user.posts {
            if posts.len() == cap {
                break;
            }
            let mut toks = tokenize(text);
            if toks.is_empty() {
                continue;
            }
            toks.truncate(self.config.max_tokens_per_post);
            posts.push(self.vocab.encode(&toks));
            tokens.push(toks);
        }
        if posts.is_empty() {
            return Err(Error::invalid(format!("user {} has no usable posts", user.user_id)));
        }
        Ok(EncodedUser { user_id: user.user_id.clone(), label: Some(user.label), posts, tokens })
    }

    /// Encodes every user that has at least one usable post; the rest are
    /// skipped with a warning.
    pub fn encode_all<'a>(&self, users: impl IntoIterator<Item = &'a UserRecord>) -> Vec<EncodedUser> {
        users
            .into_iter()
            .filter_map(|u| match self.encode(u) {
                Ok(e) => Some(e),
                Err(err) => {
                    log::warn!("skipping user: {err}");
                    None
                }
            })
            .collect()
    }

    /// Word-level encoding of a single post: pooled vector and word weights.
    pub fn encode_post(&self, ids: &[usize]) -> Result<(Tensor<S>, Vec<S>)> {
        if ids.is_empty() {
            return Err(Error::Empty("post"));
        }
        if ids.len() > self.config.max_tokens_per_post {
            return Err(Error::invalid(format!(
                "post has {} tokens, cap is {}",
                ids.len(),
                self.config.max_tokens_per_post
            )));
        }
        let mut g = Graph::new();
        let v = self.params.bind(&mut g)?;
        let (ctx, alpha) = encode_post_group(&mut g, &v, &[ids])?;
        let d = g.value(ctx).numel();
        Ok((g.value(ctx).clone().reshaped(vec![d])?, g.value(alpha).data().to_vec()))
    }

    pub fn forward_batch(&self, users: &[&EncodedUser]) -> Result<Vec<UserOutput<S>>> {
        let mut g = Graph::new();
        let v = self.params.bind(&mut g)?;
        let batch = forward_graph(&mut g, &v, users)?;
        let logits = batch.logit_values(&g);
        let traces = batch.traces(&g, users);
        Ok(logits.into_iter().zip(traces).map(|(logit, trace)| UserOutput { logit, trace }).collect())
    }

    pub fn encode_user(&self, user: &EncodedUser) -> Result<UserOutput<S>> {
        Ok(self.forward_batch(&[user])?.remove(0))
    }

    pub fn predict(&self, user: &EncodedUser, threshold: f64) -> Result<Prediction> {
        let p = self.encode_user(user)?.probability();
        Ok(Prediction { label: classify(p, threshold), probability: p })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(CHECKPOINT_KIND);
        for (k, v) in self.config.to_pairs() {
            c.set_meta(k, v);
        }
        c.set_meta("scalar", S::NAME);
        c.lists.insert("vocab".into(), self.vocab.tokens().to_vec());
        for (name, t) in HanParams::<S>::names().into_iter().zip(self.params.tensors()) {
            c.push_tensor(name, t);
        }
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        c.expect_kind(CHECKPOINT_KIND)?;
        let mut config = HanConfig::default();
        for (k, v) in &c.meta {
            if k != "scalar" && !config.set(k, v, 0)? {
                return Err(Error::Checkpoint(format!("unknown HAN config key {k:?}")));
            }
        }
        let vocab = Vocabulary::from_tokens(c.list("vocab")?.to_vec(), config.min_freq);
        let mut params = HanParams::new(&config, vocab.len(), 0)?;
        for (name, t) in HanParams::<S>::names().into_iter().zip(params.tensors_mut()) {
            c.load_into(&name, t)?;
        }
        Ok(Self { config, vocab, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
