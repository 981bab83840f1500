//! Training, evaluation and the resampling protocols.
//!
//! A run takes one control-group resampling (a [`Manifest`]), trains a model
//! on its train split, selects by dev F1 where the model has epochs, and
//! reports precision/recall/F1 on the test split. [`run_protocol`] repeats
//! this over control seeds `1..=n`; [`run_ablation`] does the same for the
//! HAN under a grid of posts-per-user caps.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{grid_search, CharNgramClassifier, CharNgramConfig, LinearConfig, LossKind, TfidfLinear, TfidfVectorizer};
use crate::checkpoint::Checkpoint;
use crate::config::{apply, parse_value, Configurable, KeyValues};
use crate::corpus::{
    assign_splits, partition, select_controls, user_document, Label, Manifest, Split, SplitRatios, UserRecord,
    Vocabulary, CONTROLS_PER_DIAGNOSED,
};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::han::{forward_graph, AttentionTrace, EncodedUser, HanConfig, HanModel};
use crate::nn::ParamSet;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use crate::metrics::{f1, random_baseline_f1, ClassWeighting, Confusion, Scores};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState<S> {
    pub m: Vec<Vec<S>>,
    pub v: Vec<Vec<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &[&Tensor<S>]) -> Self {
        Self {
            m: params.iter().map(|p| vec![S::zero(); p.numel()]).collect(),
            v: params.iter().map(|p| vec![S::zero(); p.numel()]).collect(),
        }
    }
}

/// One bias-corrected Adam update at step `t ≥ 1`.
pub fn adam_step<S: Scalar>(
    params: &mut [&mut Tensor<S>],
    grads: &[&Tensor<S>],
    state: &mut AdamState<S>,
    t: u64,
    cfg: &AdamConfig,
) -> Result<()> {
    if t == 0 {
        return Err(Error::invalid("Adam step counter starts at 1"));
    }
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(Error::ShapeMismatch { op: "adam_step", left: vec![params.len()], right: vec![grads.len()] });
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || m.len() != p.numel() {
            return Err(Error::ShapeMismatch { op: "adam_step", left: p.shape().to_vec(), right: g.shape().to_vec() });
        }
    }
    let (b1, b2) = (S::of(cfg.beta1), S::of(cfg.beta2));
    let one = S::one();
    let c1 = one - b1.powi(t as i32);
    let c2 = one - b2.powi(t as i32);
    let (lr, eps) = (S::of(cfg.learning_rate), S::of(cfg.eps));
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (((x, &gj), mj), vj) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mj = b1 * *mj + (one - b1) * gj;
            *vj = b2 * *vj + (one - b2) * gj * gj;
            let m_hat = *mj / c1;
            let v_hat = *vj / c2;
            *x -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub class_weighting: ClassWeighting,
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 32,
            epochs: 50,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            class_weighting: ClassWeighting::Balanced,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be at least 1"));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("learning rate must be positive and Adam betas in [0, 1)"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { learning_rate: self.learning_rate, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }
}

impl Configurable for TrainConfig {
    fn set(&mut self, key: &str, value: &str, line: usize) -> Result<bool> {
        match key {
            "learning_rate" => self.learning_rate = parse_value(key, value, line)?,
            "batch_size" => self.batch_size = parse_value(key, value, line)?,
            "epochs" => self.epochs = parse_value(key, value, line)?,
            "beta1" => self.beta1 = parse_value(key, value, line)?,
            "beta2" => self.beta2 = parse_value(key, value, line)?,
            "eps" => self.eps = parse_value(key, value, line)?,
            "seed" => self.seed = parse_value(key, value, line)?,
            "class_weighting" => self.class_weighting = parse_value(key, value, line)?,
            "threshold" => self.threshold = parse_value(key, value, line)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("learning_rate", self.learning_rate.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("eps", self.eps.to_string()),
            ("seed", self.seed.to_string()),
            ("class_weighting", self.class_weighting.to_string()),
            ("threshold", self.threshold.to_string()),
        ]
    }
}

/// Everything a run needs besides data: one config file fills all four parts.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub han: HanConfig,
    pub linear: LinearConfig,
    pub char_ngram: CharNgramConfig,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        let mut cfg = Self::default();
        apply(&kv, &mut [&mut cfg.train, &mut cfg.han, &mut cfg.linear, &mut cfg.char_ngram])?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.han.validate()?;
        self.char_ngram.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Han,
    #[serde(rename = "logreg")]
    LogReg,
    Svm,
    #[serde(rename = "charngram")]
    CharNgram,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Han, ModelKind::LogReg, ModelKind::Svm, ModelKind::CharNgram];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Han => "han",
            ModelKind::LogReg => "logreg",
            ModelKind::Svm => "svm",
            ModelKind::CharNgram => "charngram",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown model {s:?} (expected han, logreg, svm or charngram)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev: Scores,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub condition: String,
    pub model: ModelKind,
    pub control_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post_cap: Option<usize>,
    pub test: Scores,
    /// Epoch whose parameters were kept (1-based), for epoch-trained models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_epoch: Option<usize>,
    /// Regularization strength chosen on dev, for linear models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_c: Option<f64>,
    pub history: Vec<EpochRecord>,
    pub wall_time_secs: f64,
}

/// Users of one manifest, resolved against the corpus.
#[derive(Clone, Debug)]
pub struct RunData {
    pub condition: String,
    pub control_seed: u64,
    pub train: Vec<UserRecord>,
    pub dev: Vec<UserRecord>,
    pub test: Vec<UserRecord>,
}

impl RunData {
    pub fn resolve(manifest: &Manifest, corpus: &[UserRecord]) -> Result<Self> {
        let by_id: HashMap<&str, &UserRecord> = corpus.iter().map(|u| (u.user_id.as_str(), u)).collect();
        let pick = |split: Split| -> Result<Vec<UserRecord>> {
            manifest
                .entries(split)
                .map(|e| {
                    let u = by_id
                        .get(e.user_id.as_str())
                        .ok_or_else(|| Error::invalid(format!("manifest user {} is not in the corpus", e.user_id)))?;
                    if u.label != e.label {
                        return Err(Error::invalid(format!("manifest label of {} disagrees with the corpus", e.user_id)));
                    }
                    Ok((*u).clone())
                })
                .collect()
        };
        Ok(Self {
            condition: manifest.condition.clone(),
            control_seed: manifest.seed,
            train: pick(Split::Train)?,
            dev: pick(Split::Dev)?,
            test: pick(Split::Test)?,
        })
    }

    /// Keeps only the first `cap` posts of every user.
    pub fn truncated(&self, cap: usize) -> Result<Self> {
        let cut = |users: &[UserRecord]| users.iter().map(|u| u.truncate_posts(cap)).collect::<Result<Vec<_>>>();
        Ok(Self {
            condition: self.condition.clone(),
            control_seed: self.control_seed,
            train: cut(&self.train)?,
            dev: cut(&self.dev)?,
            test: cut(&self.test)?,
        })
    }

    pub fn split(&self, split: Split) -> &[UserRecord] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }
}

/// Draws controls for `condition` with `seed` and splits the result.
pub fn prepare(corpus: &[UserRecord], condition: &str, seed: u64, ratios: SplitRatios) -> Result<Manifest> {
    let (diagnosed, pool) = partition(corpus, condition);
    let sub = select_controls(condition, &diagnosed, &pool, CONTROLS_PER_DIAGNOSED, seed)?;
    assign_splits(&sub, ratios, seed)
}

fn labels_of(users: &[UserRecord]) -> Vec<Label> {
    users.iter().map(|u| u.label).collect()
}

fn positives_of(users: &[UserRecord]) -> Vec<bool> {
    users.iter().map(|u| u.label.is_positive()).collect()
}

fn non_empty(users: &[UserRecord], split: Split) -> Result<()> {
    if users.is_empty() {
        return Err(Error::invalid(format!("{split} split is empty")));
    }
    Ok(())
}

/// Predictions and diagnosed-class probabilities, in input order.
pub fn predict_han<S: Scalar>(model: &HanModel<S>, users: &[EncodedUser], threshold: f64) -> Result<Vec<(Label, f64)>> {
    let mut out = Vec::with_capacity(users.len());
    for chunk in users.chunks(64) {
        let refs: Vec<&EncodedUser> = chunk.iter().collect();
        for o in model.forward_batch(&refs)? {
            let p = o.probability();
            out.push((crate::han::classify(p, threshold), p));
        }
    }
    Ok(out)
}

/// Attention traces with predictions filled in.
pub fn han_traces<S: Scalar>(
    model: &HanModel<S>,
    users: &[EncodedUser],
    split: Option<Split>,
    threshold: f64,
) -> Result<Vec<AttentionTrace>> {
    let mut traces = Vec::with_capacity(users.len());
    for chunk in users.chunks(64) {
        let refs: Vec<&EncodedUser> = chunk.iter().collect();
        for o in model.forward_batch(&refs)? {
            let p = o.probability();
            let mut t = o.trace;
            t.predicted = Some(crate::han::classify(p, threshold));
            t.probability = Some(p);
            t.split = split;
            traces.push(t);
        }
    }
    Ok(traces)
}

fn scores_for(pred: &[(Label, f64)], users: &[EncodedUser]) -> Result<Scores> {
    let p: Vec<Label> = pred.iter().map(|x| x.0).collect();
    let gold: Vec<Label> = users.iter().map(|u| u.label.expect("encoded from a labelled record")).collect();
    f1(&p, &gold)
}

/// Result of [`train_han`]: the parameters of the best dev epoch.
#[derive(Clone, Debug)]
pub struct HanOutcome<S> {
    pub model: HanModel<S>,
    pub selected_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Mini-batch Adam on class-weighted mean BCE with seeded shuffling. After
/// every epoch the dev F1 is measured and the best epoch's parameters are
/// kept (ties keep the earlier epoch).
pub fn train_han<S: Scalar>(
    mut model: HanModel<S>,
    train: &[EncodedUser],
    dev: &[EncodedUser],
    cfg: &TrainConfig,
) -> Result<HanOutcome<S>> {
    cfg.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::Empty("train or dev split"));
    }
    let positives: Vec<bool> = train.iter().map(|u| u.label.is_some_and(Label::is_positive)).collect();
    let weights = cfg.class_weighting.per_example(&positives);
    let trainable: Vec<bool> = {
        let n = model.params.tensors().len();
        (0..n).map(|i| i > 0 || model.params.embedding.trainable).collect()
    };
    let mut state = AdamState::new(
        &model.params.tensors().into_iter().zip(&trainable).filter(|(_, &t)| t).map(|(p, _)| p).collect::<Vec<_>>(),
    );
    let adam = cfg.adam();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0u64;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, HanModel<S>)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let users: Vec<&EncodedUser> = batch.iter().map(|&i| &train[i]).collect();
            let labels: Vec<S> = batch.iter().map(|&i| if positives[i] { S::one() } else { S::zero() }).collect();
            let w: Vec<S> = batch.iter().map(|&i| S::of(weights[i])).collect();
            let diverged = |e: Error| match e {
                Error::NonFinite { op } => Error::Diverged(format!("non-finite {op} in epoch {epoch}, batch {}", b + 1)),
                other => other,
            };
            let grads: Vec<Tensor<S>> = {
                let mut g = Graph::new();
                let vars = model.params.bind(&mut g)?;
                let fwd = forward_graph(&mut g, &vars, &users).map_err(diverged)?;
                let total = g.bce_logits(fwd.logits, &labels, &w).map_err(diverged)?;
                let loss = g.affine(total, S::one() / S::of(batch.len() as f64), S::zero()).map_err(diverged)?;
                g.backward(loss).map_err(diverged)?;
                loss_sum += g.value(loss).item().as_f64() * batch.len() as f64;
                vars.leaves.iter().zip(&trainable).filter(|(_, &t)| t).map(|(&v, _)| g.grad_tensor(v).expect("trainable leaf")).collect()
            };
            step += 1;
            let mut params: Vec<&mut Tensor<S>> =
                model.params.tensors_mut().into_iter().zip(&trainable).filter(|(_, &t)| t).map(|(p, _)| p).collect();
            let grad_refs: Vec<&Tensor<S>> = grads.iter().collect();
            adam_step(&mut params, &grad_refs, &mut state, step, &adam)?;
            model.params.embedding.clear_padding();
        }
        let train_loss = loss_sum / train.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::Diverged(format!("training loss is {train_loss} after epoch {epoch}")));
        }
        let dev_scores = scores_for(&predict_han(&model, dev, cfg.threshold)?, dev)?;
        log::info!("epoch {epoch}: train loss {train_loss:.5}, dev F1 {:.4}", dev_scores.f1);
        history.push(EpochRecord { epoch, train_loss, dev: dev_scores });
        if best.as_ref().is_none_or(|(f, _, _)| dev_scores.f1 > *f) {
            best = Some((dev_scores.f1, epoch, model.clone()));
        }
    }
    let (_, selected_epoch, model) = best.expect("at least one epoch");
    Ok(HanOutcome { model, selected_epoch, history })
}

/// A trained model of any kind.
#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum TrainedModel {
    Han(HanModel<f64>),
    Linear(TfidfLinear),
    CharNgram(CharNgramClassifier),
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Han(_) => ModelKind::Han,
            TrainedModel::Linear(m) => match m.model.loss {
                LossKind::Logistic => ModelKind::LogReg,
                LossKind::Hinge => ModelKind::Svm,
            },
            TrainedModel::CharNgram(_) => ModelKind::CharNgram,
        }
    }

    /// Users without a usable post are predicted control with probability 0.
    pub fn predict(&self, users: &[UserRecord], threshold: f64) -> Result<Vec<(Label, f64)>> {
        match self {
            TrainedModel::Han(m) => {
                let mut out = vec![(Label::Control, 0.0); users.len()];
                let mut idx = Vec::new();
                let mut enc = Vec::new();
                for (i, u) in users.iter().enumerate() {
                    match m.encode(u) {
                        Ok(e) => {
                            idx.push(i);
                            enc.push(e);
                        }
                        Err(e) => log::warn!("{e}; predicting control"),
                    }
                }
                for (i, p) in idx.into_iter().zip(predict_han(m, &enc, threshold)?) {
                    out[i] = p;
                }
                Ok(out)
            }
            TrainedModel::Linear(m) => users.iter().map(|u| m.predict(&user_document(u))).collect(),
            TrainedModel::CharNgram(m) => Ok(users.iter().map(|u| m.predict(&user_document(u))).collect()),
        }
    }

    pub fn evaluate(&self, users: &[UserRecord], threshold: f64) -> Result<Scores> {
        let pred: Vec<Label> = self.predict(users, threshold)?.into_iter().map(|p| p.0).collect();
        f1(&pred, &labels_of(users))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        match self {
            TrainedModel::Han(m) => m.to_checkpoint(),
            TrainedModel::Linear(m) => m.to_checkpoint(),
            TrainedModel::CharNgram(m) => m.to_checkpoint(),
        }
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        match c.kind.as_str() {
            crate::han::CHECKPOINT_KIND => Ok(TrainedModel::Han(HanModel::from_checkpoint(c)?)),
            "logreg" | "svm" => Ok(TrainedModel::Linear(TfidfLinear::from_checkpoint(c)?)),
            crate::baselines::CHAR_NGRAM_KIND => Ok(TrainedModel::CharNgram(CharNgramClassifier::from_checkpoint(c)?)),
            other => Err(Error::Checkpoint(format!("unknown model kind {other:?}"))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Seed for model initialization and shuffling in the run on `control_seed`.
pub fn run_seed(cfg: &TrainConfig, control_seed: u64) -> u64 {
    cfg.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(control_seed)
}

/// Trains one model on `data` and scores it on the test split.
pub fn train_model(kind: ModelKind, data: &RunData, cfg: &ExperimentConfig) -> Result<(TrainedModel, RunReport)> {
    cfg.validate()?;
    non_empty(&data.train, Split::Train)?;
    non_empty(&data.dev, Split::Dev)?;
    non_empty(&data.test, Split::Test)?;
    let start = Instant::now();
    let seed = run_seed(&cfg.train, data.control_seed);
    let mut selected_epoch = None;
    let mut selected_c = None;
    let mut history = Vec::new();
    let model = match kind {
        ModelKind::Han => {
            let docs: Vec<Vec<String>> = data.train.iter().map(user_document).collect();
            let vocab = Vocabulary::build(&docs, cfg.han.min_freq)?;
            let model = HanModel::<f64>::new(cfg.han.clone(), vocab, seed)?;
            let train = model.encode_all(&data.train);
            let dev = model.encode_all(&data.dev);
            let mut tc = cfg.train.clone();
            tc.seed = seed;
            let out = train_han(model, &train, &dev, &tc)?;
            selected_epoch = Some(out.selected_epoch);
            history = out.history;
            TrainedModel::Han(out.model)
        }
        ModelKind::LogReg | ModelKind::Svm => {
            let loss = if kind == ModelKind::LogReg { LossKind::Logistic } else { LossKind::Hinge };
            let mut vectorizer = TfidfVectorizer::new();
            let train_docs: Vec<Vec<String>> = data.train.iter().map(user_document).collect();
            let x_train = vectorizer.fit_transform(&train_docs)?;
            let x_dev =
                data.dev.iter().map(|u| vectorizer.transform(&user_document(u))).collect::<Result<Vec<_>>>()?;
            let r = grid_search(
                (&x_train, &positives_of(&data.train)),
                (&x_dev, &positives_of(&data.dev)),
                vectorizer.num_features(),
                loss,
                &cfg.linear,
            )?;
            selected_c = Some(r.best_c);
            TrainedModel::Linear(TfidfLinear { vectorizer, model: r.model })
        }
        ModelKind::CharNgram => {
            let docs: Vec<Vec<String>> = data.train.iter().map(user_document).collect();
            TrainedModel::CharNgram(CharNgramClassifier::train(
                cfg.char_ngram.clone(),
                &docs,
                &positives_of(&data.train),
                seed,
            )?)
        }
    };
    let test = model.evaluate(&data.test, cfg.train.threshold)?;
    log::info!("{} {kind} seed {}: test F1 {:.4}", data.condition, data.control_seed, test.f1);
    let report = RunReport {
        condition: data.condition.clone(),
        model: kind,
        control_seed: data.control_seed,
        post_cap: None,
        test,
        selected_epoch,
        selected_c,
        history,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Empty("value list"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub condition: String,
    pub model: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post_cap: Option<usize>,
    pub runs: usize,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_f1: f64,
    pub std_f1: f64,
}

/// Groups runs by (model, cap) in first-seen order and aggregates each group.
pub fn summarize(runs: &[RunReport]) -> Result<Vec<SummaryRow>> {
    let mut keys: Vec<(ModelKind, Option<usize>)> = Vec::new();
    for r in runs {
        if !keys.contains(&(r.model, r.post_cap)) {
            keys.push((r.model, r.post_cap));
        }
    }
    keys.into_iter()
        .map(|(model, cap)| {
            let group: Vec<&RunReport> = runs.iter().filter(|r| r.model == model && r.post_cap == cap).collect();
            let f: Vec<f64> = group.iter().map(|r| r.test.f1).collect();
            let (mean_f1, std_f1) = mean_std(&f)?;
            let n = group.len() as f64;
            Ok(SummaryRow {
                condition: group[0].condition.clone(),
                model,
                post_cap: cap,
                runs: group.len(),
                mean_precision: group.iter().map(|r| r.test.precision).sum::<f64>() / n,
                mean_recall: group.iter().map(|r| r.test.recall).sum::<f64>() / n,
                mean_f1,
                std_f1,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolReport {
    pub runs: Vec<RunReport>,
    pub summary: Vec<SummaryRow>,
}

/// For control seeds `1..=n`: draw controls, split, train every model kind.
/// Any failed run fails the protocol.
pub fn run_protocol(
    corpus: &[UserRecord],
    condition: &str,
    kinds: &[ModelKind],
    n_resamplings: usize,
    ratios: SplitRatios,
    cfg: &ExperimentConfig,
) -> Result<ProtocolReport> {
    if kinds.is_empty() || n_resamplings == 0 {
        return Err(Error::invalid("protocol needs at least one model and one resampling"));
    }
    let mut runs = Vec::with_capacity(kinds.len() * n_resamplings);
    for seed in 1..=n_resamplings as u64 {
        let manifest = prepare(corpus, condition, seed, ratios)?;
        let data = RunData::resolve(&manifest, corpus)?;
        for &kind in kinds {
            let (_, report) = train_model(kind, &data, cfg)
                .map_err(|e| Error::invalid(format!("{kind} run on control seed {seed} failed: {e}")))?;
            runs.push(report);
        }
    }
    let summary = summarize(&runs)?;
    Ok(ProtocolReport { runs, summary })
}

pub const DEFAULT_POST_CAPS: [usize; 5] = [50, 100, 150, 200, 250];

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub condition: String,
    pub caps: Vec<usize>,
    pub runs: Vec<RunReport>,
    pub summary: Vec<SummaryRow>,
}

/// HAN runs for every cap and control seeds `1..=n_seeds`, with every user
/// truncated to the cap before training.
pub fn run_ablation(
    corpus: &[UserRecord],
    condition: &str,
    caps: &[usize],
    n_seeds: usize,
    ratios: SplitRatios,
    cfg: &ExperimentConfig,
) -> Result<AblationReport> {
    if caps.is_empty() || n_seeds == 0 {
        return Err(Error::invalid("ablation needs at least one cap and one seed"));
    }
    if caps.contains(&0) {
        return Err(Error::invalid("post caps must be positive"));
    }
    let mut runs = Vec::with_capacity(caps.len() * n_seeds);
    let mut resolved = Vec::with_capacity(n_seeds);
    for seed in 1..=n_seeds as u64 {
        resolved.push(RunData::resolve(&prepare(corpus, condition, seed, ratios)?, corpus)?);
    }
    for &cap in caps {
        for data in &resolved {
            let (_, mut report) = train_model(ModelKind::Han, &data.truncated(cap)?, cfg).map_err(|e| {
                Error::invalid(format!("cap {cap} run on control seed {} failed: {e}", data.control_seed))
            })?;
            report.post_cap = Some(cap);
            runs.push(report);
        }
    }
    let summary = summarize(&runs)?;
    Ok(AblationReport { condition: condition.to_string(), caps: caps.to_vec(), runs, summary })
}

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

const RUN_HEADER: [&str; 9] =
    ["condition", "model", "control_seed", "post_cap", "precision", "recall", "f1", "selected_epoch", "selected_c"];

fn run_row(r: &RunReport) -> Vec<String> {
    vec![
        r.condition.clone(),
        r.model.to_string(),
        r.control_seed.to_string(),
        fmt_opt(r.post_cap),
        format!("{:.6}", r.test.precision),
        format!("{:.6}", r.test.recall),
        format!("{:.6}", r.test.f1),
        fmt_opt(r.selected_epoch),
        fmt_opt(r.selected_c),
    ]
}

const SUMMARY_HEADER: [&str; 8] =
    ["condition", "model", "post_cap", "runs", "mean_precision", "mean_recall", "mean_f1", "std_f1"];

fn summary_row(s: &SummaryRow) -> Vec<String> {
    vec![
        s.condition.clone(),
        s.model.to_string(),
        fmt_opt(s.post_cap),
        s.runs.to_string(),
        format!("{:.6}", s.mean_precision),
        format!("{:.6}", s.mean_recall),
        format!("{:.6}", s.mean_f1),
        format!("{:.6}", s.std_f1),
    ]
}

fn write_csv<W: Write>(w: W, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::invalid(format!("CSV output: {e}"));
    out.write_record(header).map_err(csv_err)?;
    for row in rows {
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// One CSV row per run. Wall time is left out so reruns are byte-identical.
pub fn write_runs_csv<W: Write>(w: W, runs: &[RunReport]) -> Result<()> {
    write_csv(w, &RUN_HEADER, runs.iter().map(run_row))
}

pub fn write_summary_csv<W: Write>(w: W, rows: &[SummaryRow]) -> Result<()> {
    write_csv(w, &SUMMARY_HEADER, rows.iter().map(summary_row))
}

/// Per-epoch history of every run.
pub fn write_history_csv<W: Write>(w: W, runs: &[RunReport]) -> Result<()> {
    let header = ["model", "control_seed", "post_cap", "epoch", "train_loss", "dev_precision", "dev_recall", "dev_f1"];
    let rows = runs.iter().flat_map(|r| {
        r.history.iter().map(move |h| {
            vec![
                r.model.to_string(),
                r.control_seed.to_string(),
                fmt_opt(r.post_cap),
                h.epoch.to_string(),
                format!("{:.6}", h.train_loss),
                format!("{:.6}", h.dev.precision),
                format!("{:.6}", h.dev.recall),
                format!("{:.6}", h.dev.f1),
            ]
        })
    });
    write_csv(w, &header, rows)
}

/// Left-aligned text table with a rule under the header.
pub fn format_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<String>| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, &w)| format!("{c:<w$}")).collect();
        padded.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(header.iter().map(|s| s.to_string()).collect());
    out += &line(widths.iter().map(|&w| "-".repeat(w)).collect());
    for row in rows {
        out += &line(row.clone());
    }
    out
}

pub fn runs_table(runs: &[RunReport]) -> String {
    format_table(&RUN_HEADER, &runs.iter().map(run_row).collect::<Vec<_>>())
}

pub fn summary_table(rows: &[SummaryRow]) -> String {
    format_table(&SUMMARY_HEADER, &rows.iter().map(summary_row).collect::<Vec<_>>())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut p = Tensor::<f64>::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let g = Tensor::new(vec![3], vec![1.0, 1.0, 1.0]).unwrap();
        let cfg = AdamConfig { learning_rate: 0.01, ..Default::default() };
        let mut st = AdamState::new(&[&p]);
        adam_step(&mut [&mut p], &[&g], &mut st, 1, &cfg).unwrap();
        for (x, x0) in p.data().iter().zip([1.0, -2.0, 0.5]) {
            assert!((x0 - x - 0.01).abs() < 1e-9);
        }
    }

    #[test]
    fn adam_zero_gradient_and_errors() {
        let mut p = Tensor::<f64>::new(vec![2], vec![1.0, 2.0]).unwrap();
        let before = p.clone();
        let g = Tensor::zeros(&[2]);
        let mut st = AdamState::new(&[&p]);
        adam_step(&mut [&mut p], &[&g], &mut st, 1, &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
        let bad = Tensor::zeros(&[3]);
        assert!(adam_step(&mut [&mut p], &[&bad], &mut st, 2, &AdamConfig::default()).is_err());
        assert!(adam_step(&mut [&mut p], &[&g], &mut st, 0, &AdamConfig::default()).is_err());
    }

    #[test]
    fn population_std_example() {
        let (m, s) = mean_std(&[68.0, 69.0, 67.0, 68.5, 68.0]).unwrap();
        assert!((m - 68.1).abs() < 1e-12);
        assert!((s - 0.44f64.sqrt()).abs() < 1e-12);
        assert_eq!(mean_std(&[0.7]).unwrap(), (0.7, 0.0));
    }

    #[test]
    fn config_file_sets_every_part() {
        let cfg = ExperimentConfig::parse("epochs = 3\ngru_hidden=8\nc_grid=1,10\nbuckets=64\n").unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.han.gru_hidden, 8);
        assert_eq!(cfg.linear.c_grid, vec![1.0, 10.0]);
        assert_eq!(cfg.char_ngram.buckets, 64);
        assert!(ExperimentConfig::parse("epochs=0\n").is_err());
        assert!(matches!(ExperimentConfig::parse("a=1\nnope=2\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn model_kind_names_round_trip() {
        for k in ModelKind::ALL {
            assert_eq!(k.as_str().parse::<ModelKind>().unwrap(), k);
        }
        assert!("bert".parse::<ModelKind>().is_err());
    }

    #[test]
    fn table_alignment() {
        let t = format_table(&["a", "bb"], &[vec!["xyz".into(), "1".into()]]);
        assert_eq!(t, "a    bb\n---  --\nxyz  1\n");
    }
}
