//! Reference classifiers over whole-user documents: tf-idf features with a
//! logistic-regression or linear-SVM head, and a hashed character n-gram
//! classifier in the style of fastText.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::{parse_list, parse_value, Configurable};
use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::graph::sigmoid;
use crate::metrics::{f1, ClassWeighting};

/// A sparse feature vector with strictly increasing indices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseVec {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseVec {
    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.indices.iter().zip(&self.values).map(|(&i, &v)| v * dense[i]).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn to_dense(&self, len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i] = v;
        }
        out
    }
}

/// Raw-count tf times smoothed idf, `ln((1+N)/(1+df)) + 1`, L2-normalized.
/// Columns are the fitted terms in lexicographic order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TfidfVectorizer {
    vocabulary: BTreeMap<String, usize>,
    doc_freq: Vec<usize>,
    idf: Vec<f64>,
    fitted: bool,
}

impl TfidfVectorizer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn fit(&mut self, docs: &[Vec<String>]) -> Result<()> {
        if docs.is_empty() {
            return Err(Error::Empty("tf-idf fitting corpus"));
        }
        let mut df: BTreeMap<&str, usize> = BTreeMap::new();
        for doc in docs {
            let mut seen: Vec<&str> = doc.iter().map(String::as_str).collect();
            seen.sort_unstable();
            seen.dedup();
            for t in seen {
                *df.entry(t).or_default() += 1;
            }
        }
        let n = docs.len() as f64;
        self.vocabulary = df.keys().enumerate().map(|(i, t)| (t.to_string(), i)).collect();
        self.doc_freq = df.values().copied().collect();
        self.idf = self.doc_freq.iter().map(|&d| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0).collect();
        self.fitted = true;
        Ok(())
    }

    /// Unseen tokens are ignored; a document with none of the fitted terms
    /// maps to the zero vector.
    pub fn transform(&self, doc: &[String]) -> Result<SparseVec> {
        if !self.fitted {
            return Err(Error::NotFitted("tf-idf vectorizer"));
        }
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for t in doc {
            if let Some(&col) = self.vocabulary.get(t) {
                *counts.entry(col).or_default() += 1.0;
            }
        }
        let mut v = SparseVec {
            indices: counts.keys().copied().collect(),
            values: counts.iter().map(|(&c, &tf)| tf * self.idf[c]).collect(),
        };
        let norm = v.norm_sq().sqrt();
        if norm > 0.0 {
            v.values.iter_mut().for_each(|x| *x /= norm);
        }
        Ok(v)
    }

    pub fn fit_transform(&mut self, docs: &[Vec<String>]) -> Result<Vec<SparseVec>> {
        self.fit(docs)?;
        docs.iter().map(|d| self.transform(d)).collect()
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted
    }

    pub fn num_features(&self) -> usize {
        self.idf.len()
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    pub fn column(&self, term: &str) -> Option<usize> {
        self.vocabulary.get(term).copied()
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.vocabulary.keys().map(String::as_str)
    }

    fn to_checkpoint(&self, c: &mut Checkpoint) {
        c.lists.insert("tfidf.terms".into(), self.vocabulary.keys().cloned().collect());
        c.push_vec("tfidf.idf", &self.idf);
        c.push_vec("tfidf.df", &self.doc_freq.iter().map(|&d| d as f64).collect::<Vec<_>>());
    }

    fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let terms = c.list("tfidf.terms")?;
        let idf = c.tensor("tfidf.idf")?.data.clone();
        let doc_freq = c.tensor("tfidf.df")?.data.iter().map(|&d| d as usize).collect::<Vec<_>>();
        if idf.len() != terms.len() || doc_freq.len() != terms.len() {
            return Err(Error::Checkpoint("tf-idf tables disagree in length".into()));
        }
        let vocabulary = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(Self { vocabulary, doc_freq, idf, fitted: true })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Logistic,
    Hinge,
}

impl LossKind {
    /// Loss of decision value `f` for a ±1 target `y`.
    pub fn value(self, f: f64, y: f64) -> f64 {
        match self {
            LossKind::Logistic => {
                let m = y * f;
                if m > 0.0 {
                    (-m).exp().ln_1p()
                } else {
                    -m + m.exp().ln_1p()
                }
            }
            LossKind::Hinge => (1.0 - y * f).max(0.0),
        }
    }

    /// Derivative (a subgradient for hinge) with respect to `f`.
    pub fn slope(self, f: f64, y: f64) -> f64 {
        match self {
            LossKind::Logistic => -y * sigmoid(-y * f),
            LossKind::Hinge => {
                if y * f < 1.0 {
                    -y
                } else {
                    0.0
                }
            }
        }
    }

    pub fn checkpoint_kind(self) -> &'static str {
        match self {
            LossKind::Logistic => "logreg",
            LossKind::Hinge => "svm",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Logistic => "logistic",
            LossKind::Hinge => "hinge",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" | "logreg" => Ok(LossKind::Logistic),
            "hinge" | "svm" => Ok(LossKind::Hinge),
            other => Err(Error::invalid(format!("unknown loss {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearConfig {
    pub c_grid: Vec<f64>,
    pub max_iter: usize,
    pub tol: f64,
    pub class_weighting: ClassWeighting,
}

impl Default for LinearConfig {
    fn default() -> Self {
        Self { c_grid: vec![0.01, 0.1, 1.0, 10.0, 100.0], max_iter: 1000, tol: 1e-6, class_weighting: ClassWeighting::Balanced }
    }
}

impl Configurable for LinearConfig {
    fn set(&mut self, key: &str, value: &str, line: usize) -> Result<bool> {
        match key {
            "c_grid" => self.c_grid = parse_list(key, value, line)?,
            "max_iter" => self.max_iter = parse_value(key, value, line)?,
            "tol" => self.tol = parse_value(key, value, line)?,
            "linear_class_weighting" => self.class_weighting = parse_value(key, value, line)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let grid: Vec<String> = self.c_grid.iter().map(f64::to_string).collect();
        vec![
            ("c_grid", grid.join(",")),
            ("max_iter", self.max_iter.to_string()),
            ("tol", self.tol.to_string()),
            ("linear_class_weighting", self.class_weighting.to_string()),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub c: f64,
    pub loss: LossKind,
    /// Objective after each iteration. For hinge this is the best value so far.
    pub history: Vec<f64>,
    pub converged: bool,
}

impl LinearModel {
    pub fn zeros(num_features: usize, c: f64, loss: LossKind) -> Self {
        Self { weights: vec![0.0; num_features], bias: 0.0, c, loss, history: Vec::new(), converged: false }
    }

    pub fn decision(&self, x: &SparseVec) -> f64 {
        x.dot(&self.weights) + self.bias
    }

    /// Non-negative decision values are diagnosed.
    pub fn predict(&self, x: &SparseVec) -> Label {
        Label::from_positive(self.decision(x) >= 0.0)
    }

    /// Probability-like score in (0, 1): the logistic of the decision value.
    pub fn score(&self, x: &SparseVec) -> f64 {
        sigmoid(self.decision(x))
    }

    /// `(1/n) Σ sᵢ loss(fᵢ, yᵢ) + ‖w‖² / (2Cn)`.
    pub fn objective(&self, x: &[SparseVec], y: &[bool], sample_weights: &[f64]) -> f64 {
        let n = x.len() as f64;
        let data: f64 = x
            .iter()
            .zip(y)
            .zip(sample_weights)
            .map(|((xi, &yi), s)| s * self.loss.value(self.decision(xi), sign(yi)))
            .sum();
        let reg: f64 = self.weights.iter().map(|w| w * w).sum();
        data / n + reg / (2.0 * self.c * n)
    }

    fn gradient(&self, x: &[SparseVec], y: &[bool], sample_weights: &[f64]) -> (Vec<f64>, f64) {
        let n = x.len() as f64;
        let lambda = 1.0 / (self.c * n);
        let mut gw: Vec<f64> = self.weights.iter().map(|w| lambda * w).collect();
        let mut gb = 0.0;
        for ((xi, &yi), s) in x.iter().zip(y).zip(sample_weights) {
            let d = s * self.loss.slope(self.decision(xi), sign(yi)) / n;
            if d != 0.0 {
                for (&j, &v) in xi.indices.iter().zip(&xi.values) {
                    gw[j] += d * v;
                }
                gb += d;
            }
        }
        (gw, gb)
    }
}

fn sign(positive: bool) -> f64 {
    if positive {
        1.0
    } else {
        -1.0
    }
}

/// Full-batch deterministic training of a linear model.
///
/// Logistic loss uses plain gradient descent with step `1/L`, `L` being a
/// smoothness bound of the objective, so the objective never increases.
/// Hinge loss uses subgradient steps `1/√t` and keeps the best iterate. Both
/// stop when the (sub)gradient norm falls below `tol` or after `max_iter`
/// iterations.
pub fn train_linear(
    x: &[SparseVec],
    y: &[bool],
    num_features: usize,
    c: f64,
    loss: LossKind,
    cfg: &LinearConfig,
) -> Result<LinearModel> {
    if x.is_empty() {
        return Err(Error::Empty("training matrix"));
    }
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch { op: "train_linear", left: vec![x.len()], right: vec![y.len()] });
    }
    if c.is_nan() || c <= 0.0 {
        return Err(Error::invalid(format!("regularization strength C must be positive, got {c}")));
    }
    if let Some(bad) = x.iter().flat_map(|v| &v.indices).find(|&&j| j >= num_features) {
        return Err(Error::IndexOutOfRange { index: *bad, bound: num_features });
    }
    let n_pos = y.iter().filter(|&&p| p).count();
    if n_pos == 0 || n_pos == y.len() {
        log::warn!("linear model trained on a single class ({n_pos} positive of {})", y.len());
    }
    let s = cfg.class_weighting.per_example(y);
    let n = x.len() as f64;
    let s_max = s.iter().copied().fold(0.0, f64::max);
    let x_max = x.iter().map(SparseVec::norm_sq).fold(0.0, f64::max);

    let mut model = LinearModel::zeros(num_features, c, loss);
    match loss {
        LossKind::Logistic => {
            let step = 1.0 / (0.25 * s_max * (x_max + 1.0) + 1.0 / (c * n));
            for _ in 0..cfg.max_iter {
                let (gw, gb) = model.gradient(x, y, &s);
                let norm = (gw.iter().map(|g| g * g).sum::<f64>() + gb * gb).sqrt();
                if norm < cfg.tol {
                    model.converged = true;
                    break;
                }
                model.weights.iter_mut().zip(&gw).for_each(|(w, g)| *w -= step * g);
                model.bias -= step * gb;
                model.history.push(model.objective(x, y, &s));
            }
        }
        LossKind::Hinge => {
            let step0 = 1.0 / (s_max * (x_max + 1.0).sqrt() + 1.0 / (c * n));
            let mut best = (model.objective(x, y, &s), model.weights.clone(), model.bias);
            for t in 1..=cfg.max_iter {
                let (gw, gb) = model.gradient(x, y, &s);
                let norm = (gw.iter().map(|g| g * g).sum::<f64>() + gb * gb).sqrt();
                if norm < cfg.tol {
                    model.converged = true;
                    break;
                }
                let step = step0 / (t as f64).sqrt();
                model.weights.iter_mut().zip(&gw).for_each(|(w, g)| *w -= step * g);
                model.bias -= step * gb;
                let obj = model.objective(x, y, &s);
                if obj < best.0 {
                    best = (obj, model.weights.clone(), model.bias);
                }
                model.history.push(best.0);
            }
            model.weights = best.1;
            model.bias = best.2;
        }
    }
    Ok(model)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridResult {
    /// `(C, dev F1)` for every grid point, in ascending C.
    pub scores: Vec<(f64, f64)>,
    pub best_c: f64,
    pub model: LinearModel,
}

/// Trains one model per C and keeps the one with the highest dev F1; ties go
/// to the smaller C.
pub fn grid_search(
    train: (&[SparseVec], &[bool]),
    dev: (&[SparseVec], &[bool]),
    num_features: usize,
    loss: LossKind,
    cfg: &LinearConfig,
) -> Result<GridResult> {
    if cfg.c_grid.is_empty() {
        return Err(Error::Empty("C grid"));
    }
    let mut grid = cfg.c_grid.clone();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let gold: Vec<Label> = dev.1.iter().map(|&p| Label::from_positive(p)).collect();
    let mut scores = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, LinearModel)> = None;
    for &c in &grid {
        let model = train_linear(train.0, train.1, num_features, c, loss, cfg)?;
        let pred: Vec<Label> = dev.0.iter().map(|x| model.predict(x)).collect();
        let score = f1(&pred, &gold)?.f1;
        log::debug!("{loss} C={c}: dev F1 {score:.4}");
        scores.push((c, score));
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, model));
        }
    }
    let (_, model) = best.expect("grid is non-empty");
    Ok(GridResult { scores, best_c: model.c, model })
}

/// A fitted tf-idf vectorizer together with its linear head.
#[derive(Clone, Debug, PartialEq)]
pub struct TfidfLinear {
    pub vectorizer: TfidfVectorizer,
    pub model: LinearModel,
}

impl TfidfLinear {
    pub fn features(&self, doc: &[String]) -> Result<SparseVec> {
        self.vectorizer.transform(doc)
    }

    pub fn predict(&self, doc: &[String]) -> Result<(Label, f64)> {
        let x = self.features(doc)?;
        Ok((self.model.predict(&x), self.model.score(&x)))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(self.model.loss.checkpoint_kind());
        c.set_meta("c", self.model.c);
        c.set_meta("bias", format!("{:e}", self.model.bias));
        c.push_vec("weights", &self.model.weights);
        self.vectorizer.to_checkpoint(&mut c);
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let loss = match c.kind.as_str() {
            "logreg" => LossKind::Logistic,
            "svm" => LossKind::Hinge,
            other => return Err(Error::Checkpoint(format!("{other:?} is not a linear checkpoint"))),
        };
        let vectorizer = TfidfVectorizer::from_checkpoint(c)?;
        let weights = c.tensor("weights")?.data.clone();
        if weights.len() != vectorizer.num_features() {
            return Err(Error::Checkpoint("weight length differs from the vocabulary size".into()));
        }
        let model = LinearModel {
            weights,
            bias: c.meta_parse("bias")?,
            c: c.meta_parse("c")?,
            loss,
            history: Vec::new(),
            converged: false,
        };
        Ok(Self { vectorizer, model })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

pub const NGRAM_MIN: usize = 3;
pub const NGRAM_MAX: usize = 6;

/// Character n-grams of `<word>` for n in 3..=6, shortest first.
pub fn char_ngrams(word: &str) -> Vec<String> {
    let chars: Vec<char> = std::iter::once('<').chain(word.chars()).chain(std::iter::once('>')).collect();
    let mut out = Vec::new();
    for n in NGRAM_MIN..=NGRAM_MAX {
        for w in chars.windows(n) {
            out.push(w.iter().collect());
        }
    }
    out
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn ngram_buckets(word: &str, buckets: usize) -> Vec<usize> {
    char_ngrams(word).iter().map(|g| (fnv1a(g.as_bytes()) % buckets as u64) as usize).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CharNgramConfig {
    pub buckets: usize,
    pub ngram_dim: usize,
    pub ngram_epochs: usize,
    pub ngram_lr: f64,
    pub ngram_class_weighting: ClassWeighting,
}

impl Default for CharNgramConfig {
    fn default() -> Self {
        Self { buckets: 100_000, ngram_dim: 100, ngram_epochs: 100, ngram_lr: 0.1, ngram_class_weighting: ClassWeighting::Balanced }
    }
}

impl CharNgramConfig {
    pub fn validate(&self) -> Result<()> {
        if self.buckets == 0 || self.ngram_dim == 0 || self.ngram_epochs == 0 {
            return Err(Error::invalid("bucket count, dimension and epochs must be positive"));
        }
        if self.ngram_lr.is_nan() || self.ngram_lr <= 0.0 {
            return Err(Error::invalid("learning rate must be positive"));
        }
        Ok(())
    }
}

impl Configurable for CharNgramConfig {
    fn set(&mut self, key: &str, value: &str, line: usize) -> Result<bool> {
        match key {
            "buckets" => self.buckets = parse_value(key, value, line)?,
            "ngram_dim" => self.ngram_dim = parse_value(key, value, line)?,
            "ngram_epochs" => self.ngram_epochs = parse_value(key, value, line)?,
            "ngram_lr" => self.ngram_lr = parse_value(key, value, line)?,
            "ngram_class_weighting" => self.ngram_class_weighting = parse_value(key, value, line)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("buckets", self.buckets.to_string()),
            ("ngram_dim", self.ngram_dim.to_string()),
            ("ngram_epochs", self.ngram_epochs.to_string()),
            ("ngram_lr", self.ngram_lr.to_string()),
            ("ngram_class_weighting", self.ngram_class_weighting.to_string()),
        ]
    }
}

/// Bucket counts of one document, normalized so the weights sum to 1.
#[derive(Clone, Debug, PartialEq)]
pub struct BucketBag {
    pub buckets: Vec<usize>,
    pub weights: Vec<f64>,
}

impl BucketBag {
    pub fn from_tokens(tokens: &[String], buckets: usize) -> Option<Self> {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        let mut cache: HashMap<&str, Vec<usize>> = HashMap::new();
        for t in tokens {
            let ids = cache.entry(t.as_str()).or_insert_with(|| ngram_buckets(t, buckets));
            for &b in ids.iter() {
                *counts.entry(b).or_default() += 1;
            }
        }
        let total: usize = counts.values().sum();
        if total == 0 {
            return None;
        }
        Some(Self {
            buckets: counts.keys().copied().collect(),
            weights: counts.values().map(|&c| c as f64 / total as f64).collect(),
        })
    }
}

/// Mean-of-bucket-embeddings document vector followed by a two-way softmax
/// (index 0 control, index 1 diagnosed).
#[derive(Clone, Debug, PartialEq)]
pub struct CharNgramClassifier {
    pub config: CharNgramConfig,
    /// `[buckets × dim]`, row-major.
    pub embeddings: Vec<f64>,
    /// `[2 × dim]`, row-major.
    pub output: Vec<f64>,
}

pub const CHAR_NGRAM_KIND: &str = "charngram";

impl CharNgramClassifier {
    /// Embeddings uniform in `±1/dim`, output weights zero.
    pub fn new(config: CharNgramConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / config.ngram_dim as f64;
        let embeddings = (0..config.buckets * config.ngram_dim).map(|_| rng.random_range(-bound..=bound)).collect();
        let output = vec![0.0; 2 * config.ngram_dim];
        Ok(Self { config, embeddings, output })
    }

    fn hidden(&self, bag: &BucketBag) -> Vec<f64> {
        let d = self.config.ngram_dim;
        let mut h = vec![0.0; d];
        for (&b, &w) in bag.buckets.iter().zip(&bag.weights) {
            for (hk, e) in h.iter_mut().zip(&self.embeddings[b * d..(b + 1) * d]) {
                *hk += w * e;
            }
        }
        h
    }

    fn class_probs(&self, h: &[f64]) -> [f64; 2] {
        let d = self.config.ngram_dim;
        let z0: f64 = self.output[..d].iter().zip(h).map(|(a, b)| a * b).sum();
        let z1: f64 = self.output[d..].iter().zip(h).map(|(a, b)| a * b).sum();
        let p1 = sigmoid(z1 - z0);
        [1.0 - p1, p1]
    }

    pub fn bag(&self, tokens: &[String]) -> Option<BucketBag> {
        BucketBag::from_tokens(tokens, self.config.buckets)
    }

    /// Probability of the diagnosed class.
    pub fn probability(&self, bag: &BucketBag) -> f64 {
        self.class_probs(&self.hidden(bag))[1]
    }

    /// Cross-entropy of one example.
    pub fn loss(&self, bag: &BucketBag, positive: bool) -> f64 {
        let p = self.class_probs(&self.hidden(bag));
        -p[usize::from(positive)].max(f64::MIN_POSITIVE).ln()
    }

    /// Probability ≥ 0.5 is diagnosed; documents without any n-gram get 0.5.
    pub fn predict(&self, tokens: &[String]) -> (Label, f64) {
        let p = self.bag(tokens).map_or(0.5, |b| self.probability(&b));
        (Label::from_positive(p >= 0.5), p)
    }

    fn sgd_step(&mut self, bag: &BucketBag, positive: bool, lr: f64, weight: f64) {
        let d = self.config.ngram_dim;
        let h = self.hidden(bag);
        let p = self.class_probs(&h);
        let target = [f64::from(u8::from(!positive)), f64::from(u8::from(positive))];
        let delta = [weight * (p[0] - target[0]), weight * (p[1] - target[1])];
        let (out0, out1) = self.output.split_at(d);
        let dh: Vec<f64> = out0.iter().zip(out1).map(|(a, b)| delta[0] * a + delta[1] * b).collect();
        for (row, dc) in self.output.chunks_mut(d).zip(delta) {
            for (o, hk) in row.iter_mut().zip(&h) {
                *o -= lr * dc * hk;
            }
        }
        for (&b, &w) in bag.buckets.iter().zip(&bag.weights) {
            for (e, g) in self.embeddings[b * d..(b + 1) * d].iter_mut().zip(&dh) {
                *e -= lr * w * g;
            }
        }
    }

    /// SGD over shuffled documents with the rate decaying linearly from
    /// `ngram_lr` to 0 across all updates. Empty documents are skipped.
    pub fn train(config: CharNgramConfig, docs: &[Vec<String>], labels: &[bool], seed: u64) -> Result<Self> {
        if docs.len() != labels.len() {
            return Err(Error::ShapeMismatch { op: "train_char_ngram", left: vec![docs.len()], right: vec![labels.len()] });
        }
        let mut model = Self::new(config, seed)?;
        let mut examples = Vec::with_capacity(docs.len());
        for (i, (doc, &y)) in docs.iter().zip(labels).enumerate() {
            match model.bag(doc) {
                Some(bag) => examples.push((bag, y)),
                None => log::warn!("skipping empty document {i}"),
            }
        }
        if examples.is_empty() {
            return Err(Error::Empty("char n-gram training corpus"));
        }
        let positives: Vec<bool> = examples.iter().map(|e| e.1).collect();
        let weights = model.config.ngram_class_weighting.per_example(&positives);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6e67_7261_6d73);
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let total = (model.config.ngram_epochs * examples.len()) as f64;
        let mut done = 0usize;
        for _ in 0..model.config.ngram_epochs {
            order.shuffle(&mut rng);
            for &i in &order {
                let lr = model.config.ngram_lr * (1.0 - done as f64 / total);
                model.sgd_step(&examples[i].0, examples[i].1, lr, weights[i]);
                done += 1;
            }
        }
        Ok(model)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(CHAR_NGRAM_KIND);
        for (k, v) in self.config.to_pairs() {
            c.set_meta(k, v);
        }
        c.tensors.push(crate::checkpoint::NamedTensor {
            name: "embeddings".into(),
            shape: vec![self.config.buckets, self.config.ngram_dim],
            data: self.embeddings.clone(),
        });
        c.tensors.push(crate::checkpoint::NamedTensor {
            name: "output".into(),
            shape: vec![2, self.config.ngram_dim],
            data: self.output.clone(),
        });
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        c.expect_kind(CHAR_NGRAM_KIND)?;
        let mut config = CharNgramConfig::default();
        for (k, v) in &c.meta {
            if !config.set(k, v, 0)? {
                return Err(Error::Checkpoint(format!("unknown char n-gram key {k:?}")));
            }
        }
        config.validate()?;
        let embeddings = c.tensor("embeddings")?;
        let output = c.tensor("output")?;
        if embeddings.shape != [config.buckets, config.ngram_dim] || output.shape != [2, config.ngram_dim] {
            return Err(Error::Checkpoint("char n-gram tensor shapes disagree with the config".into()));
        }
        Ok(Self { config, embeddings: embeddings.data.clone(), output: output.data.clone() })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
