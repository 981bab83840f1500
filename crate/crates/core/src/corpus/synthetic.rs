//! Deterministic synthetic corpora with a planted lexical signal.
//!
//! Control users draw every token from a base unigram distribution.
//! Diagnosed users draw from the mixture `(1 − δ)·base + δ·uniform(lexicon)`,
//! so the signal is spread evenly over all of their posts. In the base
//! distribution the lexicon words share `signal_base_mass` uniformly and the
//! remaining filler words follow a Zipf law.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use super::{Label, UserRecord, CONTROLS_PER_DIAGNOSED};
use crate::config::{parse_list, parse_value, Configurable};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub condition: String,
    pub n_diagnosed: usize,
    pub controls_per_diagnosed: usize,
    pub posts_per_user_mean: f64,
    pub posts_per_user_std: f64,
    pub post_len_mean: f64,
    pub post_len_std: f64,
    /// Filler words plus lexicon words.
    pub vocab_size: usize,
    pub signal_lexicon: Vec<String>,
    /// Mixture weight δ of the lexicon in diagnosed users' text.
    pub signal_strength: f64,
    /// Total base-distribution probability of the lexicon words.
    pub signal_base_mass: f64,
    pub zipf_exponent: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            condition: "depression".into(),
            n_diagnosed: 200,
            controls_per_diagnosed: CONTROLS_PER_DIAGNOSED,
            posts_per_user_mean: 162.2,
            posts_per_user_std: 84.2,
            post_len_mean: 20.0,
            post_len_std: 8.0,
            vocab_size: 2000,
            signal_lexicon: ["hopeless", "tired", "alone", "therapist", "insomnia", "anxious", "worthless", "crying"]
                .map(String::from)
                .to_vec(),
            signal_strength: 0.3,
            signal_base_mass: 0.02,
            zipf_exponent: 1.0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.signal_strength) {
            return Err(Error::invalid(format!("signal_strength {} must lie in [0, 1)", self.signal_strength)));
        }
        if !(0.0..1.0).contains(&self.signal_base_mass) || self.signal_base_mass == 0.0 {
            return Err(Error::invalid("signal_base_mass must lie in (0, 1)"));
        }
        if self.signal_lexicon.is_empty() {
            return Err(Error::Empty("signal lexicon"));
        }
        if self.vocab_size <= self.signal_lexicon.len() {
            return Err(Error::invalid("vocab_size must exceed the lexicon size"));
        }
        if self.n_diagnosed == 0 || self.posts_per_user_mean < 1.0 || self.post_len_mean < 1.0 {
            return Err(Error::invalid("user count, post count and post length must be positive"));
        }
        if self.posts_per_user_std < 0.0 || self.post_len_std < 0.0 {
            return Err(Error::invalid("standard deviations must be non-negative"));
        }
        Ok(())
    }

    /// Probability that a single control token is a lexicon word.
    pub fn control_signal_rate(&self) -> f64 {
        self.signal_base_mass
    }

    /// Probability that a single diagnosed token is a lexicon word.
    pub fn diagnosed_signal_rate(&self) -> f64 {
        (1.0 - self.signal_strength) * self.signal_base_mass + self.signal_strength
    }

    /// Population F1 of the Bayes-optimal rule for users with exactly
    /// `tokens_per_user` tokens when a fraction `prevalence` is diagnosed.
    ///
    /// Lexicon words are uniform within the lexicon under both classes and
    /// the filler distribution is shared, so the number `K` of lexicon tokens
    /// is a sufficient statistic with `K ~ Binomial(N, q_class)`. The
    /// likelihood ratio is increasing in `K`, so the optimal rules are
    /// `K ≥ k`; the result is the best F1 over all `k`.
    pub fn bayes_optimal_f1(&self, tokens_per_user: usize, prevalence: f64) -> f64 {
        let tail_d = binomial_upper_tails(tokens_per_user, self.diagnosed_signal_rate());
        let tail_c = binomial_upper_tails(tokens_per_user, self.control_signal_rate());
        tail_d
            .iter()
            .zip(&tail_c)
            .map(|(&tpr, &fpr)| {
                let tp = prevalence * tpr;
                let denom = 2.0 * tp + (1.0 - prevalence) * fpr + prevalence * (1.0 - tpr);
                if denom == 0.0 {
                    0.0
                } else {
                    2.0 * tp / denom
                }
            })
            .fold(0.0, f64::max)
    }
}

/// `P(K ≥ k)` for `k = 0..=n`, `K ~ Binomial(n, q)`.
pub fn binomial_upper_tails(n: usize, q: f64) -> Vec<f64> {
    let mut log_pmf = Vec::with_capacity(n + 1);
    let mut lp = n as f64 * (-q).ln_1p();
    log_pmf.push(lp);
    for k in 0..n {
        lp += ((n - k) as f64 / (k + 1) as f64).ln() + q.ln() - (-q).ln_1p();
        log_pmf.push(lp);
    }
    let mut tails = vec![0.0; n + 2];
    for k in (0..=n).rev() {
        tails[k] = tails[k + 1] + log_pmf[k].exp();
    }
    tails.truncate(n + 1);
    tails
}

impl Configurable for SyntheticConfig {
    fn set(&mut self, key: &str, value: &str, line: usize) -> Result<bool> {
        match key {
            "condition" => self.condition = value.to_string(),
            "n_diagnosed" => self.n_diagnosed = parse_value(key, value, line)?,
            "controls_per_diagnosed" => self.controls_per_diagnosed = parse_value(key, value, line)?,
            "posts_per_user_mean" => self.posts_per_user_mean = parse_value(key, value, line)?,
            "posts_per_user_std" => self.posts_per_user_std = parse_value(key, value, line)?,
            "post_len_mean" => self.post_len_mean = parse_value(key, value, line)?,
            "post_len_std" => self.post_len_std = parse_value(key, value, line)?,
            "vocab_size" => self.vocab_size = parse_value(key, value, line)?,
            "signal_lexicon" => self.signal_lexicon = parse_list(key, value, line)?,
            "signal_strength" => self.signal_strength = parse_value(key, value, line)?,
            "signal_base_mass" => self.signal_base_mass = parse_value(key, value, line)?,
            "zipf_exponent" => self.zipf_exponent = parse_value(key, value, line)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("condition", self.condition.clone()),
            ("n_diagnosed", self.n_diagnosed.to_string()),
            ("controls_per_diagnosed", self.controls_per_diagnosed.to_string()),
            ("posts_per_user_mean", self.posts_per_user_mean.to_string()),
            ("posts_per_user_std", self.posts_per_user_std.to_string()),
            ("post_len_mean", self.post_len_mean.to_string()),
            ("post_len_std", self.post_len_std.to_string()),
            ("vocab_size", self.vocab_size.to_string()),
            ("signal_lexicon", self.signal_lexicon.join(",")),
            ("signal_strength", self.signal_strength.to_string()),
            ("signal_base_mass", self.signal_base_mass.to_string()),
            ("zipf_exponent", self.zipf_exponent.to_string()),
        ]
    }
}

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];

/// Filler word `i`: a unique consonant-vowel syllable string of at least two
/// syllables (bijective base-70 numbering of syllables).
fn filler_word(i: usize) -> String {
    let base = ONSETS.len() * VOWELS.len();
    let mut n = i + base + 1;
    let mut syllables = Vec::new();
    while n > 0 {
        n -= 1;
        let s = n % base;
        syllables.push(format!("{}{}", ONSETS[s / VOWELS.len()], VOWELS[s % VOWELS.len()]));
        n /= base;
    }
    syllables.reverse();
    syllables.concat()
}

struct Sampler {
    words: Vec<String>,
    base: WeightedIndex<f64>,
    lexicon_ids: Vec<usize>,
}

impl Sampler {
    fn new(cfg: &SyntheticConfig) -> Result<Self> {
        let lexicon = &cfg.signal_lexicon;
        let n_filler = cfg.vocab_size - lexicon.len();
        let mut words = Vec::with_capacity(cfg.vocab_size);
        let mut i = 0;
        while words.len() < n_filler {
            let w = filler_word(i);
            i += 1;
            if !lexicon.contains(&w) {
                words.push(w);
            }
        }
        let zipf: Vec<f64> = (1..=n_filler).map(|r| 1.0 / (r as f64).powf(cfg.zipf_exponent)).collect();
        let zipf_total: f64 = zipf.iter().sum();
        let mut weights: Vec<f64> = zipf.iter().map(|w| w / zipf_total * (1.0 - cfg.signal_base_mass)).collect();
        let lexicon_ids = (0..lexicon.len()).map(|k| n_filler + k).collect();
        for w in lexicon {
            words.push(w.clone());
            weights.push(cfg.signal_base_mass / lexicon.len() as f64);
        }
        let base = WeightedIndex::new(&weights).map_err(|e| Error::invalid(e.to_string()))?;
        Ok(Self { words, base, lexicon_ids })
    }

    fn token<R: Rng>(&self, rng: &mut R, signal: f64) -> &str {
        let id = if signal > 0.0 && rng.random::<f64>() < signal {
            self.lexicon_ids[rng.random_range(0..self.lexicon_ids.len())]
        } else {
            self.base.sample(rng)
        };
        &self.words[id]
    }
}

fn draw_count<R: Rng>(rng: &mut R, dist: &Normal<f64>) -> usize {
    dist.sample(rng).round().max(1.0) as usize
}

/// Generates `n_diagnosed` diagnosed users followed by
/// `n_diagnosed × controls_per_diagnosed` controls. Output is a pure function
/// of `(config, seed)`.
pub fn generate_synthetic(cfg: &SyntheticConfig, seed: u64) -> Result<Vec<UserRecord>> {
    cfg.validate()?;
    let sampler = Sampler::new(cfg)?;
    let posts_dist = Normal::new(cfg.posts_per_user_mean, cfg.posts_per_user_std)
        .map_err(|e| Error::invalid(e.to_string()))?;
    let len_dist = Normal::new(cfg.post_len_mean, cfg.post_len_std).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let n_controls = cfg.n_diagnosed * cfg.controls_per_diagnosed;
    let mut users = Vec::with_capacity(cfg.n_diagnosed + n_controls);
    let plan = (0..cfg.n_diagnosed)
        .map(|i| (format!("d{i:05}"), Label::Diagnosed))
        .chain((0..n_controls).map(|i| (format!("c{i:06}"), Label::Control)));
    for (user_id, label) in plan {
        let signal = if label == Label::Diagnosed { cfg.signal_strength } else { 0.0 };
        let n_posts = draw_count(&mut rng, &posts_dist);
        let posts = (0..n_posts)
            .map(|_| {
                let len = draw_count(&mut rng, &len_dist);
                let mut text = String::new();
                for k in 0..len {
                    let tok = sampler.token(&mut rng, signal);
                    if k == 0 {
                        let mut chars = tok.chars();
                        if let Some(c) = chars.next() {
                            text.extend(c.to_uppercase());
                            text.push_str(chars.as_str());
                        }
                    } else {
                        text.push(' ');
                        text.push_str(tok);
                    }
                }
                text.push('.');
                text
            })
            .collect();
        users.push(UserRecord {
            user_id,
            label,
            condition: (label == Label::Diagnosed).then(|| cfg.condition.clone()),
            posts,
            extra: Default::default(),
        });
    }
    Ok(users)
}
