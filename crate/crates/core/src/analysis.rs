//! Which words the HAN attends to.
//!
//! Each post contributes its two most attended words: one bigram when they
//! are adjacent, two unigrams otherwise. Counting these across users gives a
//! ranked list that can be grouped under a user-supplied category lexicon.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Label, Split};
use crate::error::{Error, Result};
use crate::han::{AttentionTrace, PostTrace};

pub const TOP_K: usize = 100;
pub const OTHER_CATEGORY: &str = "Other";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NgramKind {
    Unigram,
    Bigram,
}

impl fmt::Display for NgramKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NgramKind::Unigram => "unigram",
            NgramKind::Bigram => "bigram",
        })
    }
}

/// A unigram or a space-joined bigram in text order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Ngram {
    pub text: String,
    pub kind: NgramKind,
}

impl Ngram {
    fn unigram(t: &str) -> Self {
        Self { text: t.to_string(), kind: NgramKind::Unigram }
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.text.split(' ')
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NgramCount {
    pub ngram: Ngram,
    pub count: usize,
}

/// The two highest-weight positions of a post (ties favour the earlier
/// position), as one bigram when adjacent and two unigrams in text order
/// otherwise. A one-token post yields a single unigram.
pub fn top2(post: &PostTrace) -> Result<Vec<Ngram>> {
    if post.tokens.is_empty() {
        return Err(Error::Empty("post trace"));
    }
    if post.tokens.len() != post.word_weights.len() {
        return Err(Error::ShapeMismatch {
            op: "top2",
            left: vec![post.tokens.len()],
            right: vec![post.word_weights.len()],
        });
    }
    if post.tokens.len() == 1 {
        return Ok(vec![Ngram::unigram(&post.tokens[0])]);
    }
    let mut order: Vec<usize> = (0..post.tokens.len()).collect();
    order.sort_by(|&a, &b| post.word_weights[b].total_cmp(&post.word_weights[a]).then(a.cmp(&b)));
    let (i, j) = (order[0].min(order[1]), order[0].max(order[1]));
    if j == i + 1 {
        Ok(vec![Ngram { text: format!("{} {}", post.tokens[i], post.tokens[j]), kind: NgramKind::Bigram }])
    } else {
        Ok(vec![Ngram::unigram(&post.tokens[i]), Ngram::unigram(&post.tokens[j])])
    }
}

/// Which users' posts are analyzed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Scope {
    /// Test users the model predicted diagnosed. Traces without a split
    /// count as test users.
    #[default]
    PredictedDiagnosedTest,
    /// Every user the model predicted diagnosed.
    PredictedDiagnosed,
    /// Every user whose gold label is diagnosed.
    Diagnosed,
    All,
}

impl Scope {
    pub fn includes(self, t: &AttentionTrace) -> bool {
        let predicted = t.predicted == Some(Label::Diagnosed);
        match self {
            Scope::PredictedDiagnosedTest => predicted && matches!(t.split, None | Some(Split::Test)),
            Scope::PredictedDiagnosed => predicted,
            Scope::Diagnosed => t.label == Some(Label::Diagnosed),
            Scope::All => true,
        }
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "predicted-test" => Ok(Scope::PredictedDiagnosedTest),
            "predicted" => Ok(Scope::PredictedDiagnosed),
            "diagnosed" => Ok(Scope::Diagnosed),
            "all" => Ok(Scope::All),
            other => Err(Error::invalid(format!(
                "unknown scope {other:?} (expected predicted-test, predicted, diagnosed or all)"
            ))),
        }
    }
}

/// Occurrence counts of every top-2 n-gram over the in-scope users.
pub fn count_ngrams(traces: &[AttentionTrace], scope: Scope) -> Result<BTreeMap<Ngram, usize>> {
    let mut counts = BTreeMap::new();
    for t in traces.iter().filter(|t| scope.includes(t)) {
        for post in &t.posts {
            for g in top2(post)? {
                *counts.entry(g).or_insert(0) += 1;
            }
        }
    }
    Ok(counts)
}

/// Count descending, then n-gram text ascending; at most `limit` entries.
pub fn rank(counts: BTreeMap<Ngram, usize>, limit: usize) -> Vec<NgramCount> {
    let mut all: Vec<NgramCount> = counts.into_iter().map(|(ngram, count)| NgramCount { ngram, count }).collect();
    all.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.ngram.text.cmp(&b.ngram.text)));
    all.truncate(limit);
    all
}

/// The top [`TOP_K`] unigrams and bigrams, ranked jointly.
pub fn accumulate(traces: &[AttentionTrace], scope: Scope) -> Result<Vec<NgramCount>> {
    if traces.is_empty() {
        return Err(Error::Empty("trace set"));
    }
    Ok(rank(count_ngrams(traces, scope)?, TOP_K))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Pattern {
    Exact(String),
    Prefix(String),
}

impl Pattern {
    pub fn parse(s: &str) -> Self {
        match s.strip_suffix('*') {
            Some(p) => Pattern::Prefix(p.to_lowercase()),
            None => Pattern::Exact(s.to_lowercase()),
        }
    }

    pub fn matches(&self, token: &str) -> bool {
        match self {
            Pattern::Exact(t) => t == token,
            Pattern::Prefix(p) => token.starts_with(p.as_str()),
        }
    }
}

/// Ordered `(category, patterns)` pairs read from `name: pat, pat*` lines.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CategoryLexicon {
    pub categories: Vec<(String, Vec<Pattern>)>,
}

impl CategoryLexicon {
    pub fn parse(text: &str) -> Result<Self> {
        let mut categories: Vec<(String, Vec<Pattern>)> = Vec::new();
        let mut names = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Parse { line: i + 1, message };
            let (name, pats) = line.split_once(':').ok_or_else(|| err(format!("expected `name: patterns`, got {line:?}")))?;
            let name = name.trim();
            if name.is_empty() {
                return Err(err("empty category name".into()));
            }
            if !names.insert(name.to_string()) {
                return Err(err(format!("duplicate category {name:?}")));
            }
            let pieces: Vec<&str> = pats.split(',').map(str::trim).collect();
            if pieces.iter().any(|p| p.is_empty()) {
                return Err(err(format!("category {name:?} has an empty pattern")));
            }
            categories.push((name.to_string(), pieces.into_iter().map(Pattern::parse).collect()));
        }
        Ok(Self { categories })
    }

    /// Categories with a pattern matching the unigram, or either token of
    /// the bigram. Empty when nothing matches.
    pub fn categories_of(&self, ngram: &Ngram) -> Vec<&str> {
        self.categories
            .iter()
            .filter(|(_, pats)| ngram.tokens().any(|t| pats.iter().any(|p| p.matches(t))))
            .map(|(n, _)| n.as_str())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CategoryRow {
    pub category: String,
    pub ngrams: Vec<NgramCount>,
}

impl CategoryRow {
    pub fn of_kind(&self, kind: NgramKind) -> impl Iterator<Item = &NgramCount> {
        self.ngrams.iter().filter(move |n| n.ngram.kind == kind)
    }
}

/// Lexicon categories in file order, then [`OTHER_CATEGORY`] for n-grams no
/// category matched. Rows keep the ranking order and may be empty.
pub fn categorize(ranked: &[NgramCount], lexicon: &CategoryLexicon) -> Vec<CategoryRow> {
    let mut rows: Vec<CategoryRow> = lexicon
        .categories
        .iter()
        .map(|(n, _)| CategoryRow { category: n.clone(), ngrams: Vec::new() })
        .collect();
    let mut other = CategoryRow { category: OTHER_CATEGORY.to_string(), ngrams: Vec::new() };
    for n in ranked {
        let cats = lexicon.categories_of(&n.ngram);
        if cats.is_empty() {
            other.ngrams.push(n.clone());
        }
        for c in cats {
            if let Some(row) = rows.iter_mut().find(|r| r.category == c) {
                row.ngrams.push(n.clone());
            }
        }
    }
    rows.push(other);
    rows
}

/// CSV with one row per ranked n-gram; categories are `;`-joined.
pub fn write_report_csv<W: Write>(w: W, ranked: &[NgramCount], lexicon: &CategoryLexicon) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::invalid(format!("CSV output: {e}"));
    out.write_record(["rank", "ngram", "kind", "count", "categories"]).map_err(csv_err)?;
    for (i, n) in ranked.iter().enumerate() {
        let cats = lexicon.categories_of(&n.ngram);
        let cats = if cats.is_empty() { OTHER_CATEGORY.to_string() } else { cats.join(";") };
        out.write_record([
            (i + 1).to_string(),
            n.ngram.text.clone(),
            n.ngram.kind.to_string(),
            n.count.to_string(),
            cats,
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Per-category unigram and bigram columns, each entry `text (count)`.
pub fn category_table(rows: &[CategoryRow]) -> String {
    let fmt_list = |row: &CategoryRow, kind| {
        row.of_kind(kind).map(|n| format!("{} ({})", n.ngram.text, n.count)).collect::<Vec<_>>().join(", ")
    };
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.category.clone(), fmt_list(r, NgramKind::Unigram), fmt_list(r, NgramKind::Bigram)])
        .collect();
    crate::experiment::format_table(&["category", "unigrams", "bigrams"], &body)
}

pub fn ranking_table(ranked: &[NgramCount]) -> String {
    let body: Vec<Vec<String>> = ranked
        .iter()
        .enumerate()
        .map(|(i, n)| vec![(i + 1).to_string(), n.ngram.text.clone(), n.ngram.kind.to_string(), n.count.to_string()])
        .collect();
    crate::experiment::format_table(&["rank", "ngram", "kind", "count"], &body)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn post(tokens: &[&str], w: &[f64]) -> PostTrace {
        PostTrace { tokens: tokens.iter().map(|s| s.to_string()).collect(), word_weights: w.to_vec() }
    }

    fn texts(g: Vec<Ngram>) -> Vec<(String, NgramKind)> {
        g.into_iter().map(|n| (n.text, n.kind)).collect()
    }

    #[test]
    fn top2_cases() {
        use NgramKind::*;
        assert_eq!(texts(top2(&post(&["a", "b", "c"], &[0.1, 0.5, 0.4])).unwrap()), vec![("b c".into(), Bigram)]);
        assert_eq!(
            texts(top2(&post(&["a", "b", "c"], &[0.5, 0.1, 0.4])).unwrap()),
            vec![("a".into(), Unigram), ("c".into(), Unigram)]
        );
        assert_eq!(texts(top2(&post(&["a"], &[1.0])).unwrap()), vec![("a".into(), Unigram)]);
        assert!(top2(&post(&[], &[])).is_err());
    }

    #[test]
    fn top2_ties_prefer_earlier_positions() {
        let g = top2(&post(&["a", "b", "c", "d"], &[0.25; 4])).unwrap();
        assert_eq!(g[0].text, "a b");
        let g = top2(&post(&["a", "b", "c", "d"], &[0.2, 0.1, 0.2, 0.5])).unwrap();
        assert_eq!(g[0].text, "a");
        assert_eq!(g[1].text, "d");
    }

    fn trace(posts: Vec<PostTrace>) -> AttentionTrace {
        AttentionTrace {
            user_id: "u".into(),
            label: Some(Label::Diagnosed),
            predicted: Some(Label::Diagnosed),
            probability: None,
            split: Some(Split::Test),
            post_weights: vec![1.0 / posts.len() as f64; posts.len()],
            posts,
        }
    }

    #[test]
    fn accumulate_counts() {
        let t = trace(vec![post(&["x"], &[1.0])]);
        assert_eq!(accumulate(&[t], Scope::default()).unwrap().len(), 1);
        let t = trace(vec![post(&["a", "b", "c"], &[0.1, 0.5, 0.4]), post(&["b", "c"], &[0.6, 0.4])]);
        let r = accumulate(std::slice::from_ref(&t), Scope::default()).unwrap();
        assert_eq!(r[0].ngram.text, "b c");
        assert_eq!(r[0].count, 2);
        let mut control = t;
        control.predicted = Some(Label::Control);
        assert!(accumulate(&[control], Scope::default()).unwrap().is_empty());
        assert!(accumulate(&[], Scope::All).is_err());
    }

    #[test]
    fn lexicon_parse_and_match() {
        let lex = CategoryLexicon::parse("# comment\npronoun: i, my, her\nsocial: friend*\n").unwrap();
        let uni = |t: &str| Ngram::unigram(t);
        assert_eq!(lex.categories_of(&uni("my")), vec!["pronoun"]);
        assert_eq!(lex.categories_of(&uni("friends")), vec!["social"]);
        assert!(lex.categories_of(&uni("zzz")).is_empty());
        let bi = Ngram { text: "my friend".into(), kind: NgramKind::Bigram };
        assert_eq!(lex.categories_of(&bi), vec!["pronoun", "social"]);
        let rows = categorize(&[NgramCount { ngram: uni("zzz"), count: 1 }], &lex);
        assert_eq!(rows.last().unwrap().category, OTHER_CATEGORY);
        assert_eq!(rows.last().unwrap().ngrams.len(), 1);
    }

    #[test]
    fn lexicon_errors_carry_line() {
        for (text, line) in [("a: x\nbroken\n", 2), ("a: x\na: y\n", 2), ("\n: x\n", 2), ("a: x,\n", 1)] {
            match CategoryLexicon::parse(text) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }
}
