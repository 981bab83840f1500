//! Corpus records, JSON Lines ingestion, tokenization and vocabulary.
//!
//! A corpus file holds one user per line:
//!
//! ```text
//! {"user_id":"u1","label":"diagnosed","condition":"depression","posts":["...", "..."]}
//! ```
//!
//! Fields other than the four above are kept in [`UserRecord::extra`] and
//! written back unchanged.

mod sampling;
mod synthetic;
mod vocab;

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use sampling::{assign_splits, select_controls, Manifest, ManifestEntry, Split, SplitRatios, SubDataset};
pub use synthetic::{binomial_upper_tails, generate_synthetic, SyntheticConfig};
pub use vocab::{Vocabulary, PAD_ID, UNK_ID};

/// Nine controls are drawn for every diagnosed user.
pub const CONTROLS_PER_DIAGNOSED: usize = 9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Diagnosed,
    Control,
}

impl Label {
    pub fn is_positive(self) -> bool {
        self == Label::Diagnosed
    }

    pub fn from_positive(positive: bool) -> Self {
        if positive {
            Label::Diagnosed
        } else {
            Label::Control
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Diagnosed => "diagnosed",
            Label::Control => "control",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diagnosed" => Ok(Label::Diagnosed),
            "control" => Ok(Label::Control),
            other => Err(Error::invalid(format!("unknown label {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: String,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<String>,
    pub posts: Vec<String>,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl UserRecord {
    pub fn num_posts(&self) -> usize {
        self.posts.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.posts.is_empty() {
            return Err(Error::invalid(format!("user {} has no posts", self.user_id)));
        }
        match (self.label, &self.condition) {
            (Label::Diagnosed, None) => {
                Err(Error::invalid(format!("diagnosed user {} has no condition", self.user_id)))
            }
            (Label::Control, Some(c)) => {
                Err(Error::invalid(format!("control user {} carries condition {c:?}", self.user_id)))
            }
            _ => Ok(()),
        }
    }

    /// The first `min(n, num_posts)` posts, in order.
    pub fn truncate_posts(&self, n: usize) -> Result<UserRecord> {
        if n == 0 {
            return Err(Error::invalid("post cap must be at least 1"));
        }
        let mut out = self.clone();
        out.posts.truncate(n);
        Ok(out)
    }
}

/// Lower-cases, splits on whitespace and strips leading/trailing
/// non-alphanumeric characters from each piece. Empty pieces are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|piece| piece.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

pub fn read_corpus<R: BufRead>(reader: R) -> Result<Vec<UserRecord>> {
    let mut users = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let user: UserRecord =
            serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
        user.validate().map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
        users.push(user);
    }
    Ok(users)
}

pub fn write_corpus<W: Write>(mut writer: W, users: &[UserRecord]) -> Result<()> {
    for u in users {
        serde_json::to_writer(&mut writer, u)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn load_corpus(path: &std::path::Path) -> Result<Vec<UserRecord>> {
    let file = std::fs::File::open(path)?;
    read_corpus(std::io::BufReader::new(file))
}

pub fn save_corpus(path: &std::path::Path, users: &[UserRecord]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_corpus(std::io::BufWriter::new(file), users)
}

/// Diagnosed users of `condition` and the full control pool, in corpus order.
pub fn partition<'a>(users: &'a [UserRecord], condition: &str) -> (Vec<&'a UserRecord>, Vec<&'a UserRecord>) {
    let diagnosed =
        users.iter().filter(|u| u.label == Label::Diagnosed && u.condition.as_deref() == Some(condition)).collect();
    let controls = users.iter().filter(|u| u.label == Label::Control).collect();
    (diagnosed, controls)
}

/// All of a user's tokens, posts concatenated in order and lower-cased.
pub fn user_document(user: &UserRecord) -> Vec<String> {
    user.posts.iter().flat_map(|p| tokenize(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn user(id: &str, label: Label, posts: &[&str]) -> UserRecord {
        UserRecord {
            user_id: id.into(),
            label,
            condition: (label == Label::Diagnosed).then(|| "depression".to_string()),
            posts: posts.iter().map(|s| s.to_string()).collect(),
            extra: Default::default(),
        }
    }

    #[test]
    fn tokenize_rules() {
        assert_eq!(tokenize("I LOVE my Dog!"), vec!["i", "love", "my", "dog"]);
        assert!(tokenize("   ").is_empty());
        assert_eq!(tokenize("tl;dr"), vec!["tl;dr"]);
        assert_eq!(tokenize("... !!! (ok)"), vec!["ok"]);
    }

    #[test]
    fn user_document_concatenates_and_lowercases() {
        let u = user("u", Label::Control, &["A b", "C"]);
        assert_eq!(user_document(&u), vec!["a", "b", "c"]);
        let one = user("v", Label::Control, &["Just this"]);
        assert_eq!(user_document(&one), vec!["just", "this"]);
        let capped = user("w", Label::Control, &["A b", "C"]).truncate_posts(1).unwrap();
        assert_eq!(user_document(&capped), vec!["a", "b"]);
    }

    #[test]
    fn truncate_posts_keeps_prefix() {
        let posts: Vec<String> = (0..300).map(|i| format!("p{i}")).collect();
        let refs: Vec<&str> = posts.iter().map(String::as_str).collect();
        let u = user("u", Label::Control, &refs);
        let t = u.truncate_posts(250).unwrap();
        assert_eq!(t.posts, posts[..250].to_vec());
        assert_eq!(u.truncate_posts(400).unwrap(), u);
        assert_eq!(u.truncate_posts(1).unwrap().posts, vec!["p0"]);
        assert!(u.truncate_posts(0).is_err());
    }

    #[test]
    fn jsonl_preserves_unknown_fields() {
        let line = r#"{"user_id":"u1","label":"diagnosed","condition":"adhd","posts":["hi"],"subreddits":["a","b"],"score":3}"#;
        let users = read_corpus(line.as_bytes()).unwrap();
        assert_eq!(users[0].extra.len(), 2);
        let mut out = Vec::new();
        write_corpus(&mut out, &users).unwrap();
        let again = read_corpus(out.as_slice()).unwrap();
        assert_eq!(users, again);
    }

    #[test]
    fn rejects_label_condition_mismatch() {
        let bad = r#"{"user_id":"u1","label":"control","condition":"adhd","posts":["hi"]}"#;
        assert!(matches!(read_corpus(bad.as_bytes()), Err(Error::Parse { line: 1, .. })));
        let bad = r#"{"user_id":"u1","label":"diagnosed","posts":["hi"]}"#;
        assert!(read_corpus(bad.as_bytes()).is_err());
        let bad = r#"{"user_id":"u1","label":"control","posts":[]}"#;
        assert!(read_corpus(bad.as_bytes()).is_err());
    }
}
