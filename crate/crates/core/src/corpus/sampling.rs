//! Control-group resampling and stratified user-level splits.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Label, UserRecord};
use crate::error::{Error, Result};

// Keeps the split shuffle independent of the control draw for the same seed.
const SPLIT_STREAM: u64 = 0x5eed_5b17_u64;

/// One resampled binary task: diagnosed users plus their drawn controls.
///
/// `controls[k*i .. k*(i+1)]` are the `k` controls drawn for `diagnosed[i]`;
/// no control appears twice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubDataset {
    pub condition: String,
    pub seed: u64,
    pub diagnosed: Vec<String>,
    pub controls: Vec<String>,
}

/// Draws `per_diagnosed` controls for every diagnosed user, uniformly and
/// without replacement across the whole sub-dataset.
pub fn select_controls(
    condition: &str,
    diagnosed: &[&UserRecord],
    pool: &[&UserRecord],
    per_diagnosed: usize,
    seed: u64,
) -> Result<SubDataset> {
    if diagnosed.is_empty() {
        return Err(Error::Empty("diagnosed user list"));
    }
    let required = diagnosed.len() * per_diagnosed;
    if pool.len() < required {
        return Err(Error::InsufficientPool { required, available: pool.len() });
    }
    if let Some(u) = pool.iter().find(|u| u.label != Label::Control) {
        return Err(Error::invalid(format!("control pool contains non-control user {}", u.user_id)));
    }
    let mut ids = HashSet::new();
    for u in diagnosed.iter().chain(pool) {
        if !ids.insert(u.user_id.as_str()) {
            return Err(Error::invalid(format!("duplicate user id {}", u.user_id)));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, pool.len(), required);
    Ok(SubDataset {
        condition: condition.to_string(),
        seed,
        diagnosed: diagnosed.iter().map(|u| u.user_id.clone()).collect(),
        controls: picks.into_iter().map(|i| pool[i].user_id.clone()).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.8, dev: 0.1, test: 0.1 }
    }
}

impl SplitRatios {
    fn validate(&self) -> Result<()> {
        let parts = [self.train, self.dev, self.test];
        if parts.iter().any(|r| !(0.0..=1.0).contains(r)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("split ratios {parts:?} must be in [0, 1] and sum to 1")));
        }
        Ok(())
    }

    /// Train/dev/test sizes for `n` users; test takes the remainder.
    fn counts(&self, n: usize) -> [usize; 3] {
        let train = ((n as f64) * self.train).round() as usize;
        let dev = (((n as f64) * self.dev).round() as usize).min(n - train.min(n));
        let train = train.min(n);
        [train, dev, n - train - dev]
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub user_id: String,
    pub label: Label,
    pub split: Split,
}

/// A sub-dataset with its split assignment; the file written by `prepare`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<String>,
    pub condition: String,
    pub seed: u64,
    pub users: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.users.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split, label: Label) -> usize {
        self.entries(split).filter(|e| e.label == label).count()
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Stratified user-level split: each label's users are shuffled with `seed`
/// and cut by `ratios`. Every split must receive at least one user of each
/// label.
pub fn assign_splits(sub: &SubDataset, ratios: SplitRatios, seed: u64) -> Result<Manifest> {
    ratios.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SPLIT_STREAM);
    let mut users = Vec::with_capacity(sub.diagnosed.len() + sub.controls.len());
    for (label, ids) in [(Label::Diagnosed, &sub.diagnosed), (Label::Control, &sub.controls)] {
        let mut order: Vec<usize> = (0..ids.len()).collect();
        order.shuffle(&mut rng);
        let counts = ratios.counts(ids.len());
        let mut splits = vec![Split::Train; ids.len()];
        for (pos, &i) in order.iter().enumerate() {
            splits[i] = if pos < counts[0] {
                Split::Train
            } else if pos < counts[0] + counts[1] {
                Split::Dev
            } else {
                Split::Test
            };
        }
        for (split, n) in [Split::Train, Split::Dev, Split::Test].into_iter().zip(counts) {
            if n == 0 {
                return Err(Error::invalid(format!("{split} split would receive no {label} users")));
            }
        }
        users.extend(ids.iter().zip(splits).map(|(id, split)| ManifestEntry { user_id: id.clone(), label, split }));
    }
    Ok(Manifest { corpus: None, condition: sub.condition.clone(), seed: sub.seed, users })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn users(prefix: &str, label: Label, n: usize) -> Vec<UserRecord> {
        (0..n)
            .map(|i| UserRecord {
                user_id: format!("{prefix}{i}"),
                label,
                condition: (label == Label::Diagnosed).then(|| "depression".into()),
                posts: vec!["x".into()],
                extra: Default::default(),
            })
            .collect()
    }

    #[test]
    fn nine_distinct_controls_per_diagnosed() {
        let d = users("d", Label::Diagnosed, 10);
        let p = users("c", Label::Control, 90);
        let dr: Vec<_> = d.iter().collect();
        let pr: Vec<_> = p.iter().collect();
        let sub = select_controls("depression", &dr, &pr, 9, 1).unwrap();
        assert_eq!(sub.controls.len(), 90);
        let distinct: HashSet<_> = sub.controls.iter().collect();
        assert_eq!(distinct.len(), 90);
        assert_eq!(sub, select_controls("depression", &dr, &pr, 9, 1).unwrap());
    }

    #[test]
    fn small_pool_names_counts() {
        let d = users("d", Label::Diagnosed, 10);
        let p = users("c", Label::Control, 80);
        let dr: Vec<_> = d.iter().collect();
        let pr: Vec<_> = p.iter().collect();
        let err = select_controls("depression", &dr, &pr, 9, 1).unwrap_err();
        assert!(matches!(err, Error::InsufficientPool { required: 90, available: 80 }));
    }

    #[test]
    fn stratified_counts() {
        let sub = SubDataset {
            condition: "c".into(),
            seed: 3,
            diagnosed: (0..100).map(|i| format!("d{i}")).collect(),
            controls: (0..900).map(|i| format!("c{i}")).collect(),
        };
        let m = assign_splits(&sub, SplitRatios::default(), 3).unwrap();
        assert_eq!(m.count(Split::Train, Label::Diagnosed), 80);
        assert_eq!(m.count(Split::Dev, Label::Diagnosed), 10);
        assert_eq!(m.count(Split::Test, Label::Diagnosed), 10);
        assert_eq!(m.count(Split::Train, Label::Control), 720);
        assert_eq!(m.count(Split::Dev, Label::Control), 90);
        assert_eq!(m.count(Split::Test, Label::Control), 90);
        assert_eq!(m, assign_splits(&sub, SplitRatios::default(), 3).unwrap());
        let all = SplitRatios { train: 1.0, dev: 0.0, test: 0.0 };
        assert!(assign_splits(&sub, all, 3).is_err());
    }
}
