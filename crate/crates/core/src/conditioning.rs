//! Two-level machine taxonomy and one-hot condition encoding.
//!
//! Level one is the machine type, level two the model ID. The ID vocabulary
//! is global across types, so the condition `[C_i | C_ij]` identifies a
//! (type, id) pair uniquely when both levels are active.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Scalar;

/// Which taxonomy levels are appended to the model input and latent vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionMode {
    /// No conditioning; the model degenerates to a plain VAE.
    None,
    /// Machine type only (C_i).
    Level1Only,
    /// Model ID only (C_ij).
    Level2Only,
    /// Both levels concatenated (C = [C_i, C_ij]).
    Both,
}

impl ConditionMode {
    pub fn uses_level1(self) -> bool {
        matches!(self, ConditionMode::Level1Only | ConditionMode::Both)
    }

    pub fn uses_level2(self) -> bool {
        matches!(self, ConditionMode::Level2Only | ConditionMode::Both)
    }
}

impl fmt::Display for ConditionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ConditionMode::None => "none",
            ConditionMode::Level1Only => "level1",
            ConditionMode::Level2Only => "level2",
            ConditionMode::Both => "both",
        };
        f.write_str(s)
    }
}

impl FromStr for ConditionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ConditionMode::None),
            "level1" => Ok(ConditionMode::Level1Only),
            "level2" => Ok(ConditionMode::Level2Only),
            "both" => Ok(ConditionMode::Both),
            other => Err(Error::Config(format!(
                "unknown condition mode {other:?} (expected none|level1|level2|both)"
            ))),
        }
    }
}

/// Ordered label vocabulary for both taxonomy levels plus the observed
/// (type, id) pairs. Labels are sorted lexicographically at construction,
/// so index assignment is stable across runs and machines.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Taxonomy {
    level1_labels: Vec<String>,
    level2_labels: Vec<String>,
    pairs: Vec<(String, String)>,
}

impl Taxonomy {
    /// Builds from observed (machine type, model ID) pairs. Duplicates are
    /// fine; an empty iterator is an ingestion error.
    pub fn from_pairs<I, S1, S2>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S1, S2)>,
        S1: Into<String>,
        S2: Into<String>,
    {
        let mut observed: Vec<(String, String)> = pairs
            .into_iter()
            .map(|(t, i)| (t.into(), i.into()))
            .collect();
        observed.sort();
        observed.dedup();
        if observed.is_empty() {
            return Err(Error::Dataset("no (type, id) pairs found".into()));
        }
        let mut level1: Vec<String> = observed.iter().map(|(t, _)| t.clone()).collect();
        level1.sort();
        level1.dedup();
        let mut level2: Vec<String> = observed.iter().map(|(_, i)| i.clone()).collect();
        level2.sort();
        level2.dedup();
        Ok(Taxonomy {
            level1_labels: level1,
            level2_labels: level2,
            pairs: observed,
        })
    }

    /// Merge of two taxonomies, for training on one domain while reserving
    /// condition slots for another.
    pub fn union(&self, other: &Taxonomy) -> Result<Taxonomy> {
        Taxonomy::from_pairs(
            self.pairs
                .iter()
                .chain(&other.pairs)
                .map(|(t, i)| (t.clone(), i.clone())),
        )
    }

    pub fn level1_labels(&self) -> &[String] {
        &self.level1_labels
    }

    pub fn level2_labels(&self) -> &[String] {
        &self.level2_labels
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn level1_index(&self, label: &str) -> Result<usize> {
        self.level1_labels
            .binary_search_by(|l| l.as_str().cmp(label))
            .map_err(|_| Error::UnknownLabel {
                level: "machine type",
                label: label.into(),
            })
    }

    pub fn level2_index(&self, label: &str) -> Result<usize> {
        self.level2_labels
            .binary_search_by(|l| l.as_str().cmp(label))
            .map_err(|_| Error::UnknownLabel {
                level: "model id",
                label: label.into(),
            })
    }

    /// Length of the condition vector under `mode`. Depends only on the
    /// vocabulary sizes.
    pub fn cond_dim(&self, mode: ConditionMode) -> usize {
        let mut dim = 0;
        if mode.uses_level1() {
            dim += self.level1_labels.len();
        }
        if mode.uses_level2() {
            dim += self.level2_labels.len();
        }
        dim
    }

    /// One-hot condition `[C_i | C_ij]` restricted to the active levels.
    /// `ConditionMode::None` yields an empty vector.
    pub fn encode_condition<T: Scalar>(
        &self,
        mode: ConditionMode,
        type_label: &str,
        id_label: &str,
    ) -> Result<Vec<T>> {
        let mut v = vec![T::zero(); self.cond_dim(mode)];
        let mut offset = 0;
        if mode.uses_level1() {
            v[self.level1_index(type_label)?] = T::one();
            offset = self.level1_labels.len();
        }
        if mode.uses_level2() {
            v[offset + self.level2_index(id_label)?] = T::one();
        }
        Ok(v)
    }
}
